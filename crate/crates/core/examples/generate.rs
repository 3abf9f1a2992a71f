//! Print one generated bytecode module and one generated source program.

use mswasm::conformance::gen::{gen_module_seeded, GenConfig};
use mswasm::conformance::srcgen::{gen_src_seeded, SrcGenConfig};
use mswasm::print_module;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    println!("{}", print_module(&gen_module_seeded(seed, &GenConfig::default())));
    let (src, injected) = gen_src_seeded(seed, &SrcGenConfig::default());
    println!("\n// injected: {injected:?}\n{src}");
}

//! The same bytecode samples on the tagged and the baggy-bounds backend.

use mswasm::fixtures::MSWAT;
use mswasm::interp::Backend;
use mswasm::{parse_module, run, typecheck_module, RunConfig};

fn main() {
    println!("{:<10} {:<24} {:<24}", "sample", "tagged", "baggy");
    for (name, src) in MSWAT {
        let m = parse_module(src).unwrap();
        let outcome = |backend| {
            let cfg = RunConfig { backend, ..RunConfig::default() };
            format!("{:?}", run(typecheck_module(&m).unwrap(), &cfg).unwrap().outcome)
        };
        println!("{name:<10} {:<24} {:<24}", outcome(Backend::Tagged), outcome(Backend::Baggy));
    }
}

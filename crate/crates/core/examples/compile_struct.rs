//! Compile a C-subset program with a struct and run the bytecode.

use mswasm::compiler::{compile_src, CompileOptions};
use mswasm::tracerel::check_mswasm_ms;
use mswasm::{print_module, run, typecheck_module, RunConfig};

const SRC: &str = "
module {
  struct Pair { a: int, b: [int; 2] }

  fn main(x: int) -> int {
    var (p: ptr struct Pair);
    p = malloc(struct Pair);
    p.a := 40;
    (p.b + 1) := 2;
    *p.a + *(p.b + 1)
  }
  heap 16
}";

fn main() {
    let (_, m) = compile_src(SRC, &CompileOptions::default()).expect("compiles");
    println!("{}", print_module(&m));
    let r = run(typecheck_module(&m).unwrap(), &RunConfig::default()).unwrap();
    println!("outcome: {:?}", r.outcome);
    println!("events: {}, monitor: {:?}", r.trace.len(), check_mswasm_ms(&r.trace));
}

//! Parse bytecode text, typecheck it, and print the canonical form.

use mswasm::{parse_module, print_module, typecheck_module};

const SRC: &str = "
(module (segment 256) (heap 0)
  (func (local handle) (result i32)
    i32.const 16 new_segment set 0
    get 0 i32.const 7 i32.segstore   ;; store 7 at offset 0
    get 0 i32.segload
    get 0 segfree))";

fn main() {
    let m = parse_module(SRC).expect("parses");
    typecheck_module(&m).expect("typechecks");
    let printed = print_module(&m);
    println!("{printed}");
    assert_eq!(parse_module(&printed).unwrap(), m);
    println!("round trip ok");
}

//! A token copy into a fixed buffer: clean at capacity, trapping one past.

use mswasm::compiler::{compile_src, CompileOptions};
use mswasm::fixtures::{trim_uc, TRIM_CAPACITY};
use mswasm::{run, typecheck_module, Event, RunConfig};

fn main() {
    for len in [TRIM_CAPACITY, TRIM_CAPACITY + 1] {
        let (_, m) = compile_src(&trim_uc(len), &CompileOptions::default()).unwrap();
        let r = run(typecheck_module(&m).unwrap(), &RunConfig::default()).unwrap();
        let writes = r.trace.iter().filter(|e| matches!(e, Event::Write(..))).count();
        println!("token of {len}: {:?} after {writes} writes, last event {:?}", r.outcome, r.trace.last());
    }
}

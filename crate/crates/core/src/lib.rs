//! Memory-safe WebAssembly.
//!
//! This crate models a WebAssembly dialect whose heap is built from
//! *segments* reached only through unforgeable fat pointers called
//! *handles*, together with the machinery needed to check that claim on
//! concrete programs:
//!
//! - [`bytecode`]: modules, instructions, and an s-expression text format.
//! - [`typecheck`]: the stack type system; handles cannot be produced from
//!   raw linear-memory bytes.
//! - [`segmem`]: byte-precise tagged segment memory with a never-reusing id
//!   allocator (the "segments as vectors" backend).
//! - [`baggy`]: a weaker buddy-allocator backend with baggy bounds checks.
//! - [`interp`]: a small-step interpreter that emits memory events.
//! - [`monitor`]: a language-independent color/shade shadow-memory monitor.
//! - [`tracerel`]: maps interpreter traces onto monitor events.
//! - [`minic`]: a small C subset with a non-enforcing, provenance-annotated
//!   reference semantics.
//! - [`compiler`]: the C-subset to handle-based bytecode compiler.
//! - [`conformance`]: cross-language relations, differential runs, and
//!   program generators for property testing.
//!
//! Most capabilities have a runnable program under `examples/`.

pub mod baggy;
pub mod bench;
pub mod bytecode;
pub mod compiler;
pub mod conformance;
pub mod fixtures;
pub mod interp;
pub mod minic;
pub mod monitor;
pub mod segmem;
pub mod tracerel;
pub mod trap;
pub mod typecheck;

pub use bytecode::{parse_module, print_module, FuncDef, FuncType, Instr, ModuleDef, ValueType};
pub use interp::{run, Event, Outcome, RunConfig, Trace, Value};
pub use segmem::Handle;
pub use trap::Trap;
pub use typecheck::{typecheck_module, WellTyped};

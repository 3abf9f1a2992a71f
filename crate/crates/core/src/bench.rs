//! A fixed micro-benchmark suite run on both segment backends.
//!
//! Loops are written as self-recursive functions counting an i32 down to
//! zero, so `iters` is bounded by the interpreter's call-depth limit.

use std::time::Instant;

use serde::Serialize;

use crate::bytecode::{parse_module, ModuleDef};
use crate::interp::{run, Backend, Outcome, RunConfig, DEFAULT_MAX_DEPTH};
use crate::typecheck::typecheck_module;

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub name: &'static str,
    pub backend: Backend,
    pub ops: u64,
    pub secs: f64,
    pub ops_per_sec: f64,
}

/// Allocate and free a 32-byte segment per iteration.
fn churn(iters: u32) -> String {
    format!(
        "(module (segment 65536) (heap 0)
  (func i32.const {iters} call 1)
  (func (param i32) (local handle)
    get 0
    if (then
      i32.const 32 new_segment set 1
      get 1 segfree
      get 0 i32.const 1 i32.sub call 1)))"
    )
}

/// Store then load one i32 per iteration, walking up a segment.
fn sweep(iters: u32) -> String {
    let bytes = iters as u64 * 4;
    format!(
        "(module (segment {}) (heap 0)
  (func (local handle)
    i32.const {bytes} new_segment set 0
    i32.const {iters} get 0 call 1
    get 0 segfree)
  (func (param i32 handle) (local i32)
    get 0
    if (then
      get 1 get 0 i32.segstore
      get 1 i32.segload set 2
      get 0 i32.const 1 i32.sub
      get 1 i32.const 4 handle.add
      call 1)))",
        bytes + 64
    )
}

/// Two handle additions per iteration, away from the segment and back.
fn handle_walk(iters: u32) -> String {
    format!(
        "(module (segment 4096) (heap 0)
  (func (local handle)
    i32.const 64 new_segment set 0
    i32.const {iters} get 0 call 1)
  (func (param i32 handle)
    get 0
    if (then
      get 0 i32.const 1 i32.sub
      get 1 i32.const 8 handle.add i32.const -8 handle.add
      call 1)))"
    )
}

type Program = (&'static str, fn(u32) -> String, u64);

const SUITE: [Program; 3] = [
    ("alloc-free-churn", churn, 2),
    ("segload-segstore-sweep", sweep, 2),
    ("handle-add-walk", handle_walk, 2),
];

fn module(src: &str) -> ModuleDef {
    parse_module(src).expect("benchmark programs parse")
}

/// Runs every benchmark on both backends. `iters` is clamped below the
/// call-depth limit.
pub fn bench_suite(iters: u32) -> Vec<BenchResult> {
    let iters = iters.clamp(1, (DEFAULT_MAX_DEPTH - 8) as u32);
    let mut out = Vec::new();
    for (name, make, per_iter) in SUITE {
        let m = module(&make(iters));
        for backend in [Backend::Tagged, Backend::Baggy] {
            let wt = typecheck_module(&m).expect("benchmark programs typecheck");
            let cfg = RunConfig {
                backend,
                ..RunConfig::default()
            };
            let start = Instant::now();
            let r = run(wt, &cfg).expect("benchmark programs link");
            let secs = start.elapsed().as_secs_f64();
            assert!(
                matches!(r.outcome, Outcome::Returned(_)),
                "{name} on {backend:?}: {:?}",
                r.outcome
            );
            let ops = iters as u64 * per_iter;
            out.push(BenchResult {
                name,
                backend,
                ops,
                secs,
                ops_per_sec: ops as f64 / secs.max(1e-9),
            });
        }
    }
    out
}

//! Time the micro-suite on both backends.

use mswasm::bench::bench_suite;

fn main() {
    for r in bench_suite(20_000) {
        println!("{:<24} {:<7?} {:>12.0} ops/s", r.name, r.backend, r.ops_per_sec);
    }
}

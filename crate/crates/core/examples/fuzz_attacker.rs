//! Link random victims against random attacker contexts and check that
//! every run stays memory safe.

use mswasm::conformance::campaign::{fuzz_attackers, fuzz_modules, fuzz_sources};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let modules = fuzz_modules(200, seed, None);
    let linked = fuzz_attackers(50, 4, seed, None);
    let sources = fuzz_sources(200, seed, None);
    for (what, r) in [("modules", modules), ("linked", linked), ("sources", sources)] {
        println!(
            "{what:<8} {} cases: {} returned, {} trapped, {} failures",
            r.cases,
            r.outcomes.returned,
            r.outcomes.trapped,
            r.failures.len()
        );
    }
}

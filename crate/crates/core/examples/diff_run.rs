//! Run C-subset programs under the reference semantics and as compiled
//! code, and relate the two traces.

use mswasm::conformance::{diff_run, DiffConfig};
use mswasm::fixtures::{safe_uc, UNSAFE_UC};
use mswasm::minic::load_src;

fn main() {
    let progs = safe_uc()
        .into_iter()
        .chain(UNSAFE_UC.iter().map(|(n, s)| (n.to_string(), s.to_string())));
    for (name, src) in progs {
        let r = diff_run(&load_src(&src).unwrap(), &DiffConfig::default());
        println!(
            "{name:<18} {:<8} source {:?}, target {} events, compiled trace safe: {}",
            serde_json::to_string(&r.relation).unwrap(),
            r.src_ms,
            r.tgt_trace.len(),
            r.tgt_ms.is_safe()
        );
    }
}

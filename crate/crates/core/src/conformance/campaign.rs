//! Fuzzing campaigns over the generators.
//!
//! Each case derives its own seed from the campaign seed and its index, and
//! results are collected in index order, so a campaign's report does not
//! depend on how many worker threads ran it.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::gen::{fuzz_attacker, gen_module_seeded, gen_victim_seeded, GenConfig};
use super::srcgen::{gen_src_seeded, SrcGenConfig};
use super::{diff_run, enforce_check, Counterexample, DiffConfig, Relation};
use crate::bytecode::{print_module, ModuleDef};
use crate::compiler::compile_module;
use crate::interp::{link, run, trace_to_jsonl, Outcome, RunConfig};
use crate::minic::load_src;
use crate::tracerel::{check_mswasm_ms, MsVerdict};
use crate::typecheck::typecheck_module;

/// Seed of case `i` in a campaign seeded with `seed`.
pub fn case_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct Tally {
    pub returned: u64,
    pub trapped: u64,
    pub budget: u64,
}

impl Tally {
    fn add(&mut self, o: &Outcome) {
        match o {
            Outcome::Returned(_) => self.returned += 1,
            Outcome::Trapped(_) => self.trapped += 1,
            Outcome::Budget => self.budget += 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Failure {
    pub case: u64,
    pub seed: u64,
    pub reason: String,
    pub saved: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct CampaignReport {
    pub cases: u64,
    pub outcomes: Tally,
    /// Source programs whose run fell outside the checked fragment.
    pub unsupported: u64,
    pub failures: Vec<Failure>,
}

impl CampaignReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn merge(parts: Vec<(Option<Outcome>, bool, Option<Failure>)>) -> CampaignReport {
        let mut r = CampaignReport {
            cases: parts.len() as u64,
            ..Default::default()
        };
        for (o, unsupported, f) in parts {
            if let Some(o) = o {
                r.outcomes.add(&o);
            }
            r.unsupported += unsupported as u64;
            r.failures.extend(f);
        }
        r
    }
}

fn save_module(dir: Option<&Path>, name: &str, m: &ModuleDef, trace: &str) -> Option<PathBuf> {
    let dir = dir?;
    std::fs::create_dir_all(dir).ok()?;
    let path = dir.join(format!("{name}.mswat"));
    std::fs::write(&path, print_module(m)).ok()?;
    std::fs::write(dir.join(format!("{name}.jsonl")), trace).ok()?;
    Some(path)
}

/// Runs a whole module and checks its trace, returning the outcome or why
/// the case failed.
fn check_module(m: &ModuleDef, cfg: &RunConfig) -> Result<(Outcome, String), String> {
    let wt = typecheck_module(m).map_err(|e| format!("generated module is ill-typed: {e}"))?;
    let r = run(wt, cfg).map_err(|e| e.to_string())?;
    let jsonl = trace_to_jsonl(&r.trace);
    match check_mswasm_ms(&r.trace) {
        MsVerdict::Safe => Ok((r.outcome, jsonl)),
        v => Err(format!("unsafe trace: {}", serde_json::to_string(&v).unwrap_or_default())),
    }
}

/// Whole random modules must produce safe traces. Every other module also
/// uses the attack productions.
pub fn fuzz_modules(n: u64, seed: u64, out: Option<&Path>) -> CampaignReport {
    let parts = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = case_seed(seed, i);
            let cfg = GenConfig {
                attack: i % 2 == 1,
                ..GenConfig::default()
            };
            let m = gen_module_seeded(s, &cfg);
            match check_module(&m, &RunConfig::default()) {
                Ok((o, _)) => (Some(o), false, None),
                Err(reason) => {
                    let saved = save_module(out, &format!("module-{s:016x}"), &m, "");
                    (None, false, Some(Failure { case: i, seed: s, reason, saved }))
                }
            }
        })
        .collect();
    CampaignReport::merge(parts)
}

/// Victims with imports, each linked against `contexts` random attackers.
pub fn fuzz_attackers(victims: u64, contexts: u64, seed: u64, out: Option<&Path>) -> CampaignReport {
    let cfg = GenConfig::default();
    let parts = (0..victims * contexts)
        .into_par_iter()
        .map(|i| {
            let vs = case_seed(seed, i / contexts);
            let victim = gen_victim_seeded(vs, &cfg);
            let s = case_seed(vs, i % contexts);
            let ctx = fuzz_attacker(&victim, s);
            let fail = |reason: String, m: Option<&ModuleDef>| {
                let saved = m.and_then(|m| save_module(out, &format!("linked-{vs:016x}-{s:016x}"), m, ""));
                (None, false, Some(Failure { case: i, seed: s, reason, saved }))
            };
            let whole = match link(&victim, &ctx) {
                Ok(w) => w,
                Err(e) => return fail(format!("link failed: {e}"), None),
            };
            match check_module(&whole, &RunConfig::default()) {
                Ok((o, _)) => (Some(o), false, None),
                Err(reason) => fail(reason, Some(&whole)),
            }
        })
        .collect();
    CampaignReport::merge(parts)
}

/// Random source programs through the differential runner and the
/// enforcement check.
pub fn fuzz_sources(n: u64, seed: u64, out: Option<&Path>) -> CampaignReport {
    let cfg = SrcGenConfig::default();
    let diff = DiffConfig::default();
    let parts = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = case_seed(seed, i);
            let (src, _) = gen_src_seeded(s, &cfg);
            let m = load_src(&src).expect("generated programs load");
            let report = diff_run(&m, &diff);
            let unsupported = matches!(report.relation, Relation::Unsupported { .. });
            let tgt = report.tgt_outcome.clone();
            let reason = match (&report.relation, enforce_check(&m, &diff)) {
                (Relation::Diverged { index, reason }, _) => Some(format!("diverged at {index:?}: {reason}")),
                (_, Ok(v)) if !v.is_safe() => Some("compiled trace is unsafe".to_string()),
                (_, Err(e)) => Some(e),
                _ => None,
            };
            let failure = reason.map(|reason| {
                let compiled = compile_module(&m, &diff.compile);
                let saved = out.and_then(|dir| {
                    Counterexample::new(src.clone(), &compiled, report)
                        .save(dir, &format!("src-{s:016x}"))
                        .ok()
                });
                Failure { case: i, seed: s, reason, saved }
            });
            (Some(tgt), unsupported, failure)
        })
        .collect();
    CampaignReport::merge(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn campaigns_are_clean_and_thread_count_independent() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| (fuzz_modules(40, 9, None), fuzz_sources(40, 9, None)));
        let b = four.install(|| (fuzz_modules(40, 9, None), fuzz_sources(40, 9, None)));
        assert!(a.0.ok() && a.1.ok(), "{a:?}");
        assert_eq!(a, b);
        assert!(fuzz_attackers(10, 2, 9, None).ok());
    }
}

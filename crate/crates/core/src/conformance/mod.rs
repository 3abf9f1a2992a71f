//! Checking the compiler against the source semantics.
//!
//! A source run and the run of its compiled code are related event by
//! event. Source pointers relate to valid handles through a growing
//! bijection between source allocations and segments; integers relate to
//! equal `i32`s or to any invalid handle; forged source accesses relate to
//! the target's trap.

pub mod campaign;
pub mod gen;
pub mod srcgen;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compiler::{compile_module, value_type, CompileOptions, Layout};
use crate::interp::{run, Event, Outcome, RunConfig, Trace, Value};
use crate::minic::ast::{CheckedModule, WordType};
use crate::minic::eval::src_trace_to_jsonl;
use crate::minic::{src_ms, src_run, SrcConfig, SrcEvent, SrcOutcome, SrcValue, SrcVerdict};
use crate::segmem::Handle;
use crate::trap::Trap;
use crate::tracerel::{check_mswasm_ms, check_with, ListShading, MsVerdict};
use crate::typecheck::typecheck_module;
use crate::{print_module, ModuleDef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossEntry {
    pub src_base: i64,
    pub tgt_base: u32,
    pub tgt_id: u32,
    /// Word type of the source allocation.
    pub w: WordType,
}

/// Source allocation id ↔ segment, grown one related allocation at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrossBijection {
    by_src: HashMap<u32, CrossEntry>,
    by_tgt: HashMap<u32, u32>,
}

impl CrossBijection {
    pub fn get(&self, src_id: u32) -> Option<&CrossEntry> {
        self.by_src.get(&src_id)
    }

    pub fn src_of(&self, tgt_id: u32) -> Option<u32> {
        self.by_tgt.get(&tgt_id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_src.is_empty()
    }

    /// Adds a pair; refuses to map either side twice.
    pub fn insert(&mut self, src_id: u32, e: CrossEntry) -> bool {
        if self.by_src.contains_key(&src_id) || self.by_tgt.contains_key(&e.tgt_id) {
            return false;
        }
        self.by_tgt.insert(e.tgt_id, src_id);
        self.by_src.insert(src_id, e);
        true
    }

    fn remove(&mut self, src_id: u32) {
        if let Some(e) = self.by_src.remove(&src_id) {
            self.by_tgt.remove(&e.tgt_id);
        }
    }
}

/// Whether a source value and a target value denote the same thing.
pub fn relate_value(sv: &SrcValue, tv: &Value, delta: &CrossBijection, l: &Layout<'_>) -> bool {
    match (sv, tv) {
        (SrcValue::Int(n), Value::I32(k)) => n == k,
        (SrcValue::Int(_), Value::Handle(h)) => !h.valid,
        (SrcValue::Ptr(p), Value::Handle(h)) => {
            let Some(e) = delta.get(p.id) else {
                return false;
            };
            h.valid
                && e.tgt_id == h.id
                && h.base as i64 - e.tgt_base as i64 == l.cell_to_byte(&e.w, p.b - e.src_base)
                && h.offset as i64 == l.cell_to_byte(&p.w, p.a - p.b)
                && h.bound as i64 == p.len as i64 * l.sizeof(&p.w) as i64
        }
        _ => false,
    }
}

fn relate_handle(sv: &SrcValue, h: &Handle, delta: &CrossBijection, l: &Layout<'_>) -> bool {
    relate_value(sv, &Value::Handle(*h), delta, l)
}

/// Whether a source event and a target event are related; a related
/// allocation pair extends `delta`.
pub fn relate_events(
    se: &SrcEvent,
    te: &Event,
    delta: &mut CrossBijection,
    l: &Layout<'_>,
) -> bool {
    if let SrcValue::Int(_) = se.value() {
        // Accesses without provenance are matched by the trap.
        return *te == Event::Trap;
    }
    match (se, te) {
        (SrcEvent::Alloc { v: SrcValue::Ptr(p) }, Event::SAlloc(h)) => {
            if p.a != p.b {
                return false;
            }
            let entry = CrossEntry {
                src_base: p.b,
                tgt_base: h.base,
                tgt_id: h.id,
                w: p.w.clone(),
            };
            if !delta.insert(p.id, entry) {
                return false;
            }
            let ok = relate_handle(se.value(), h, delta, l);
            if !ok {
                delta.remove(p.id);
            }
            ok
        }
        (SrcEvent::Read { ty, v }, Event::Read(vt, h))
        | (SrcEvent::Write { ty, v }, Event::Write(vt, h)) => {
            value_type(ty) == *vt && relate_handle(v, h, delta, l)
        }
        (SrcEvent::Free { v }, Event::SFree(h)) => relate_handle(v, h, delta, l),
        _ => false,
    }
}

/// Per-allocation byte shading of the target run, derived from the source
/// allocations it mirrors.
pub fn typed_shading(m: &CheckedModule, src: &[SrcEvent]) -> ListShading {
    let l = Layout::new(m);
    ListShading(
        src.iter()
            .filter_map(|e| match e {
                SrcEvent::Alloc { v: SrcValue::Ptr(p) } => {
                    let one = l.byte_shading(&p.w);
                    Some((0..p.len).flat_map(|_| one.iter().copied()).collect())
                }
                _ => None,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Relation {
    Related,
    Diverged {
        /// Index of the first mismatching event, if any.
        index: Option<usize>,
        reason: String,
    },
    /// The run ended for reasons outside the safety argument (host errors,
    /// budgets, exhausted segment memory).
    Unsupported { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: Relation,
    pub src_ms: SrcVerdict,
    pub tgt_ms: MsVerdict,
    /// Target verdict under the shading the source layout induces.
    pub tgt_typed_ms: MsVerdict,
    pub src_outcome: SrcOutcome,
    pub tgt_outcome: Outcome,
    pub src_trace: Vec<SrcEvent>,
    pub tgt_trace: Trace,
}

impl RelationReport {
    pub fn is_related(&self) -> bool {
        self.relation == Relation::Related
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.relation, Relation::Diverged { .. })
    }
}

#[derive(Debug, Clone)]
pub struct DiffConfig {
    pub src: SrcConfig,
    pub tgt: RunConfig,
    pub compile: CompileOptions,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            src: SrcConfig::default(),
            tgt: RunConfig::default(),
            compile: CompileOptions::default(),
        }
    }
}

fn diverged(index: Option<usize>, reason: impl Into<String>) -> Relation {
    Relation::Diverged {
        index,
        reason: reason.into(),
    }
}

fn relate_prefix(
    m: &CheckedModule,
    src: &[SrcEvent],
    tgt: &[Event],
    delta: &mut CrossBijection,
) -> Option<Relation> {
    let l = Layout::new(m);
    for (i, (s, t)) in src.iter().zip(tgt).enumerate() {
        if !relate_events(s, t, delta, &l) {
            let s = serde_json::to_string(s).unwrap_or_default();
            let t = serde_json::to_string(t).unwrap_or_default();
            return Some(diverged(Some(i), format!("{s} does not relate to {t}")));
        }
    }
    None
}

/// Judges a pair of finished runs. Safe source runs must be mirrored in
/// full by a safe target run; unsafe ones by a target run that mirrors the
/// prefix before the first violation and then traps.
pub fn judge(
    m: &CheckedModule,
    src: &[SrcEvent],
    src_outcome: &SrcOutcome,
    src_verdict: &SrcVerdict,
    tgt: &[Event],
    tgt_outcome: &Outcome,
) -> Relation {
    let l = Layout::new(m);
    if let Outcome::Trapped(Trap::OutOfMemory) = tgt_outcome {
        return Relation::Unsupported {
            reason: "segment memory exhausted".into(),
        };
    }
    let mut delta = CrossBijection::default();
    match src_verdict {
        SrcVerdict::Safe => {
            match src_outcome {
                SrcOutcome::Returned { .. } => {}
                SrcOutcome::HostError { error } => {
                    return Relation::Unsupported {
                        reason: error.to_string(),
                    }
                }
                SrcOutcome::Budget => {
                    return Relation::Unsupported {
                        reason: "source step budget".into(),
                    }
                }
            }
            if let Some(d) = relate_prefix(m, src, tgt, &mut delta) {
                return d;
            }
            if src.len() != tgt.len() {
                return diverged(
                    Some(src.len().min(tgt.len())),
                    format!("{} source events but {} target events", src.len(), tgt.len()),
                );
            }
            match (src_outcome, tgt_outcome) {
                (SrcOutcome::Returned { value }, Outcome::Returned(vs)) => {
                    if vs.len() != 1 || !relate_value(value, &vs[0], &delta, &l) {
                        return diverged(None, "results do not relate");
                    }
                }
                (_, Outcome::Budget) => {
                    return Relation::Unsupported {
                        reason: "target step budget".into(),
                    }
                }
                (_, o) => return diverged(None, format!("safe source, target ended with {o:?}")),
            }
            let flat = check_mswasm_ms(tgt);
            let typed = check_with(tgt, &typed_shading(m, src));
            if !flat.is_safe() || !typed.is_safe() {
                return diverged(None, "target trace is not memory safe");
            }
            Relation::Related
        }
        SrcVerdict::Unsafe { event: k, .. } => {
            let k = *k;
            if let Some(d) = relate_prefix(m, &src[..k], tgt, &mut delta) {
                return d;
            }
            if tgt.len() != k + 1 || tgt[k] != Event::Trap {
                if let Outcome::Budget = tgt_outcome {
                    return Relation::Unsupported {
                        reason: "target step budget".into(),
                    };
                }
                return diverged(
                    Some(k.min(tgt.len())),
                    format!(
                        "expected {} related events and a trap, target has {} events",
                        k,
                        tgt.len()
                    ),
                );
            }
            Relation::Related
        }
    }
}

/// Runs a source module and its compiled code and relates the traces.
pub fn diff_run(m: &CheckedModule, cfg: &DiffConfig) -> RelationReport {
    let s = src_run(m, &cfg.src);
    let src_verdict = src_ms(m, &s.trace);
    let compiled = compile_module(m, &cfg.compile);
    let (tgt_trace, tgt_outcome) = match typecheck_module(&compiled) {
        Ok(wt) => match run(wt, &cfg.tgt) {
            Ok(r) => (r.trace, r.outcome),
            Err(e) => {
                return report(
                    diverged(None, format!("compiled module does not run: {e}")),
                    src_verdict,
                    s.outcome,
                    s.trace,
                    vec![],
                    Outcome::Budget,
                )
            }
        },
        Err(e) => {
            return report(
                diverged(None, format!("compiled module is ill-typed: {e:?}")),
                src_verdict,
                s.outcome,
                s.trace,
                vec![],
                Outcome::Budget,
            )
        }
    };
    let relation = judge(m, &s.trace, &s.outcome, &src_verdict, &tgt_trace, &tgt_outcome);
    let mut r = report(relation, src_verdict, s.outcome, s.trace, tgt_trace, tgt_outcome);
    r.tgt_typed_ms = check_with(&r.tgt_trace, &typed_shading(m, &r.src_trace));
    r
}

fn report(
    relation: Relation,
    src_ms: SrcVerdict,
    src_outcome: SrcOutcome,
    src_trace: Vec<SrcEvent>,
    tgt_trace: Trace,
    tgt_outcome: Outcome,
) -> RelationReport {
    RelationReport {
        relation,
        src_ms,
        tgt_ms: check_mswasm_ms(&tgt_trace),
        tgt_typed_ms: MsVerdict::Safe,
        src_outcome,
        tgt_outcome,
        src_trace,
        tgt_trace,
    }
}

/// Safety of the compiled program's trace, whatever the source does.
pub fn enforce_check(m: &CheckedModule, cfg: &DiffConfig) -> Result<MsVerdict, String> {
    let compiled = compile_module(m, &cfg.compile);
    let wt = typecheck_module(&compiled).map_err(|e| format!("ill-typed output: {e:?}"))?;
    let r = run(wt, &cfg.tgt).map_err(|e| e.to_string())?;
    Ok(check_mswasm_ms(&r.trace))
}

/// Everything needed to reproduce a failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub src: String,
    pub mswat: String,
    pub src_trace: Vec<SrcEvent>,
    pub tgt_trace: Trace,
    pub report: RelationReport,
}

impl Counterexample {
    pub fn new(src: String, compiled: &ModuleDef, report: RelationReport) -> Counterexample {
        Counterexample {
            src,
            mswat: print_module(compiled),
            src_trace: report.src_trace.clone(),
            tgt_trace: report.tgt_trace.clone(),
            report,
        }
    }

    /// Writes the bundle as `<dir>/<name>.json` plus the two programs and
    /// traces as separate files.
    pub fn save(&self, dir: &Path, name: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{name}.uc")), &self.src)?;
        std::fs::write(dir.join(format!("{name}.mswat")), &self.mswat)?;
        std::fs::write(
            dir.join(format!("{name}.src.jsonl")),
            src_trace_to_jsonl(&self.src_trace),
        )?;
        std::fs::write(
            dir.join(format!("{name}.tgt.jsonl")),
            crate::interp::trace_to_jsonl(&self.tgt_trace),
        )?;
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("bundle serializes"))?;
        Ok(path)
    }
}

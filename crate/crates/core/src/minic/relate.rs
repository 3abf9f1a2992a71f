//! Source traces as abstract monitor events.
//!
//! Abstract addresses are heap cells. Allocations get fresh colors in order
//! and a shading over their cells: one shade per top-level struct field,
//! shade 0 for everything else. Accesses are shaded at the pointer's base
//! cell, so a pointer narrowed to a field carries that field's shade. An
//! access through a bare integer has no provenance and is not related.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ast::{CheckedModule, WordType};
use super::eval::{SrcEvent, SrcPtr, SrcValue};
use crate::monitor::{AbsEvent, Color, Shade, ShadowMemory, ViolationKind};

/// Shade of each cell of one object of type `w`.
pub fn shading_of(m: &CheckedModule, w: &WordType) -> Vec<Shade> {
    match w {
        WordType::Struct(s) => m
            .struct_def(s)
            .fields
            .iter()
            .enumerate()
            .flat_map(|(k, (_, fw))| std::iter::repeat(k as Shade).take(m.cells(fw) as usize))
            .collect(),
        w => vec![0; m.cells(w) as usize],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SrcSegment {
    base: i64,
    c: Color,
    phi: Vec<Shade>,
}

/// Source-side bijection: allocation id ↦ base cell, color, shading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SrcDelta {
    segs: HashMap<u32, SrcSegment>,
    next_color: Color,
}

impl SrcDelta {
    /// Abstract form of one source event, or `None` if it has no provenance.
    pub fn relate(&mut self, m: &CheckedModule, e: &SrcEvent) -> Option<AbsEvent> {
        let SrcValue::Ptr(p) = e.value() else {
            return None;
        };
        match e {
            SrcEvent::Alloc { .. } => {
                if self.segs.contains_key(&p.id) || p.a != p.b {
                    return None;
                }
                let one = shading_of(m, &p.w);
                let phi: Vec<Shade> = (0..p.len).flat_map(|_| one.iter().copied()).collect();
                let c = self.next_color;
                self.next_color += 1;
                self.segs.insert(
                    p.id,
                    SrcSegment {
                        base: p.b,
                        c,
                        phi: phi.clone(),
                    },
                );
                Some(AbsEvent::Alloc {
                    a: u64::try_from(p.a).ok()?,
                    c,
                    phi,
                })
            }
            SrcEvent::Read { .. } | SrcEvent::Write { .. } => {
                let (a, c, s) = self.access(p)?;
                Some(match e {
                    SrcEvent::Read { .. } => AbsEvent::Read { a, c, s },
                    _ => AbsEvent::Write { a, c, s },
                })
            }
            SrcEvent::Free { .. } => {
                let seg = self.segs.get(&p.id)?;
                Some(AbsEvent::Free {
                    a: u64::try_from(p.a).ok()?,
                    c: seg.c,
                })
            }
        }
    }

    fn access(&self, p: &SrcPtr) -> Option<(u64, Color, Shade)> {
        let seg = self.segs.get(&p.id)?;
        let i = usize::try_from(p.b - seg.base).ok()?;
        // A base past the object (zero-length allocations) has no shade of
        // its own; the monitor rejects the access by address anyway.
        let s = seg.phi.get(i).copied().unwrap_or(0);
        Some((u64::try_from(p.a).ok()?, seg.c, s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrcRelated {
    pub events: Vec<AbsEvent>,
    pub delta: SrcDelta,
}

/// Source event `at` is an access without provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("source event {at} has no provenance")]
pub struct SrcUnrelatable {
    pub at: usize,
}

pub fn src_relate(m: &CheckedModule, t: &[SrcEvent]) -> Result<SrcRelated, SrcUnrelatable> {
    let mut delta = SrcDelta::default();
    let mut events = Vec::with_capacity(t.len());
    for (at, e) in t.iter().enumerate() {
        events.push(delta.relate(m, e).ok_or(SrcUnrelatable { at })?);
    }
    Ok(SrcRelated { events, delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "kebab-case")]
pub enum UnsafeCause {
    /// The access or free used a bare integer.
    Forged,
    Violation { kind: ViolationKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum SrcVerdict {
    Safe,
    Unsafe {
        /// Index of the first offending source event.
        event: usize,
        #[serde(flatten)]
        cause: UnsafeCause,
    },
}

impl SrcVerdict {
    pub fn first_violation(&self) -> Option<usize> {
        match self {
            SrcVerdict::Safe => None,
            SrcVerdict::Unsafe { event, .. } => Some(*event),
        }
    }
}

/// Memory safety of a source trace; unsafe traces report the first event
/// that is forged or rejected by the monitor.
pub fn src_ms(m: &CheckedModule, t: &[SrcEvent]) -> SrcVerdict {
    let mut delta = SrcDelta::default();
    let mut shadow = ShadowMemory::new();
    for (event, e) in t.iter().enumerate() {
        let Some(abs) = delta.relate(m, e) else {
            return SrcVerdict::Unsafe {
                event,
                cause: UnsafeCause::Forged,
            };
        };
        if let Err(kind) = shadow.step(&abs) {
            return SrcVerdict::Unsafe {
                event,
                cause: UnsafeCause::Violation { kind },
            };
        }
    }
    SrcVerdict::Safe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minic::{load_src, src_run, SrcConfig};

    fn verdict(body: &str) -> SrcVerdict {
        let m = load_src(&format!(
            "module {{ struct User {{ name: [int; 4], id: int }}
              fn main(x: int) -> int {{ var (p: ptr int, u: ptr struct User, r: int); {body} }}
              heap 16 }}"
        ))
        .unwrap();
        let r = src_run(&m, &SrcConfig::default());
        src_ms(&m, &r.trace)
    }

    fn violation(kind: ViolationKind, event: usize) -> SrcVerdict {
        SrcVerdict::Unsafe {
            event,
            cause: UnsafeCause::Violation { kind },
        }
    }

    #[test]
    fn safe_program() {
        assert_eq!(
            verdict("p = malloc<int>(2); (p + 1) := 3; r = *(p + 1); free(p); r"),
            SrcVerdict::Safe
        );
        assert_eq!(
            verdict("u = malloc(struct User); (u.name + 3) := 1; u.id := 2; free(u); 0"),
            SrcVerdict::Safe
        );
    }

    #[test]
    fn field_overflow_is_a_shade_violation() {
        assert_eq!(
            verdict("u = malloc(struct User); (u.name + 4) := 1; 0"),
            violation(ViolationKind::Shade, 1)
        );
    }

    #[test]
    fn forged_accesses_are_unsafe() {
        assert_eq!(
            verdict("p = malloc<int>(1); *0"),
            SrcVerdict::Unsafe {
                event: 1,
                cause: UnsafeCause::Forged
            }
        );
    }

    #[test]
    fn temporal_and_free_errors() {
        assert_eq!(
            verdict("p = malloc<int>(1); free(p); *p"),
            violation(ViolationKind::TemporalFreed, 2)
        );
        assert_eq!(
            verdict("p = malloc<int>(1); free(p); free(p); 0"),
            violation(ViolationKind::DoubleFree, 2)
        );
        assert_eq!(
            verdict("p = malloc<int>(2); free(p + 1); 0"),
            violation(ViolationKind::InvalidFree, 1)
        );
        assert_eq!(
            verdict("p = malloc<int>(0); *p"),
            violation(ViolationKind::TemporalUnmapped, 1)
        );
    }

    #[test]
    fn struct_shading() {
        let m = load_src(
            "module { struct User { name: [int; 4], id: int } fn main(x: int) -> int { x } }",
        )
        .unwrap();
        assert_eq!(
            shading_of(&m, &WordType::Struct("User".into())),
            vec![0, 0, 0, 0, 1]
        );
    }
}

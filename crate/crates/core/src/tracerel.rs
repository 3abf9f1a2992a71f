//! Relating interpreter traces to abstract monitor events.
//!
//! Abstract addresses are segment-memory addresses and colors are issued in
//! allocation order. The bijection records, per segment id, where it lives
//! and how its bytes are shaded. An access is checked with the color and
//! shade found at the handle's *base*, so a sliced handle carries the shade
//! of the field it was sliced to.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::interp::Event;
use crate::monitor::{check_trace, AbsEvent, Color, Shade, Violation};
use crate::segmem::Handle;

/// Chooses the shading function of each allocation.
pub trait SegmentShadingPolicy {
    /// Shades for the `ordinal`-th allocation, one per byte of `h.bound`.
    fn shades(&self, ordinal: usize, h: &Handle) -> Vec<Shade>;
}

/// Every byte gets shade 0: flat objects.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantShading;

impl SegmentShadingPolicy for ConstantShading {
    fn shades(&self, _: usize, h: &Handle) -> Vec<Shade> {
        vec![0; h.bound as usize]
    }
}

/// Explicit per-allocation shading; allocations past the list are flat.
#[derive(Debug, Clone, Default)]
pub struct ListShading(pub Vec<Vec<Shade>>);

impl SegmentShadingPolicy for ListShading {
    fn shades(&self, ordinal: usize, h: &Handle) -> Vec<Shade> {
        match self.0.get(ordinal) {
            Some(phi) if phi.len() == h.bound as usize => phi.clone(),
            _ => vec![0; h.bound as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Segment {
    base: u32,
    a: u64,
    c: Color,
    phi: Vec<Shade>,
}

/// Partial bijection (segment address, id) ↔ (abstract address, color,
/// shade). Grows by one segment per allocation and never shrinks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BijectionDelta {
    segments: HashMap<u32, Segment>,
    by_color: HashMap<Color, u32>,
}

impl BijectionDelta {
    /// δ(addr, id) for `addr` inside segment `id`.
    pub fn lookup(&self, addr: u32, id: u32) -> Option<(u64, Color, Shade)> {
        let s = self.segments.get(&id)?;
        let i = addr.checked_sub(s.base)? as usize;
        let shade = *s.phi.get(i)?;
        Some((s.a + i as u64, s.c, shade))
    }

    /// The segment id that color `c` stands for.
    pub fn id_of_color(&self, c: Color) -> Option<u32> {
        self.by_color.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    fn extend(&mut self, h: &Handle, c: Color, phi: Vec<Shade>) -> bool {
        if self.segments.contains_key(&h.id) || self.by_color.contains_key(&c) {
            return false;
        }
        self.by_color.insert(c, h.id);
        self.segments.insert(
            h.id,
            Segment {
                base: h.base,
                a: h.base as u64,
                c,
                phi,
            },
        );
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelatedTrace {
    pub events: Vec<AbsEvent>,
    /// For each abstract event, the index of the trace event it came from.
    pub origin: Vec<usize>,
    pub delta: BijectionDelta,
}

/// Trace event `at` mentions a segment the bijection does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("trace event {at} does not relate to any allocation")]
pub struct Unrelatable {
    pub at: usize,
}

pub fn relate_trace(
    trace: &[Event],
    shading: &dyn SegmentShadingPolicy,
) -> Result<RelatedTrace, Unrelatable> {
    let mut out = RelatedTrace {
        events: Vec::new(),
        origin: Vec::new(),
        delta: BijectionDelta::default(),
    };
    let mut next_color: Color = 0;
    for (at, e) in trace.iter().enumerate() {
        match e {
            Event::SAlloc(h) => {
                let phi = shading.shades(next_color as usize, h);
                let c = next_color;
                next_color += 1;
                if !out.delta.extend(h, c, phi.clone()) {
                    return Err(Unrelatable { at });
                }
                out.events.push(AbsEvent::Alloc {
                    a: h.base as u64,
                    c,
                    phi,
                });
                out.origin.push(at);
            }
            Event::Read(ty, h) | Event::Write(ty, h) => {
                let (a, c, s) = out.delta.lookup(h.base, h.id).ok_or(Unrelatable { at })?;
                let start = a as i64 + h.offset as i64;
                for k in 0..ty.size() as i64 {
                    let Ok(a) = u64::try_from(start + k) else {
                        return Err(Unrelatable { at });
                    };
                    out.events.push(match e {
                        Event::Read(..) => AbsEvent::Read { a, c, s },
                        _ => AbsEvent::Write { a, c, s },
                    });
                    out.origin.push(at);
                }
            }
            Event::SFree(h) => {
                let seg = out.delta.segments.get(&h.id).ok_or(Unrelatable { at })?;
                // Zero-length segments have no addresses, only the record.
                let (a, c) = match out.delta.lookup(h.base, h.id) {
                    Some((a, c, _)) => (a, c),
                    None if seg.phi.is_empty() && h.base == seg.base => (seg.a, seg.c),
                    None => return Err(Unrelatable { at }),
                };
                out.events.push(AbsEvent::Free { a, c });
                out.origin.push(at);
            }
            Event::Trap => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum MsVerdict {
    Safe,
    Violation {
        #[serde(flatten)]
        violation: Violation,
        /// Index of the trace event behind the violating abstract event.
        event: usize,
    },
    Unrelatable {
        event: usize,
    },
}

impl MsVerdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, MsVerdict::Safe)
    }
}

pub fn check_with(trace: &[Event], shading: &dyn SegmentShadingPolicy) -> MsVerdict {
    match relate_trace(trace, shading) {
        Err(u) => MsVerdict::Unrelatable { event: u.at },
        Ok(r) => match check_trace(&r.events) {
            Ok(()) => MsVerdict::Safe,
            Err(violation) => MsVerdict::Violation {
                violation,
                event: r.origin[violation.at],
            },
        },
    }
}

/// Memory safety of an MSWasm trace under flat shading.
pub fn check_mswasm_ms(trace: &[Event]) -> MsVerdict {
    check_with(trace, &ConstantShading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::ValueType;
    use crate::monitor::ViolationKind;

    fn h(base: u32, offset: i32, bound: u32, id: u32) -> Handle {
        Handle::new(base, offset, bound, true, id)
    }

    #[test]
    fn write_expands_per_byte() {
        let a = h(0, 0, 8, 0);
        let r = relate_trace(
            &[Event::SAlloc(a), Event::Write(ValueType::I32, a)],
            &ConstantShading,
        )
        .unwrap();
        let mut expected = vec![AbsEvent::Alloc {
            a: 0,
            c: 0,
            phi: vec![0; 8],
        }];
        expected.extend((0..4).map(|a| AbsEvent::Write { a, c: 0, s: 0 }));
        assert_eq!(r.events, expected);
        assert_eq!(r.origin, vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn sliced_handle_uses_shade_at_its_base() {
        let a = h(0, 0, 8, 0);
        let field = h(4, 0, 4, 0);
        let shading = ListShading(vec![vec![0, 0, 0, 0, 1, 1, 1, 1]]);
        let r = relate_trace(&[Event::SAlloc(a), Event::Read(ValueType::I32, field)], &shading)
            .unwrap();
        assert_eq!(
            &r.events[1..],
            &(4..8).map(|a| AbsEvent::Read { a, c: 0, s: 1 }).collect::<Vec<_>>()[..]
        );
        // Reading the second half through the first field's handle.
        let t = [Event::SAlloc(a), Event::Read(ValueType::I32, h(0, 4, 8, 0))];
        assert!(matches!(
            check_with(&t, &shading),
            MsVerdict::Violation {
                violation: Violation {
                    kind: ViolationKind::Shade,
                    ..
                },
                event: 1
            }
        ));
        assert_eq!(check_mswasm_ms(&t), MsVerdict::Safe);
    }

    #[test]
    fn verdicts() {
        assert_eq!(check_mswasm_ms(&[Event::Trap]), MsVerdict::Safe);
        let a = h(0, 0, 8, 0);
        let uaf = [Event::SAlloc(a), Event::SFree(a), Event::Read(ValueType::I32, a)];
        assert!(matches!(
            check_mswasm_ms(&uaf),
            MsVerdict::Violation {
                violation: Violation {
                    kind: ViolationKind::TemporalFreed,
                    ..
                },
                event: 2
            }
        ));
        assert_eq!(
            check_mswasm_ms(&[Event::Read(ValueType::I32, h(0, 0, 8, 3))]),
            MsVerdict::Unrelatable { event: 0 }
        );
        let z = h(0, 0, 0, 0);
        assert_eq!(
            check_mswasm_ms(&[Event::SAlloc(z), Event::SFree(z)]),
            MsVerdict::Safe
        );
    }

    #[test]
    fn refined_safe_implies_flat_safe() {
        let a = h(0, 0, 8, 0);
        let t = [
            Event::SAlloc(a),
            Event::Write(ValueType::I32, h(4, 0, 4, 0)),
            Event::Read(ValueType::I32, a),
        ];
        let refined = ListShading(vec![vec![0, 0, 0, 0, 1, 1, 1, 1]]);
        assert!(check_with(&t, &refined).is_safe());
        assert!(check_mswasm_ms(&t).is_safe());
    }
}

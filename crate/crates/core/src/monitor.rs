//! Color/shade shadow-memory monitor over abstract memory events.
//!
//! Every allocation gets a fresh color and every byte of it a shade; an
//! access is safe only when it names the exact color and shade of a live
//! cell. The monitor stops at the first event that breaks this.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type Color = u32;
pub type Shade = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Allocated(Color, Shade),
    Freed(Color, Shade),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "AbsRepr", into = "AbsRepr")]
pub enum AbsEvent {
    Read { a: u64, c: Color, s: Shade },
    Write { a: u64, c: Color, s: Shade },
    /// Allocates `phi.len()` cells at `a`; cell `a + i` gets shade `phi[i]`.
    Alloc { a: u64, c: Color, phi: Vec<Shade> },
    Free { a: u64, c: Color },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
enum AbsRepr {
    Alloc {
        n: usize,
        a: u64,
        c: Color,
        phi: Vec<Shade>,
    },
    Read {
        a: u64,
        c: Color,
        s: Shade,
    },
    Write {
        a: u64,
        c: Color,
        s: Shade,
    },
    Free {
        a: u64,
        c: Color,
    },
}

impl From<AbsRepr> for AbsEvent {
    fn from(r: AbsRepr) -> AbsEvent {
        match r {
            AbsRepr::Alloc { n, a, c, mut phi } => {
                // A short `phi` is padded with its last shade (or 0).
                let pad = phi.last().copied().unwrap_or(0);
                phi.resize(n, pad);
                AbsEvent::Alloc { a, c, phi }
            }
            AbsRepr::Read { a, c, s } => AbsEvent::Read { a, c, s },
            AbsRepr::Write { a, c, s } => AbsEvent::Write { a, c, s },
            AbsRepr::Free { a, c } => AbsEvent::Free { a, c },
        }
    }
}

impl From<AbsEvent> for AbsRepr {
    fn from(e: AbsEvent) -> AbsRepr {
        match e {
            AbsEvent::Alloc { a, c, phi } => AbsRepr::Alloc {
                n: phi.len(),
                a,
                c,
                phi,
            },
            AbsEvent::Read { a, c, s } => AbsRepr::Read { a, c, s },
            AbsEvent::Write { a, c, s } => AbsRepr::Write { a, c, s },
            AbsEvent::Free { a, c } => AbsRepr::Free { a, c },
        }
    }
}

impl AbsEvent {
    pub fn color(&self) -> Color {
        match self {
            AbsEvent::Read { c, .. }
            | AbsEvent::Write { c, .. }
            | AbsEvent::Alloc { c, .. }
            | AbsEvent::Free { c, .. } => *c,
        }
    }

    pub fn with_color(&self, c: Color) -> AbsEvent {
        let mut e = self.clone();
        match &mut e {
            AbsEvent::Read { c: x, .. }
            | AbsEvent::Write { c: x, .. }
            | AbsEvent::Alloc { c: x, .. }
            | AbsEvent::Free { c: x, .. } => *x = c,
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// The cell is live but belongs to another allocation.
    SpatialColor,
    /// Right allocation, wrong field.
    Shade,
    /// The cell was freed.
    TemporalFreed,
    /// The cell was never allocated.
    TemporalUnmapped,
    /// Allocation over live cells.
    AllocOverlap,
    /// Allocation with a color already issued.
    ColorReuse,
    DoubleFree,
    /// Free of something that was never allocated at that address.
    InvalidFree,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the offending event.
    pub at: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation at event {}", self.kind, self.at)
    }
}

/// Shadow memory plus the part of the history that `Free` consults.
#[derive(Debug, Clone, Default)]
pub struct ShadowMemory {
    cells: BTreeMap<u64, Cell>,
    issued: BTreeSet<Color>,
    /// Address of each color's allocation and whether it is still live.
    allocs: HashMap<Color, (u64, bool)>,
    /// Cells ever mapped with each color.
    by_color: HashMap<Color, Vec<u64>>,
    consumed: usize,
}

impl ShadowMemory {
    pub fn new() -> ShadowMemory {
        ShadowMemory::default()
    }

    pub fn cell(&self, a: u64) -> Option<Cell> {
        self.cells.get(&a).copied()
    }

    pub fn cells(&self) -> &BTreeMap<u64, Cell> {
        &self.cells
    }

    pub fn issued(&self) -> &BTreeSet<Color> {
        &self.issued
    }

    /// Number of events consumed so far.
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    fn access(&self, a: u64, c: Color, s: Shade) -> Result<(), ViolationKind> {
        match self.cells.get(&a) {
            None => Err(ViolationKind::TemporalUnmapped),
            Some(Cell::Freed(..)) => Err(ViolationKind::TemporalFreed),
            Some(Cell::Allocated(c2, _)) if *c2 != c => Err(ViolationKind::SpatialColor),
            Some(Cell::Allocated(_, s2)) if *s2 != s => Err(ViolationKind::Shade),
            Some(_) => Ok(()),
        }
    }

    /// One monitor step; on a violation the state is left unchanged.
    pub fn step(&mut self, e: &AbsEvent) -> Result<(), ViolationKind> {
        match e {
            AbsEvent::Read { a, c, s } | AbsEvent::Write { a, c, s } => self.access(*a, *c, *s)?,
            AbsEvent::Alloc { a, c, phi } => {
                if self.issued.contains(c) {
                    return Err(ViolationKind::ColorReuse);
                }
                let n = phi.len() as u64;
                if self
                    .cells
                    .range(*a..*a + n)
                    .any(|(_, cell)| matches!(cell, Cell::Allocated(..)))
                {
                    return Err(ViolationKind::AllocOverlap);
                }
                self.issued.insert(*c);
                self.allocs.insert(*c, (*a, true));
                for (i, &s) in phi.iter().enumerate() {
                    self.cells.insert(a + i as u64, Cell::Allocated(*c, s));
                }
                self.by_color.insert(*c, (*a..*a + n).collect());
            }
            AbsEvent::Free { a, c } => {
                match self.allocs.get(c) {
                    Some((a2, _)) if a2 != a => return Err(ViolationKind::InvalidFree),
                    None => return Err(ViolationKind::InvalidFree),
                    Some((_, false)) => return Err(ViolationKind::DoubleFree),
                    Some((_, true)) => {}
                }
                self.allocs.insert(*c, (*a, false));
                for x in self.by_color.get(c).into_iter().flatten() {
                    if let Some(cell) = self.cells.get_mut(x) {
                        if let Cell::Allocated(c2, s) = *cell {
                            if c2 == *c {
                                *cell = Cell::Freed(c2, s);
                            }
                        }
                    }
                }
            }
        }
        self.consumed += 1;
        Ok(())
    }
}

/// Alias kept for the operation's usual name.
pub fn monitor_step(t: &mut ShadowMemory, e: &AbsEvent) -> Result<(), Violation> {
    let at = t.consumed();
    t.step(e).map_err(|kind| Violation { kind, at })
}

/// Folds the monitor over `events` from the empty shadow memory.
pub fn check_trace(events: &[AbsEvent]) -> Result<(), Violation> {
    let mut t = ShadowMemory::new();
    for e in events {
        monitor_step(&mut t, e)?;
    }
    Ok(())
}

pub fn abs_to_jsonl(events: &[AbsEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("serializes"));
        out.push('\n');
    }
    out
}

pub fn abs_from_jsonl(text: &str) -> Result<Vec<AbsEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

//! Random programs in the C subset, memory-safe or with one injected error.
//!
//! Generation tracks which objects each pointer variable refers to and
//! whether they are still live, so safe programs only index in bounds and
//! never touch freed memory. Unsafe programs are a safe prefix, one bad
//! statement from [`Injection`], then a safe suffix.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::minic::{load_src, src_ms, src_run, SrcConfig, SrcOutcome, SrcVerdict};

const PTRS: usize = 3;
const BUF: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    OobWrite,
    OobRead,
    NegativeIndex,
    UseAfterFreeRead,
    UseAfterFreeWrite,
    DoubleFree,
    ForgedRead,
    ForgedWrite,
    ForgedFree,
    FieldOverflow,
    UninitDeref,
    InteriorFree,
    ZeroLengthDeref,
    StaleFieldAfterFree,
    DanglingAfterRealloc,
}

impl Injection {
    pub const ALL: [Injection; 15] = [
        Injection::OobWrite,
        Injection::OobRead,
        Injection::NegativeIndex,
        Injection::UseAfterFreeRead,
        Injection::UseAfterFreeWrite,
        Injection::DoubleFree,
        Injection::ForgedRead,
        Injection::ForgedWrite,
        Injection::ForgedFree,
        Injection::FieldOverflow,
        Injection::UninitDeref,
        Injection::InteriorFree,
        Injection::ZeroLengthDeref,
        Injection::StaleFieldAfterFree,
        Injection::DanglingAfterRealloc,
    ];
}

#[derive(Debug, Clone, Copy)]
struct Obj {
    len: u32,
    live: bool,
}

#[derive(Default)]
struct State {
    objs: Vec<Obj>,
    ptrs: [Option<usize>; PTRS],
    rec: Option<usize>,
    link: Option<usize>,
    stmts: Vec<String>,
}

impl State {
    fn alloc(&mut self, len: u32) -> usize {
        self.objs.push(Obj { len, live: true });
        self.objs.len() - 1
    }

    fn live_ptr(&self, min_len: u32) -> Vec<(usize, u32)> {
        (0..PTRS)
            .filter_map(|k| {
                let o = self.objs[self.ptrs[k]?];
                (o.live && o.len >= min_len).then_some((k, o.len))
            })
            .collect()
    }

    fn live_rec(&self) -> bool {
        self.rec.is_some_and(|o| self.objs[o].live)
    }

    fn free_obj(&mut self, o: usize) {
        self.objs[o].live = false;
    }

    fn push(&mut self, s: String) {
        self.stmts.push(s);
    }

    fn small(rng: &mut impl Rng) -> i32 {
        rng.gen_range(-3..20)
    }

    /// An int expression that is safe to evaluate now.
    fn int_expr(&self, rng: &mut impl Rng) -> String {
        let live = self.live_ptr(1);
        match rng.gen_range(0..5) {
            0 if !live.is_empty() => {
                let (k, len) = *live.choose(rng).unwrap();
                format!("*(p{k} + {})", rng.gen_range(0..len))
            }
            1 => format!("r + {}", Self::small(rng)),
            2 => format!("r * {}", rng.gen_range(0..4)),
            3 if self.live_rec() => {
                if rng.gen_bool(0.5) {
                    "s.tag".to_string()
                } else {
                    format!("*(s.buf + {})", rng.gen_range(0..BUF))
                }
            }
            _ => Self::small(rng).to_string(),
        }
    }

    fn safe_stmt(&mut self, rng: &mut impl Rng) {
        let live = self.live_ptr(1);
        match rng.gen_range(0..12) {
            0 | 1 => {
                let k = rng.gen_range(0..PTRS);
                let len = rng.gen_range(1..=6);
                self.ptrs[k] = Some(self.alloc(len));
                self.push(format!("p{k} = malloc<int>({len})"));
            }
            2 | 3 if !live.is_empty() => {
                let (k, len) = *live.choose(rng).unwrap();
                let v = self.int_expr(rng);
                self.push(format!("(p{k} + {}) := {v}", rng.gen_range(0..len)));
            }
            4 if !live.is_empty() => {
                let (k, len) = *live.choose(rng).unwrap();
                self.push(format!("r = r + *(p{k} + {})", rng.gen_range(0..len)));
            }
            5 if !live.is_empty() => {
                let (k, _) = *live.choose(rng).unwrap();
                let o = self.ptrs[k].unwrap();
                self.free_obj(o);
                self.push(format!("free(p{k})"));
            }
            6 => {
                self.rec = Some(self.alloc(1));
                self.link = None;
                self.push("s = malloc(struct Rec)".into());
            }
            7 if self.live_rec() => {
                let v = self.int_expr(rng);
                match rng.gen_range(0..3) {
                    0 => self.push(format!("s.tag := {v}")),
                    1 => self.push(format!("(s.buf + {}) := {v}", rng.gen_range(0..BUF))),
                    _ => {
                        if let Some(&(k, _)) = live.choose(rng) {
                            self.link = self.ptrs[k];
                            self.push(format!("s.link := p{k}"));
                        }
                    }
                }
            }
            8 if self.live_rec() && self.link.is_some_and(|o| self.objs[o].live) => {
                self.push("r = r + *(*s.link)".into());
            }
            9 if self.live_rec() && rng.gen_bool(0.3) => {
                self.free_obj(self.rec.unwrap());
                self.push("free(s)".into());
            }
            10 => {
                let a = self.int_expr(rng);
                let c = Self::small(rng);
                self.push(format!(
                    "r = if r < {c} {{ {a} }} else {{ r - {} }}",
                    rng.gen_range(0..5)
                ));
            }
            11 => self.push("(let i = helper(r) in r = r + i)".into()),
            _ => {
                let v = self.int_expr(rng);
                self.push(format!("r = {v}"));
            }
        }
    }

    /// A pointer variable whose object was freed, making one if needed.
    fn dead_ptr(&mut self, rng: &mut impl Rng) -> (usize, u32) {
        for k in 0..PTRS {
            if let Some(o) = self.ptrs[k] {
                if !self.objs[o].live {
                    return (k, self.objs[o].len);
                }
            }
        }
        let k = rng.gen_range(0..PTRS);
        let len = rng.gen_range(1..=4);
        let o = self.alloc(len);
        self.ptrs[k] = Some(o);
        self.push(format!("p{k} = malloc<int>({len})"));
        self.free_obj(o);
        self.push(format!("free(p{k})"));
        (k, len)
    }

    fn live_or_new(&mut self, rng: &mut impl Rng, min_len: u32) -> (usize, u32) {
        if let Some(&p) = self.live_ptr(min_len).choose(rng) {
            return p;
        }
        let k = rng.gen_range(0..PTRS);
        let len = rng.gen_range(min_len.max(1)..=6);
        self.ptrs[k] = Some(self.alloc(len));
        self.push(format!("p{k} = malloc<int>({len})"));
        (k, len)
    }

    fn ensure_rec(&mut self) {
        if !self.live_rec() {
            self.rec = Some(self.alloc(1));
            self.link = None;
            self.push("s = malloc(struct Rec)".into());
        }
    }

    fn inject(&mut self, rng: &mut impl Rng, inj: Injection) {
        use Injection as J;
        match inj {
            J::OobWrite => {
                let (k, len) = self.live_or_new(rng, 1);
                self.push(format!("(p{k} + {}) := 7", len + rng.gen_range(0..3)));
            }
            J::OobRead => {
                let (k, len) = self.live_or_new(rng, 1);
                self.push(format!("r = *(p{k} + {len})"));
            }
            J::NegativeIndex => {
                let (k, _) = self.live_or_new(rng, 1);
                self.push(format!("r = *(p{k} - 1)"));
            }
            J::UseAfterFreeRead => {
                let (k, len) = self.dead_ptr(rng);
                self.push(format!("r = *(p{k} + {})", rng.gen_range(0..len)));
            }
            J::UseAfterFreeWrite => {
                let (k, len) = self.dead_ptr(rng);
                self.push(format!("(p{k} + {}) := 5", rng.gen_range(0..len)));
            }
            J::DoubleFree => {
                let (k, _) = self.dead_ptr(rng);
                self.push(format!("free(p{k})"));
            }
            J::ForgedRead => self.push(format!("r = *{}", rng.gen_range(0..8))),
            J::ForgedWrite => self.push(format!("{} := 9", rng.gen_range(0..8))),
            J::ForgedFree => self.push(format!("free({})", rng.gen_range(0..8))),
            J::FieldOverflow => {
                self.ensure_rec();
                self.push(format!("(s.buf + {}) := 3", BUF + rng.gen_range(0..2)));
            }
            J::UninitDeref => self.push("r = *q".into()),
            J::InteriorFree => {
                let (k, len) = self.live_or_new(rng, 2);
                self.push(format!("free(p{k} + {})", rng.gen_range(1..len)));
            }
            J::ZeroLengthDeref => self.push("q = malloc<int>(0); r = *q".into()),
            J::StaleFieldAfterFree => {
                self.ensure_rec();
                self.free_obj(self.rec.unwrap());
                self.push("q = s.buf; free(s); r = *(q + 1)".into());
            }
            J::DanglingAfterRealloc => {
                let (k, len) = self.dead_ptr(rng);
                let j = (k + 1) % PTRS;
                self.ptrs[j] = Some(self.alloc(len));
                self.push(format!("p{j} = malloc<int>({len}); r = *p{k}"));
            }
        }
    }

    fn render(&self) -> String {
        let mut body = String::new();
        for s in &self.stmts {
            let _ = write!(body, "\n    {s};");
        }
        format!(
            "module {{
  struct Rec {{ tag: int, buf: [int; {BUF}], link: ptr int }}
  fn helper(x: int) -> int {{ var (t: int); t = x * 2; t + 1 }}
  fn main(x: int) -> int {{
    var (p0: ptr int, p1: ptr int, p2: ptr int, q: ptr int, s: ptr struct Rec, r: int, i: int);{body}
    r
  }}
  heap 32
}}
"
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SrcGenConfig {
    pub max_stmts: usize,
    /// Attempts before giving up on a program with the wanted verdict.
    pub retries: usize,
}

impl Default for SrcGenConfig {
    fn default() -> Self {
        SrcGenConfig {
            max_stmts: 20,
            retries: 32,
        }
    }
}

fn raw(rng: &mut impl Rng, cfg: &SrcGenConfig, inj: Option<Injection>) -> String {
    let mut st = State::default();
    let len = rng.gen_range(1..=6);
    st.ptrs[0] = Some(st.alloc(len));
    st.push(format!("p0 = malloc<int>({len})"));
    let n = rng.gen_range(1..=cfg.max_stmts);
    let at = rng.gen_range(0..=n);
    for i in 0..=n {
        if i == at {
            if let Some(j) = inj {
                st.inject(rng, j);
            }
        }
        if i < n {
            st.safe_stmt(rng);
        }
    }
    st.render()
}

fn verdict(src: &str) -> Option<SrcVerdict> {
    let m = load_src(src).ok()?;
    let r = src_run(&m, &SrcConfig::default());
    let v = src_ms(&m, &r.trace);
    match (&r.outcome, v) {
        (SrcOutcome::Returned { .. }, v) => Some(v),
        // A host error after an unsafe event still leaves a verdict.
        (_, v @ SrcVerdict::Unsafe { .. }) => Some(v),
        _ => None,
    }
}

/// A program whose source trace is memory-safe and which returns normally.
pub fn gen_safe_src(rng: &mut impl Rng, cfg: &SrcGenConfig) -> String {
    let mut last = String::new();
    for _ in 0..cfg.retries {
        last = raw(rng, cfg, None);
        if verdict(&last) == Some(SrcVerdict::Safe) {
            return last;
        }
    }
    panic!("no safe program after {} attempts:\n{last}", cfg.retries)
}

/// A program with one memory error of kind `inj` in its source trace.
pub fn gen_unsafe_src(rng: &mut impl Rng, cfg: &SrcGenConfig, inj: Injection) -> String {
    let mut last = String::new();
    for _ in 0..cfg.retries {
        last = raw(rng, cfg, Some(inj));
        if matches!(verdict(&last), Some(SrcVerdict::Unsafe { .. })) {
            return last;
        }
    }
    panic!("no unsafe {inj:?} program after {} attempts:\n{last}", cfg.retries)
}

/// Program number `seed`: safe for even seeds, otherwise cycling through
/// the injections.
pub fn gen_src_seeded(seed: u64, cfg: &SrcGenConfig) -> (String, Option<Injection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed % 2 == 0 {
        (gen_safe_src(&mut rng, cfg), None)
    } else {
        let inj = Injection::ALL[(seed / 2) as usize % Injection::ALL.len()];
        (gen_unsafe_src(&mut rng, cfg, inj), Some(inj))
    }
}

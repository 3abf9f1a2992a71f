//! Reference semantics: a small-step machine over a cell heap.
//!
//! Nothing here checks memory safety. Pointer annotations ride along with
//! addresses and are reported in events, but every access that lands inside
//! the heap succeeds. The allocator works on addresses alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{CheckedModule, SrcOp, SrcType, TExpr, TKind, WordType};
use crate::interp::{DEFAULT_MAX_DEPTH, DEFAULT_STEP_BUDGET};

/// Annotated pointer: address `a`, base `b`, element count `len` of
/// element type `w`, allocation `id`. Addresses count cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SrcPtr {
    pub a: i64,
    pub b: i64,
    pub len: u32,
    pub w: WordType,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrcValue {
    Int(i32),
    Ptr(SrcPtr),
}

impl SrcValue {
    /// The address a value denotes when used as a pointer.
    pub fn addr(&self) -> i64 {
        match self {
            SrcValue::Int(n) => *n as i64,
            SrcValue::Ptr(p) => p.a,
        }
    }

    /// The value with its annotation dropped.
    pub fn erased(&self) -> SrcValue {
        match self {
            SrcValue::Int(n) => SrcValue::Int(*n),
            SrcValue::Ptr(p) => SrcValue::Int(p.a as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
pub enum SrcEvent {
    Alloc { v: SrcValue },
    Free { v: SrcValue },
    Read { ty: SrcType, v: SrcValue },
    Write { ty: SrcType, v: SrcValue },
}

impl SrcEvent {
    pub fn value(&self) -> &SrcValue {
        match self {
            SrcEvent::Alloc { v }
            | SrcEvent::Free { v }
            | SrcEvent::Read { v, .. }
            | SrcEvent::Write { v, .. } => v,
        }
    }
}

pub type SrcTrace = Vec<SrcEvent>;

pub fn src_trace_to_jsonl(t: &[SrcEvent]) -> String {
    let mut s = String::new();
    for e in t {
        s.push_str(&serde_json::to_string(e).expect("event serializes"));
        s.push('\n');
    }
    s
}

/// Failures of the host running the program. None of these is a memory
/// safety verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "error", rename_all = "kebab-case")]
pub enum SrcHostError {
    #[error("access to cell {addr} outside the heap")]
    HeapRange { addr: i64 },
    #[error("division by zero")]
    DivideByZero,
    #[error("integer overflow in division")]
    IntegerOverflow,
    #[error("allocation of {cells} cells")]
    BadAllocSize { cells: i64 },
    #[error("heap exhausted")]
    OutOfMemory,
    #[error("call to imported function `{name}`")]
    Import { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SrcOutcome {
    Returned { value: SrcValue },
    HostError { error: SrcHostError },
    Budget,
}

/// Heaps never grow past this many cells.
pub const HEAP_CAP: usize = 1 << 22;

/// First-fit allocator over cell ranges. Zero-length requests reserve one
/// cell of address space so that live allocations have distinct bases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SrcAllocator {
    free: BTreeMap<usize, usize>,
    live: BTreeMap<usize, usize>,
    next_id: u32,
}

impl SrcAllocator {
    fn new(heap: usize) -> SrcAllocator {
        let mut free = BTreeMap::new();
        if heap > 0 {
            free.insert(0, heap);
        }
        SrcAllocator {
            free,
            live: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Live allocations as base ↦ reserved cells.
    pub fn live(&self) -> &BTreeMap<usize, usize> {
        &self.live
    }

    /// Returns the base and id of a fresh allocation, growing `heap` if no
    /// free range fits.
    fn alloc(&mut self, heap: &mut Vec<SrcValue>, cells: usize) -> Option<(usize, u32)> {
        let need = cells.max(1);
        let found = self
            .free
            .iter()
            .find(|(_, len)| **len >= need)
            .map(|(s, l)| (*s, *l));
        let base = match found {
            Some((s, l)) => {
                self.free.remove(&s);
                if l > need {
                    self.free.insert(s + need, l - need);
                }
                s
            }
            None => {
                // Extend the trailing free range, if any, to the needed size.
                let tail = self
                    .free
                    .iter()
                    .next_back()
                    .filter(|(s, l)| *s + *l == heap.len())
                    .map(|(s, _)| *s);
                let base = tail.unwrap_or(heap.len());
                if base + need > HEAP_CAP {
                    return None;
                }
                if let Some(s) = tail {
                    self.free.remove(&s);
                }
                heap.resize(base + need, SrcValue::Int(0));
                base
            }
        };
        for c in &mut heap[base..base + need] {
            *c = SrcValue::Int(0);
        }
        self.live.insert(base, need);
        let id = self.next_id;
        self.next_id += 1;
        Some((base, id))
    }

    /// Releases the live allocation starting at `addr`; anything else is
    /// dropped silently.
    fn free(&mut self, addr: i64) -> bool {
        let Ok(base) = usize::try_from(addr) else {
            return false;
        };
        let Some(len) = self.live.remove(&base) else {
            return false;
        };
        let mut start = base;
        let mut total = len;
        if let Some(r) = self.free.remove(&(base + len)) {
            total += r;
        }
        if let Some((&s, &l)) = self.free.range(..base).next_back() {
            if s + l == base {
                self.free.remove(&s);
                start = s;
                total += l;
            }
        }
        self.free.insert(start, total);
        true
    }
}

#[derive(Debug, Clone)]
pub struct SrcConfig {
    pub step_budget: u64,
    pub max_depth: usize,
    /// When false, every pointer is produced as a bare integer.
    pub annotate: bool,
}

impl Default for SrcConfig {
    fn default() -> Self {
        SrcConfig {
            step_budget: DEFAULT_STEP_BUDGET,
            max_depth: DEFAULT_MAX_DEPTH,
            annotate: true,
        }
    }
}

enum Ctrl<'m> {
    Eval(&'m TExpr),
    Value(SrcValue),
}

enum Kont<'m> {
    Seq(&'m TExpr),
    BinL(SrcOp, &'m TExpr),
    BinR(SrcOp, i32),
    ArithL(bool, i64, &'m TExpr),
    ArithR(bool, i64, SrcValue),
    Assign(u32),
    CallArg {
        func: u32,
        bind: u32,
        body: &'m TExpr,
    },
    CallRet {
        bind: u32,
        body: &'m TExpr,
    },
    Deref(&'m SrcType),
    WriteL(&'m TExpr),
    WriteR(SrcValue, &'m SrcType),
    If(&'m TExpr, &'m TExpr),
    Field {
        off: i64,
        w: WordType,
        len: u32,
    },
    MallocArray(&'m SrcType),
    Free,
}

pub struct SrcMachine<'m> {
    m: &'m CheckedModule,
    heap: Vec<SrcValue>,
    alloc: SrcAllocator,
    frames: Vec<Vec<SrcValue>>,
    kont: Vec<Kont<'m>>,
    ctrl: Option<Ctrl<'m>>,
    annotate: bool,
    max_depth: usize,
    outcome: Option<SrcOutcome>,
}

pub enum SrcStep {
    Continue(Option<SrcEvent>),
    Done(SrcOutcome),
}

impl<'m> SrcMachine<'m> {
    pub fn new(m: &'m CheckedModule, cfg: &SrcConfig) -> SrcMachine<'m> {
        let heap = vec![SrcValue::Int(0); m.heap as usize];
        let main = &m.funcs[m.main];
        let mut frame = vec![zero_of(&main.param)];
        frame.extend(main.vars.iter().map(zero_of));
        SrcMachine {
            m,
            alloc: SrcAllocator::new(heap.len()),
            heap,
            frames: vec![frame],
            kont: Vec::new(),
            ctrl: Some(Ctrl::Eval(&main.body)),
            annotate: cfg.annotate,
            max_depth: cfg.max_depth,
            outcome: None,
        }
    }

    pub fn heap(&self) -> &[SrcValue] {
        &self.heap
    }

    pub fn allocator(&self) -> &SrcAllocator {
        &self.alloc
    }

    fn locals(&mut self) -> &mut Vec<SrcValue> {
        self.frames.last_mut().expect("frame")
    }

    fn finish(&mut self, o: SrcOutcome) -> SrcStep {
        self.outcome = Some(o.clone());
        self.ctrl = None;
        SrcStep::Done(o)
    }

    fn host(&mut self, error: SrcHostError, ev: Option<SrcEvent>) -> SrcStep {
        self.outcome = Some(SrcOutcome::HostError { error });
        self.ctrl = None;
        // The event happened even though the machine cannot go on.
        SrcStep::Continue(ev)
    }

    fn ptr(&self, p: SrcPtr) -> SrcValue {
        if self.annotate {
            SrcValue::Ptr(p)
        } else {
            SrcValue::Int(p.a as i32)
        }
    }

    fn cell(&self, a: i64) -> Option<usize> {
        usize::try_from(a).ok().filter(|&a| a < self.heap.len())
    }

    fn malloc(&mut self, cells: i64, len: u32, w: WordType) -> SrcStep {
        let Ok(n) = usize::try_from(cells) else {
            return self.host(SrcHostError::BadAllocSize { cells }, None);
        };
        let Some((base, id)) = self.alloc.alloc(&mut self.heap, n) else {
            return self.host(SrcHostError::OutOfMemory, None);
        };
        let a = base as i64;
        let v = self.ptr(SrcPtr {
            a,
            b: a,
            len,
            w,
            id,
        });
        self.ctrl = Some(Ctrl::Value(v.clone()));
        SrcStep::Continue(Some(SrcEvent::Alloc { v }))
    }

    pub fn step(&mut self) -> SrcStep {
        if let Some(o) = &self.outcome {
            return SrcStep::Done(o.clone());
        }
        let Some(ctrl) = self.ctrl.take() else {
            unreachable!("machine without control and outcome")
        };
        match ctrl {
            Ctrl::Eval(e) => self.eval(e),
            Ctrl::Value(v) => self.apply(v),
        }
    }

    fn eval(&mut self, e: &'m TExpr) -> SrcStep {
        let next = match &e.kind {
            TKind::Int(n) => Ctrl::Value(SrcValue::Int(*n)),
            TKind::Var(i) => Ctrl::Value(self.locals()[*i as usize].clone()),
            TKind::Seq(a, b) => {
                self.kont.push(Kont::Seq(b));
                Ctrl::Eval(a)
            }
            TKind::Bin(op, a, b) => {
                self.kont.push(Kont::BinL(*op, b));
                Ctrl::Eval(a)
            }
            TKind::PtrArith {
                sub,
                ptr,
                n,
                pointee,
            } => {
                let scale = self.m.cells(pointee) as i64;
                self.kont.push(Kont::ArithL(*sub, scale, n));
                Ctrl::Eval(ptr)
            }
            TKind::Assign(i, v) => {
                self.kont.push(Kont::Assign(*i));
                Ctrl::Eval(v)
            }
            TKind::Call {
                func,
                arg,
                bind,
                body,
                ..
            } => {
                self.kont.push(Kont::CallArg {
                    func: *func,
                    bind: *bind,
                    body,
                });
                Ctrl::Eval(arg)
            }
            TKind::Deref(p) => {
                self.kont.push(Kont::Deref(&e.ty));
                Ctrl::Eval(p)
            }
            TKind::Write(p, v) => {
                self.kont.push(Kont::WriteL(v));
                Ctrl::Eval(p)
            }
            TKind::If(c, t, f) => {
                self.kont.push(Kont::If(t, f));
                Ctrl::Eval(c)
            }
            TKind::Field { ptr, strukt, field } => {
                let off = self.m.field_cell_offset(strukt, *field) as i64;
                let (w, len) = self.m.field_view(strukt, *field);
                self.kont.push(Kont::Field { off, w, len });
                Ctrl::Eval(ptr)
            }
            TKind::MallocArray(t, n) => {
                self.kont.push(Kont::MallocArray(t));
                Ctrl::Eval(n)
            }
            TKind::MallocSingle(w) => {
                let cells = self.m.cells(w) as i64;
                return self.malloc(cells, 1, w.clone());
            }
            TKind::Free(p) => {
                self.kont.push(Kont::Free);
                Ctrl::Eval(p)
            }
            TKind::CoerceIntToPtr(v) => Ctrl::Eval(v),
        };
        self.ctrl = Some(next);
        SrcStep::Continue(None)
    }

    fn apply(&mut self, v: SrcValue) -> SrcStep {
        let Some(k) = self.kont.pop() else {
            if self.frames.len() == 1 {
                return self.finish(SrcOutcome::Returned { value: v });
            }
            unreachable!("function frame without continuation")
        };
        let int = |v: &SrcValue| match v {
            SrcValue::Int(n) => *n,
            SrcValue::Ptr(p) => p.a as i32,
        };
        let next = match k {
            Kont::Seq(b) => Ctrl::Eval(b),
            Kont::BinL(op, b) => {
                self.kont.push(Kont::BinR(op, int(&v)));
                Ctrl::Eval(b)
            }
            Kont::BinR(op, x) => {
                let y = int(&v);
                let r = match op {
                    SrcOp::Add => x.wrapping_add(y),
                    SrcOp::Sub => x.wrapping_sub(y),
                    SrcOp::Mul => x.wrapping_mul(y),
                    SrcOp::Div => {
                        if y == 0 {
                            return self.host(SrcHostError::DivideByZero, None);
                        }
                        match x.checked_div(y) {
                            Some(r) => r,
                            None => return self.host(SrcHostError::IntegerOverflow, None),
                        }
                    }
                    SrcOp::Eq => (x == y) as i32,
                    SrcOp::Lt => (x < y) as i32,
                };
                Ctrl::Value(SrcValue::Int(r))
            }
            Kont::ArithL(sub, scale, n) => {
                self.kont.push(Kont::ArithR(sub, scale, v));
                Ctrl::Eval(n)
            }
            Kont::ArithR(sub, scale, p) => {
                let n = int(&v) as i64;
                let d = if sub { -n * scale } else { n * scale };
                Ctrl::Value(match p {
                    SrcValue::Int(k) => SrcValue::Int(k.wrapping_add(d as i32)),
                    SrcValue::Ptr(p) => SrcValue::Ptr(SrcPtr { a: p.a + d, ..p }),
                })
            }
            Kont::Assign(i) => {
                self.locals()[i as usize] = v;
                Ctrl::Value(SrcValue::Int(0))
            }
            Kont::CallArg { func, bind, body } => {
                let nimp = self.m.imports.len() as u32;
                if func < nimp {
                    let name = self.m.imports[func as usize].name.clone();
                    return self.host(SrcHostError::Import { name }, None);
                }
                if self.frames.len() >= self.max_depth {
                    return self.finish(SrcOutcome::Budget);
                }
                let f = &self.m.funcs[(func - nimp) as usize];
                let mut frame = vec![v];
                frame.extend(f.vars.iter().map(zero_of));
                self.frames.push(frame);
                self.kont.push(Kont::CallRet { bind, body });
                Ctrl::Eval(&f.body)
            }
            Kont::CallRet { bind, body } => {
                self.frames.pop();
                self.locals()[bind as usize] = v;
                Ctrl::Eval(body)
            }
            Kont::Deref(ty) => {
                let ev = SrcEvent::Read {
                    ty: ty.clone(),
                    v: v.clone(),
                };
                let Some(a) = self.cell(v.addr()) else {
                    return self.host(SrcHostError::HeapRange { addr: v.addr() }, Some(ev));
                };
                let cell = self.heap[a].clone();
                let r = match ty {
                    SrcType::Int => cell.erased(),
                    SrcType::Ptr(_) => cell,
                };
                self.ctrl = Some(Ctrl::Value(r));
                return SrcStep::Continue(Some(ev));
            }
            Kont::WriteL(val) => {
                self.kont.push(Kont::WriteR(v, &val.ty));
                Ctrl::Eval(val)
            }
            Kont::WriteR(p, ty) => {
                let ev = SrcEvent::Write {
                    ty: ty.clone(),
                    v: p.clone(),
                };
                let Some(a) = self.cell(p.addr()) else {
                    return self.host(SrcHostError::HeapRange { addr: p.addr() }, Some(ev));
                };
                self.heap[a] = v;
                self.ctrl = Some(Ctrl::Value(SrcValue::Int(0)));
                return SrcStep::Continue(Some(ev));
            }
            Kont::If(t, f) => Ctrl::Eval(if int(&v) != 0 { t } else { f }),
            Kont::Field { off, w, len } => Ctrl::Value(match v {
                SrcValue::Int(n) => SrcValue::Int(n.wrapping_add(off as i32)),
                SrcValue::Ptr(p) => SrcValue::Ptr(SrcPtr {
                    a: p.a + off,
                    b: p.b + off,
                    len,
                    w,
                    id: p.id,
                }),
            }),
            Kont::MallocArray(t) => {
                let n = int(&v);
                if n < 0 {
                    return self.host(SrcHostError::BadAllocSize { cells: n as i64 }, None);
                }
                return self.malloc(n as i64, n as u32, WordType::Scalar(t.clone()));
            }
            Kont::Free => {
                self.alloc.free(v.addr());
                self.ctrl = Some(Ctrl::Value(SrcValue::Int(0)));
                return SrcStep::Continue(Some(SrcEvent::Free { v }));
            }
        };
        self.ctrl = Some(next);
        SrcStep::Continue(None)
    }
}

fn zero_of(_: &SrcType) -> SrcValue {
    SrcValue::Int(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrcRunResult {
    pub trace: SrcTrace,
    pub outcome: SrcOutcome,
    pub steps: u64,
}

pub fn src_run(m: &CheckedModule, cfg: &SrcConfig) -> SrcRunResult {
    let mut mach = SrcMachine::new(m, cfg);
    let mut trace = Vec::new();
    let mut steps = 0;
    loop {
        if steps >= cfg.step_budget {
            return SrcRunResult {
                trace,
                outcome: SrcOutcome::Budget,
                steps,
            };
        }
        steps += 1;
        match mach.step() {
            SrcStep::Continue(ev) => trace.extend(ev),
            SrcStep::Done(outcome) => {
                return SrcRunResult {
                    trace,
                    outcome,
                    steps,
                }
            }
        }
    }
}

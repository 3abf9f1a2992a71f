//! Small-step interpreter emitting memory events.
//!
//! A [`Machine`] is a store plus a stack of frames. Each frame has its own
//! locals and operand stack and a stack of instruction cursors, one per
//! enclosing `if` arm. Reaching the end of a function body returns.
//! Any failed safety premise emits a single [`Event::Trap`] and halts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baggy::BaggyMemory;
use crate::bytecode::{BinOp, FuncDef, Instr, Literal, ModuleDef, ValueType};
use crate::segmem::{Handle, SegmentMemory};
use crate::trap::Trap;
use crate::typecheck::WellTyped;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    Handle(Handle),
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::I32(_) => ValueType::I32,
            Value::I64(_) => ValueType::I64,
            Value::F32(_) => ValueType::F32,
            Value::F64(_) => ValueType::F64,
            Value::Handle(_) => ValueType::Handle,
        }
    }

    /// Zero of each type; handles start as the invalid null handle.
    pub fn zero(ty: ValueType) -> Value {
        match ty {
            ValueType::I32 => Value::I32(0),
            ValueType::I64 => Value::I64(0),
            ValueType::F32 => Value::F32(0.0),
            ValueType::F64 => Value::F64(0.0),
            ValueType::Handle => Value::Handle(Handle::NULL),
        }
    }

    pub fn from_literal(ty: ValueType, lit: Literal) -> Value {
        match (ty, lit) {
            (ValueType::I32, Literal::Int(v)) => Value::I32(v as i32),
            (ValueType::I64, Literal::Int(v)) => Value::I64(v),
            (ValueType::F32, Literal::Float(v)) => Value::F32(v as f32),
            (ValueType::F64, Literal::Float(v)) => Value::F64(v),
            (ValueType::F32, Literal::Int(v)) => Value::F32(v as f32),
            (ValueType::F64, Literal::Int(v)) => Value::F64(v as f64),
            (_, _) => panic!("no {ty} literal"),
        }
    }

    /// Little-endian bytes of a non-handle value.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Value::I32(v) => v.to_le_bytes().to_vec(),
            Value::I64(v) => v.to_le_bytes().to_vec(),
            Value::F32(v) => v.to_le_bytes().to_vec(),
            Value::F64(v) => v.to_le_bytes().to_vec(),
            Value::Handle(_) => panic!("handles have no untagged byte form"),
        }
    }

    pub fn from_le_bytes(ty: ValueType, b: &[u8]) -> Value {
        match ty {
            ValueType::I32 => Value::I32(i32::from_le_bytes(b.try_into().expect("4 bytes"))),
            ValueType::I64 => Value::I64(i64::from_le_bytes(b.try_into().expect("8 bytes"))),
            ValueType::F32 => Value::F32(f32::from_le_bytes(b.try_into().expect("4 bytes"))),
            ValueType::F64 => Value::F64(f64::from_le_bytes(b.try_into().expect("8 bytes"))),
            ValueType::Handle => panic!("handles have no untagged byte form"),
        }
    }

    pub fn as_i32(&self) -> i32 {
        match self {
            Value::I32(v) => *v,
            _ => panic!("expected i32, found {self}"),
        }
    }

    pub fn as_handle(&self) -> Handle {
        match self {
            Value::Handle(h) => *h,
            _ => panic!("expected handle, found {self}"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I32(v) => write!(f, "i32:{v}"),
            Value::I64(v) => write!(f, "i64:{v}"),
            Value::F32(v) => write!(f, "f32:{v}"),
            Value::F64(v) => write!(f, "f64:{v}"),
            Value::Handle(h) => write!(f, "handle:{h}"),
        }
    }
}

/// A memory-relevant action. Silent steps produce no event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "EventRepr", into = "EventRepr")]
pub enum Event {
    Read(ValueType, Handle),
    Write(ValueType, Handle),
    SAlloc(Handle),
    SFree(Handle),
    Trap,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
enum EventRepr {
    Salloc {
        #[serde(flatten)]
        h: Handle,
    },
    Read {
        ty: ValueType,
        #[serde(flatten)]
        h: Handle,
    },
    Write {
        ty: ValueType,
        #[serde(flatten)]
        h: Handle,
    },
    Sfree {
        #[serde(flatten)]
        h: Handle,
    },
    Trap,
}

impl From<EventRepr> for Event {
    fn from(r: EventRepr) -> Event {
        match r {
            EventRepr::Salloc { h } => Event::SAlloc(h),
            EventRepr::Read { ty, h } => Event::Read(ty, h),
            EventRepr::Write { ty, h } => Event::Write(ty, h),
            EventRepr::Sfree { h } => Event::SFree(h),
            EventRepr::Trap => Event::Trap,
        }
    }
}

impl From<Event> for EventRepr {
    fn from(e: Event) -> EventRepr {
        match e {
            Event::SAlloc(h) => EventRepr::Salloc { h },
            Event::Read(ty, h) => EventRepr::Read { ty, h },
            Event::Write(ty, h) => EventRepr::Write { ty, h },
            Event::SFree(h) => EventRepr::Sfree { h },
            Event::Trap => EventRepr::Trap,
        }
    }
}

pub type Trace = Vec<Event>;

/// One JSON object per line, each line newline-terminated.
pub fn trace_to_jsonl(trace: &[Event]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Segment memory as seen by the interpreter. Both backends exchange the
/// uniform [`Handle`] representation.
pub trait SegmentBackend {
    fn new_segment(&mut self, size: u32) -> Result<Handle, Trap>;
    fn free_segment(&mut self, h: Handle) -> Result<(), Trap>;
    fn load(&mut self, h: Handle, ty: ValueType) -> Result<Value, Trap>;
    fn store(&mut self, h: Handle, v: Value) -> Result<(), Trap>;
    fn handle_add(&mut self, h: Handle, delta: i32) -> Result<Handle, Trap>;
    fn slice(&mut self, h: Handle, o1: i32, o2: i32) -> Result<Handle, Trap>;
    /// Raw bytes of the whole segment store, for post-mortem inspection.
    fn dump(&self) -> Vec<u8>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Tagged,
    Baggy,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Backend, String> {
        match s {
            "tagged" => Ok(Backend::Tagged),
            "baggy" => Ok(Backend::Baggy),
            _ => Err(format!("unknown backend `{s}` (expected tagged or baggy)")),
        }
    }
}

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
pub const DEFAULT_MAX_DEPTH: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub backend: Backend,
    /// Overrides the module's declared segment size.
    pub segment_size: Option<u32>,
    pub step_budget: u64,
    pub max_depth: usize,
    /// Largest store the baggy backend may grow to.
    pub baggy_cap: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: Backend::Tagged,
            segment_size: None,
            step_budget: DEFAULT_STEP_BUDGET,
            max_depth: DEFAULT_MAX_DEPTH,
            baggy_cap: 1 << 26,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "lowercase")]
pub enum Outcome {
    Returned(Vec<Value>),
    Trapped(Trap),
    /// The step budget or the call-depth limit ran out.
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Trace,
    pub outcome: Outcome,
    pub steps: u64,
    /// Segment store contents when execution stopped.
    pub dump: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InitError {
    #[error("module has {0} unresolved imports; link it first")]
    NotWhole(usize),
}

#[derive(Debug, Clone)]
struct Frame<'m> {
    locals: Vec<Value>,
    stack: Vec<Value>,
    blocks: Vec<(&'m [Instr], usize)>,
    results: usize,
}

impl<'m> Frame<'m> {
    fn enter(f: &'m FuncDef, args: Vec<Value>) -> Frame<'m> {
        let mut locals = args;
        locals.extend(f.locals.iter().map(|&t| Value::zero(t)));
        Frame {
            locals,
            stack: Vec::new(),
            blocks: vec![(&f.body, 0)],
            results: f.ty.results.len(),
        }
    }

    fn pop(&mut self) -> Value {
        self.stack.pop().expect("well-typed code never underflows")
    }

    fn pop_i32(&mut self) -> i32 {
        self.pop().as_i32()
    }

    fn pop_handle(&mut self) -> Handle {
        self.pop().as_handle()
    }
}

/// Result of one small step.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Continue(Option<Event>),
    Done(Outcome),
}

pub struct Machine<'m, B> {
    module: &'m ModuleDef,
    linear: Vec<u8>,
    pub segments: B,
    frames: Vec<Frame<'m>>,
    max_depth: usize,
    finished: Option<Outcome>,
}

/// Initial configuration: zeroed memories and one frame for function 0.
pub fn init_state<B: SegmentBackend>(
    m: WellTyped<'_>,
    segments: B,
) -> Result<Machine<'_, B>, InitError> {
    let module = m.module();
    if !module.is_whole() {
        return Err(InitError::NotWhole(module.imports.len()));
    }
    Ok(Machine {
        module,
        linear: vec![0; module.heap_size as usize],
        segments,
        frames: vec![Frame::enter(&module.funcs[0], vec![])],
        max_depth: DEFAULT_MAX_DEPTH,
        finished: None,
    })
}

fn binop(ty: ValueType, op: BinOp, a: Value, b: Value) -> Result<Value, Trap> {
    use Value::*;
    let bool32 = |b: bool| I32(b as i32);
    Ok(match (a, b) {
        (I32(x), I32(y)) => match op {
            BinOp::Add => I32(x.wrapping_add(y)),
            BinOp::Sub => I32(x.wrapping_sub(y)),
            BinOp::Mul => I32(x.wrapping_mul(y)),
            BinOp::Div if y == 0 => return Err(Trap::DivideByZero),
            BinOp::Div => I32(x.checked_div(y).ok_or(Trap::IntegerOverflow)?),
            BinOp::And => I32(x & y),
            BinOp::Or => I32(x | y),
            BinOp::Xor => I32(x ^ y),
            BinOp::Eq => bool32(x == y),
            BinOp::Lt => bool32(x < y),
        },
        (I64(x), I64(y)) => match op {
            BinOp::Add => I64(x.wrapping_add(y)),
            BinOp::Sub => I64(x.wrapping_sub(y)),
            BinOp::Mul => I64(x.wrapping_mul(y)),
            BinOp::Div if y == 0 => return Err(Trap::DivideByZero),
            BinOp::Div => I64(x.checked_div(y).ok_or(Trap::IntegerOverflow)?),
            BinOp::And => I64(x & y),
            BinOp::Or => I64(x | y),
            BinOp::Xor => I64(x ^ y),
            BinOp::Eq => bool32(x == y),
            BinOp::Lt => bool32(x < y),
        },
        (F32(x), F32(y)) => match op {
            BinOp::Add => F32(x + y),
            BinOp::Sub => F32(x - y),
            BinOp::Mul => F32(x * y),
            BinOp::Div => F32(x / y),
            BinOp::Eq => bool32(x == y),
            BinOp::Lt => bool32(x < y),
            _ => unreachable!("int-only op on {ty}"),
        },
        (F64(x), F64(y)) => match op {
            BinOp::Add => F64(x + y),
            BinOp::Sub => F64(x - y),
            BinOp::Mul => F64(x * y),
            BinOp::Div => F64(x / y),
            BinOp::Eq => bool32(x == y),
            BinOp::Lt => bool32(x < y),
            _ => unreachable!("int-only op on {ty}"),
        },
        _ => unreachable!("ill-typed {ty} binop"),
    })
}

impl<'m, B: SegmentBackend> Machine<'m, B> {
    pub fn set_max_depth(&mut self, depth: usize) {
        self.max_depth = depth;
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn linear(&self) -> &[u8] {
        &self.linear
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.finished.as_ref()
    }

    fn trap(&mut self, t: Trap) -> Step {
        self.frames.clear();
        self.finished = Some(Outcome::Trapped(t));
        Step::Continue(Some(Event::Trap))
    }

    fn done(&mut self, o: Outcome) -> Step {
        self.finished = Some(o.clone());
        Step::Done(o)
    }

    /// Pops the active frame, handing its results to the caller.
    fn do_return(&mut self) -> Step {
        let mut f = self.frames.pop().expect("active frame");
        let results = f.stack.split_off(f.stack.len() - f.results);
        match self.frames.last_mut() {
            Some(caller) => {
                caller.stack.extend(results);
                Step::Continue(None)
            }
            None => self.done(Outcome::Returned(results)),
        }
    }

    pub fn step(&mut self) -> Step {
        if let Some(o) = &self.finished {
            return Step::Done(o.clone());
        }
        let frame = self.frames.last_mut().expect("running machine has a frame");
        let Some(&(code, pc)) = frame.blocks.last() else {
            return self.do_return();
        };
        let Some(instr) = code.get(pc) else {
            frame.blocks.pop();
            return Step::Continue(None);
        };
        frame.blocks.last_mut().expect("block").1 += 1;
        let event = match instr {
            Instr::Nop => None,
            Instr::Trap => return self.trap(Trap::Unreachable),
            Instr::Const(t, l) => {
                frame.stack.push(Value::from_literal(*t, *l));
                None
            }
            Instr::BinOp(t, op) => {
                let b = frame.pop();
                let a = frame.pop();
                match binop(*t, *op, a, b) {
                    Ok(v) => frame.stack.push(v),
                    Err(t) => return self.trap(t),
                }
                None
            }
            Instr::Get(n) => {
                frame.stack.push(frame.locals[*n as usize]);
                None
            }
            Instr::Set(n) => {
                let v = frame.pop();
                frame.locals[*n as usize] = v;
                None
            }
            Instr::Load(t) => {
                assert_ne!(*t, ValueType::Handle, "linear handle load in checked code");
                let a = frame.pop_i32() as u32 as usize;
                let n = t.size() as usize;
                if a + n > self.linear.len() {
                    return self.trap(Trap::LinearBounds);
                }
                frame
                    .stack
                    .push(Value::from_le_bytes(*t, &self.linear[a..a + n]));
                None
            }
            Instr::Store(t) => {
                assert_ne!(*t, ValueType::Handle, "linear handle store in checked code");
                let v = frame.pop();
                let a = frame.pop_i32() as u32 as usize;
                let n = t.size() as usize;
                if a + n > self.linear.len() {
                    return self.trap(Trap::LinearBounds);
                }
                self.linear[a..a + n].copy_from_slice(&v.to_le_bytes());
                None
            }
            Instr::If(then, els) => {
                let c = frame.pop_i32();
                frame.blocks.push((if c != 0 { then } else { els }, 0));
                None
            }
            Instr::Call(k) => {
                let f = &self.module.funcs[*k as usize];
                let n = f.ty.params.len();
                let args = frame.stack.split_off(frame.stack.len() - n);
                if self.frames.len() >= self.max_depth {
                    return self.done(Outcome::Budget);
                }
                self.frames.push(Frame::enter(f, args));
                None
            }
            Instr::Return => return self.do_return(),
            Instr::SegLoad(t) => {
                let h = frame.pop_handle();
                match self.segments.load(h, *t) {
                    Ok(v) => {
                        debug_assert_eq!(v.ty(), *t);
                        self.frames.last_mut().expect("frame").stack.push(v);
                        Some(Event::Read(*t, h))
                    }
                    Err(e) => return self.trap(e),
                }
            }
            Instr::SegStore(t) => {
                let v = frame.pop();
                let h = frame.pop_handle();
                match self.segments.store(h, v) {
                    Ok(()) => Some(Event::Write(*t, h)),
                    Err(e) => return self.trap(e),
                }
            }
            Instr::Slice => {
                let o2 = frame.pop_i32();
                let o1 = frame.pop_i32();
                let h = frame.pop_handle();
                match self.segments.slice(h, o1, o2) {
                    Ok(h) => self.frames.last_mut().expect("frame").stack.push(Value::Handle(h)),
                    Err(e) => return self.trap(e),
                }
                None
            }
            Instr::NewSegment => {
                let n = frame.pop_i32() as u32;
                match self.segments.new_segment(n) {
                    Ok(h) => {
                        self.frames.last_mut().expect("frame").stack.push(Value::Handle(h));
                        Some(Event::SAlloc(h))
                    }
                    Err(e) => return self.trap(e),
                }
            }
            Instr::HandleAdd => {
                let d = frame.pop_i32();
                let h = frame.pop_handle();
                match self.segments.handle_add(h, d) {
                    Ok(h) => self.frames.last_mut().expect("frame").stack.push(Value::Handle(h)),
                    Err(e) => return self.trap(e),
                }
                None
            }
            Instr::SegFree => {
                let h = frame.pop_handle();
                match self.segments.free_segment(h) {
                    Ok(()) => Some(Event::SFree(h)),
                    Err(e) => return self.trap(e),
                }
            }
        };
        Step::Continue(event)
    }

    /// Steps until termination, collecting events.
    pub fn run_to_end(&mut self, budget: u64) -> (Trace, Outcome, u64) {
        let mut trace = Vec::new();
        let mut steps = 0;
        loop {
            if steps >= budget {
                let o = Outcome::Budget;
                self.finished = Some(o.clone());
                return (trace, o, steps);
            }
            match self.step() {
                Step::Continue(e) => {
                    steps += 1;
                    if let Some(e) = e {
                        trace.push(e);
                    }
                    if let Some(o) = &self.finished {
                        return (trace, o.clone(), steps);
                    }
                }
                Step::Done(o) => return (trace, o, steps),
            }
        }
    }
}

fn run_with<B: SegmentBackend>(
    m: WellTyped<'_>,
    segments: B,
    cfg: &RunConfig,
) -> Result<RunResult, InitError> {
    let mut machine = init_state(m, segments)?;
    machine.set_max_depth(cfg.max_depth);
    let (trace, outcome, steps) = machine.run_to_end(cfg.step_budget);
    Ok(RunResult {
        trace,
        outcome,
        steps,
        dump: machine.segments.dump(),
    })
}

/// Runs a whole well-typed module from function 0.
pub fn run(m: WellTyped<'_>, cfg: &RunConfig) -> Result<RunResult, InitError> {
    let size = cfg.segment_size.unwrap_or(m.segment_size);
    match cfg.backend {
        Backend::Tagged => run_with(m, SegmentMemory::new(size), cfg),
        Backend::Baggy => run_with(m, BaggyMemory::new(size as u64, cfg.baggy_cap), cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("the context must be a whole module")]
    ContextNotWhole,
    #[error("import {index} needs context function {}, which does not exist", index + 1)]
    Missing { index: usize },
    #[error("import {index} has type {expected} but the context provides {found}")]
    TypeMismatch {
        index: usize,
        expected: crate::bytecode::FuncType,
        found: crate::bytecode::FuncType,
    },
}

fn remap_calls(body: &[Instr], f: &dyn Fn(u32) -> u32) -> Vec<Instr> {
    body.iter()
        .map(|i| match i {
            Instr::Call(k) => Instr::Call(f(*k)),
            Instr::If(t, e) => Instr::If(remap_calls(t, f), remap_calls(e, f)),
            other => other.clone(),
        })
        .collect()
}

/// Resolves `m`'s imports against the whole module `ctx`.
///
/// Function 0 of `ctx` is its own entry point; import `k` is implemented by
/// `ctx.funcs[k + 1]`. The result lists `m`'s functions first, so it keeps
/// `m`'s entry point.
pub fn link(m: &ModuleDef, ctx: &ModuleDef) -> Result<ModuleDef, LinkError> {
    if !ctx.is_whole() {
        return Err(LinkError::ContextNotWhole);
    }
    for (index, ty) in m.imports.iter().enumerate() {
        let f = ctx.funcs.get(index + 1).ok_or(LinkError::Missing { index })?;
        if f.ty != *ty {
            return Err(LinkError::TypeMismatch {
                index,
                expected: ty.clone(),
                found: f.ty.clone(),
            });
        }
    }
    let imports = m.imports.len() as u32;
    let own = m.funcs.len() as u32;
    let mut funcs: Vec<FuncDef> = m
        .funcs
        .iter()
        .map(|f| FuncDef {
            body: remap_calls(&f.body, &|k| if k < imports { own + 1 + k } else { k - imports }),
            ..f.clone()
        })
        .collect();
    funcs.extend(ctx.funcs.iter().map(|f| FuncDef {
        body: remap_calls(&f.body, &|j| own + j),
        ..f.clone()
    }));
    Ok(ModuleDef {
        funcs,
        imports: vec![],
        heap_size: m.heap_size.max(ctx.heap_size),
        segment_size: m.segment_size.max(ctx.segment_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse_module;
    use crate::typecheck::typecheck_module;

    fn run_text(src: &str) -> RunResult {
        let m = parse_module(src).unwrap();
        let wt = typecheck_module(&m).unwrap();
        run(wt, &RunConfig::default()).unwrap()
    }

    fn module(body: &str, locals: &str) -> String {
        format!("(module (segment 256) (heap 16) (func {locals} {body}))")
    }

    #[test]
    fn allocation_event() {
        let r = run_text(
            "(module (segment 64) (heap 0) (func (result handle) i32.const 8 new_segment return))",
        );
        let h = Handle::new(0, 0, 8, true, 0);
        assert_eq!(r.trace, vec![Event::SAlloc(h)]);
        assert_eq!(r.outcome, Outcome::Returned(vec![Value::Handle(h)]));
    }

    #[test]
    fn alloc_store_load_free() {
        let r = run_text(&module(
            "i32.const 8 new_segment set 0 get 0 i32.const 5 i32.segstore \
             get 0 i32.segload set 1 get 0 segfree",
            "(local handle i32)",
        ));
        let h = Handle::new(0, 0, 8, true, 0);
        assert_eq!(
            r.trace,
            vec![
                Event::SAlloc(h),
                Event::Write(ValueType::I32, h),
                Event::Read(ValueType::I32, h),
                Event::SFree(h)
            ]
        );
    }

    #[test]
    fn handle_add_and_slice() {
        let r = run_text(&module(
            "i32.const 64 new_segment i32.const 4 handle.add \
             i32.const 8 i32.const 16 slice return",
            "(result handle)",
        ));
        assert_eq!(
            r.outcome,
            Outcome::Returned(vec![Value::Handle(Handle::new(8, 4, 48, true, 0))])
        );
        let r = run_text(&module(
            "i32.const 64 new_segment i32.const 64 i32.const 64 slice return",
            "(result handle)",
        ));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::Slice));
        assert_eq!(r.trace.last(), Some(&Event::Trap));
    }

    #[test]
    fn null_handle_local_traps() {
        let r = run_text(&module("get 0 i32.segload set 1", "(local handle i32)"));
        assert_eq!(r.trace, vec![Event::Trap]);
        assert_eq!(r.outcome, Outcome::Trapped(Trap::Integrity));
    }

    #[test]
    fn overwritten_handle_is_invalid() {
        let r = run_text(&module(
            "i32.const 32 new_segment set 0 \
             get 0 get 0 handle.segstore \
             get 0 i32.const 0 i32.segstore \
             get 0 handle.segload set 1 \
             get 1 i32.segload set 2",
            "(local handle handle i32)",
        ));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::Integrity));
        assert_eq!(r.trace.len(), 5);
        assert_eq!(r.trace[4], Event::Trap);
    }

    #[test]
    fn unaligned_handle_load_traps() {
        let r = run_text(&module(
            "i32.const 48 new_segment i32.const 8 handle.add handle.segload set 0",
            "(local handle)",
        ));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::Integrity));
    }

    #[test]
    fn linear_bounds() {
        let r = run_text(&module("i32.const 14 i32.load set 0", "(local i32)"));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::LinearBounds));
        let r = run_text(&module("i32.const 12 i32.load set 0", "(local i32)"));
        assert_eq!(r.outcome, Outcome::Returned(vec![]));
    }

    #[test]
    fn arithmetic_faults() {
        let r = run_text(&module("i32.const 1 i32.const 0 i32.div_s set 0", "(local i32)"));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::DivideByZero));
        let r = run_text(&module(
            "i32.const -2147483648 i32.const -1 i32.div_s set 0",
            "(local i32)",
        ));
        assert_eq!(r.outcome, Outcome::Trapped(Trap::IntegerOverflow));
    }

    #[test]
    fn trivial_runs() {
        assert_eq!(run_text("(module (func))").trace, vec![]);
        assert_eq!(run_text("(module (func trap))").trace, vec![Event::Trap]);
    }

    #[test]
    fn recursion_hits_budget() {
        let r = run_text("(module (func call 0))");
        assert_eq!(r.outcome, Outcome::Budget);
    }

    #[test]
    fn calls_pass_arguments_and_results() {
        let r = run_text(
            "(module (func (result i32) i32.const 20 call 1 return) \
             (func (param i32) (result i32) get 0 i32.const 1 i32.add))",
        );
        assert_eq!(r.outcome, Outcome::Returned(vec![Value::I32(21)]));
    }

    #[test]
    fn imports_must_be_linked() {
        let m = parse_module("(module (import (param i32) (result i32)) (func))").unwrap();
        let wt = typecheck_module(&m).unwrap();
        assert!(matches!(
            run(wt, &RunConfig::default()),
            Err(InitError::NotWhole(1))
        ));
        let ctx = parse_module(
            "(module (func) (func (param i32) (result i32) get 0))",
        )
        .unwrap();
        let victim = parse_module(
            "(module (import (param i32) (result i32)) \
             (func (result i32) i32.const 3 call 0 return))",
        )
        .unwrap();
        let linked = link(&victim, &ctx).unwrap();
        let wt = typecheck_module(&linked).unwrap();
        assert_eq!(
            run(wt, &RunConfig::default()).unwrap().outcome,
            Outcome::Returned(vec![Value::I32(3)])
        );
        let bad = parse_module("(module (func) (func (param i64) (result i32) i32.const 0))")
            .unwrap();
        assert!(matches!(
            link(&victim, &bad),
            Err(LinkError::TypeMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn event_json_shape() {
        let h = Handle::new(0, 0, 8, true, 0);
        let text = trace_to_jsonl(&[Event::SAlloc(h), Event::Read(ValueType::I32, h), Event::Trap]);
        assert_eq!(
            text,
            "{\"ev\":\"salloc\",\"base\":0,\"offset\":0,\"bound\":8,\"valid\":true,\"id\":0}\n\
             {\"ev\":\"read\",\"ty\":\"i32\",\"base\":0,\"offset\":0,\"bound\":8,\"valid\":true,\"id\":0}\n\
             {\"ev\":\"trap\"}\n"
        );
        assert_eq!(
            trace_from_jsonl(&text).unwrap(),
            vec![Event::SAlloc(h), Event::Read(ValueType::I32, h), Event::Trap]
        );
    }

    #[test]
    fn baggy_backend_runs() {
        let m = parse_module(&module(
            "i32.const 24 new_segment i32.const 22 handle.add i32.const 1 i32.segstore",
            "",
        ))
        .unwrap();
        let wt = typecheck_module(&m).unwrap();
        let cfg = RunConfig {
            backend: Backend::Baggy,
            ..RunConfig::default()
        };
        // Writes past the requested 24 bytes but inside the 32-byte slot.
        let r = run(wt, &cfg).unwrap();
        assert_eq!(r.outcome, Outcome::Returned(vec![]));
        // The same write traps under precise bounds.
        let r = run(wt, &RunConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Trapped(Trap::Spatial));
    }
}

//! Stack typing for instructions, function bodies, and modules.
//!
//! Stack types are written bottom-first, so the last element is the top of
//! the operand stack. After `trap` or `return` the rest of a block is
//! unreachable and is accepted without checking.

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::bytecode::{BinOp, FuncType, Instr, ModuleDef, ValueType};

pub type StackType = Vec<ValueType>;

#[derive(Debug, Clone)]
pub struct TypingContext<'a> {
    pub locals: Vec<ValueType>,
    /// Imports followed by defined functions.
    pub functions: &'a [FuncType],
    pub results: Vec<ValueType>,
}

/// The stack effect of an instruction or sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Arrow {
    pub consumes: StackType,
    pub produces: StackType,
    /// Control never falls through (`trap`, `return`); `produces` is then
    /// meaningless and the stack afterwards is polymorphic.
    pub diverges: bool,
}

impl Arrow {
    fn new(consumes: StackType, produces: StackType) -> Arrow {
        Arrow {
            consumes,
            produces,
            diverges: false,
        }
    }

    /// Same effect, assuming `extra` more values below what it consumes.
    fn widen(&self, extra: &[ValueType]) -> Arrow {
        let mut consumes = extra.to_vec();
        consumes.extend(&self.consumes);
        let mut produces = extra.to_vec();
        produces.extend(&self.produces);
        Arrow {
            consumes,
            produces,
            diverges: self.diverges,
        }
    }
}

impl fmt::Display for Arrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ty = FuncType::new(self.consumes.clone(), self.produces.clone());
        if self.diverges {
            write!(f, "{} (diverges)", FuncType::new(self.consumes.clone(), vec![]))
        } else {
            write!(f, "{ty}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("`{0}.load`/`{0}.store` on linear memory would forge or leak handles")]
    HandleLinearAccess(ValueType),
    #[error("handles have no constants")]
    HandleConst,
    #[error("`{op:?}` is not defined on {ty}")]
    BadBinOp { op: BinOp, ty: ValueType },
    #[error("local index {0} out of range")]
    BadLocal(u32),
    #[error("function index {0} out of range")]
    BadFunction(u32),
    #[error("stack underflow at instruction {at}: needs {needed:?}, have {have:?}")]
    Underflow {
        at: usize,
        needed: StackType,
        have: StackType,
    },
    #[error("type mismatch at instruction {at}: expected {expected}, found {found}")]
    Mismatch {
        at: usize,
        expected: ValueType,
        found: ValueType,
    },
    #[error("`if` arms disagree: then {then}, else {els}")]
    IfArmMismatch { then: Arrow, els: Arrow },
    #[error("body leaves {found:?}, function returns {expected:?}")]
    ResultMismatch {
        expected: StackType,
        found: StackType,
    },
    #[error("module has no functions, so no entry point")]
    NoEntry,
    #[error("entry function must take no parameters")]
    EntryHasParams,
}

/// Checks that `consumes` can be popped from `stack` and applies `arrow`.
/// `None` is the polymorphic stack of unreachable code.
fn apply(stack: &mut Option<StackType>, arrow: &Arrow, at: usize) -> Result<(), TypeError> {
    let Some(s) = stack else { return Ok(()) };
    let n = arrow.consumes.len();
    if s.len() < n {
        return Err(TypeError::Underflow {
            at,
            needed: arrow.consumes.clone(),
            have: s.clone(),
        });
    }
    let top = &s[s.len() - n..];
    for (&expected, &found) in arrow.consumes.iter().zip(top) {
        if expected != found {
            return Err(TypeError::Mismatch {
                at,
                expected,
                found,
            });
        }
    }
    s.truncate(s.len() - n);
    if arrow.diverges {
        *stack = None;
    } else {
        s.extend(&arrow.produces);
    }
    Ok(())
}

/// Type of a single instruction under `ctx`.
pub fn type_instr(ctx: &TypingContext, i: &Instr) -> Result<Arrow, TypeError> {
    use ValueType::*;
    Ok(match i {
        Instr::Nop => Arrow::default(),
        Instr::Trap => Arrow {
            diverges: true,
            ..Arrow::default()
        },
        Instr::Const(t, _) => {
            if *t == Handle {
                return Err(TypeError::HandleConst);
            }
            Arrow::new(vec![], vec![*t])
        }
        Instr::BinOp(t, op) => {
            if !op.applies_to(*t) {
                return Err(TypeError::BadBinOp { op: *op, ty: *t });
            }
            Arrow::new(vec![*t, *t], vec![op.result_type(*t)])
        }
        Instr::Get(n) => {
            let t = *ctx.locals.get(*n as usize).ok_or(TypeError::BadLocal(*n))?;
            Arrow::new(vec![], vec![t])
        }
        Instr::Set(n) => {
            let t = *ctx.locals.get(*n as usize).ok_or(TypeError::BadLocal(*n))?;
            Arrow::new(vec![t], vec![])
        }
        Instr::Load(t) => {
            if *t == Handle {
                return Err(TypeError::HandleLinearAccess(*t));
            }
            Arrow::new(vec![I32], vec![*t])
        }
        Instr::Store(t) => {
            if *t == Handle {
                return Err(TypeError::HandleLinearAccess(*t));
            }
            Arrow::new(vec![I32, *t], vec![])
        }
        Instr::If(then, els) => {
            let a = infer_seq(ctx, then)?;
            let b = infer_seq(ctx, els)?;
            let mut arms = unify_arms(a, b)?;
            arms.consumes.push(I32);
            arms
        }
        Instr::Call(n) => {
            let ty = ctx
                .functions
                .get(*n as usize)
                .ok_or(TypeError::BadFunction(*n))?;
            Arrow::new(ty.params.clone(), ty.results.clone())
        }
        Instr::Return => Arrow {
            consumes: ctx.results.clone(),
            produces: vec![],
            diverges: true,
        },
        Instr::SegLoad(t) => Arrow::new(vec![Handle], vec![*t]),
        Instr::SegStore(t) => Arrow::new(vec![Handle, *t], vec![]),
        Instr::Slice => Arrow::new(vec![Handle, I32, I32], vec![Handle]),
        Instr::NewSegment => Arrow::new(vec![I32], vec![Handle]),
        Instr::HandleAdd => Arrow::new(vec![Handle, I32], vec![Handle]),
        Instr::SegFree => Arrow::new(vec![Handle], vec![]),
    })
}

/// The minimal stack effect of a sequence, used for `if` arms.
fn infer_seq(ctx: &TypingContext, body: &[Instr]) -> Result<Arrow, TypeError> {
    let mut consumes: StackType = Vec::new();
    let mut stack: StackType = Vec::new();
    for (at, i) in body.iter().enumerate() {
        let arrow = type_instr(ctx, i)?;
        for &want in arrow.consumes.iter().rev() {
            match stack.pop() {
                Some(found) if found != want => {
                    return Err(TypeError::Mismatch {
                        at,
                        expected: want,
                        found,
                    })
                }
                Some(_) => {}
                None => consumes.insert(0, want),
            }
        }
        if arrow.diverges {
            return Ok(Arrow {
                consumes,
                produces: vec![],
                diverges: true,
            });
        }
        stack.extend(arrow.produces);
    }
    Ok(Arrow::new(consumes, stack))
}

fn unify_arms(a: Arrow, b: Arrow) -> Result<Arrow, TypeError> {
    let mismatch = || TypeError::IfArmMismatch {
        then: a.clone(),
        els: b.clone(),
    };
    let (long, short) = if a.consumes.len() >= b.consumes.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    let extra = long.consumes.len() - short.consumes.len();
    if long.consumes[extra..] != short.consumes[..] {
        return Err(mismatch());
    }
    let short = short.widen(&long.consumes[..extra]);
    let long = long.clone();
    match (long.diverges, short.diverges) {
        (true, true) => Ok(long),
        (true, false) => Ok(short),
        (false, true) => Ok(long),
        (false, false) if long.produces == short.produces => Ok(long),
        _ => Err(mismatch()),
    }
}

/// Threads `input` through `body`; `None` means the end is unreachable.
pub fn type_body(
    ctx: &TypingContext,
    body: &[Instr],
    input: StackType,
) -> Result<Option<StackType>, TypeError> {
    let mut stack = Some(input);
    for (at, i) in body.iter().enumerate() {
        if stack.is_none() {
            break;
        }
        let arrow = type_instr(ctx, i)?;
        apply(&mut stack, &arrow, at)?;
    }
    Ok(stack)
}

/// A module that passed [`typecheck_module`].
#[derive(Debug, Clone, Copy)]
pub struct WellTyped<'m>(&'m ModuleDef);

impl<'m> WellTyped<'m> {
    pub fn module(&self) -> &'m ModuleDef {
        self.0
    }
}

impl Deref for WellTyped<'_> {
    type Target = ModuleDef;
    fn deref(&self) -> &ModuleDef {
        self.0
    }
}

/// All errors of a module; `func` is a defined-function index.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ModuleTypeError {
    pub errors: Vec<(Option<usize>, TypeError)>,
}

impl fmt::Display for ModuleTypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (func, e)) in self.errors.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            match func {
                Some(n) => write!(f, "func {n}: {e}")?,
                None => write!(f, "module: {e}")?,
            }
        }
        Ok(())
    }
}

pub fn typecheck_module(m: &ModuleDef) -> Result<WellTyped<'_>, ModuleTypeError> {
    let functions = m.func_types();
    let mut errors = Vec::new();
    match m.funcs.first() {
        None => errors.push((None, TypeError::NoEntry)),
        Some(f) if !f.ty.params.is_empty() => errors.push((Some(0), TypeError::EntryHasParams)),
        Some(_) => {}
    }
    for (k, f) in m.funcs.iter().enumerate() {
        let ctx = TypingContext {
            locals: f.local_types().collect(),
            functions: &functions,
            results: f.ty.results.clone(),
        };
        match type_body(&ctx, &f.body, vec![]) {
            Err(e) => errors.push((Some(k), e)),
            Ok(Some(end)) if end != f.ty.results => errors.push((
                Some(k),
                TypeError::ResultMismatch {
                    expected: f.ty.results.clone(),
                    found: end,
                },
            )),
            Ok(_) => {}
        }
    }
    if errors.is_empty() {
        Ok(WellTyped(m))
    } else {
        Err(ModuleTypeError { errors })
    }
}

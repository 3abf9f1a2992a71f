//! Type checking and elaboration of source modules.
//!
//! Integers are accepted wherever a pointer is expected; each such use is
//! wrapped in [`TKind::CoerceIntToPtr`]. Pointers are never accepted where an
//! integer is expected, which also rules out storing a pointer into an
//! integer cell.

use std::collections::{HashMap, HashSet};

use super::ast::{
    CheckedModule, Expr, SrcModule, SrcOp, SrcType, TExpr, TFunction, TKind, WordType,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}{msg}", .func.as_ref().map(|f| format!("in `{f}`: ")).unwrap_or_default())]
pub struct SrcTypeError {
    pub func: Option<String>,
    pub msg: String,
}

struct Sig {
    param: SrcType,
    result: SrcType,
}

struct Checker<'a> {
    m: &'a SrcModule,
    funcs: HashMap<&'a str, (u32, Sig)>,
}

type CResult<T> = Result<T, String>;

fn coerce_to(e: TExpr, to: &SrcType, what: &str) -> CResult<TExpr> {
    if &e.ty == to {
        Ok(e)
    } else if e.ty == SrcType::Int && to.is_ptr() {
        Ok(TExpr::new(TKind::CoerceIntToPtr(Box::new(e)), to.clone()))
    } else {
        Err(format!("{what}: expected {to}, found {}", e.ty))
    }
}

impl<'a> Checker<'a> {
    fn check_ty(&self, t: &SrcType) -> CResult<()> {
        match t {
            SrcType::Int => Ok(()),
            SrcType::Ptr(w) => match &**w {
                WordType::Scalar(t) => self.check_ty(t),
                WordType::Struct(s) => self
                    .m
                    .struct_def(s)
                    .map(|_| ())
                    .ok_or_else(|| format!("unknown struct `{s}`")),
                WordType::Array(..) => {
                    Err("pointers to arrays are written as pointers to the element type".into())
                }
            },
        }
    }

    fn check_structs(&self) -> CResult<()> {
        let mut names = HashSet::new();
        for s in &self.m.structs {
            if !names.insert(&s.name) {
                return Err(format!("duplicate struct `{}`", s.name));
            }
            if s.fields.is_empty() {
                return Err(format!("struct `{}` has no fields", s.name));
            }
            let mut fields = HashSet::new();
            for (f, w) in &s.fields {
                if !fields.insert(f) {
                    return Err(format!("duplicate field `{f}` in struct `{}`", s.name));
                }
                match w {
                    WordType::Scalar(t) => self.check_ty(t)?,
                    WordType::Array(n, t) => {
                        if *n == 0 {
                            return Err(format!("field `{f}` is an empty array"));
                        }
                        self.check_ty(t)?
                    }
                    WordType::Struct(_) => {
                        return Err(format!(
                            "field `{f}` of struct `{}` embeds a struct; use a pointer",
                            s.name
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    fn expr(&self, e: &Expr, locals: &HashMap<&str, (u32, SrcType)>) -> CResult<TExpr> {
        let local = |x: &str| {
            locals
                .get(x)
                .cloned()
                .ok_or_else(|| format!("unknown variable `{x}`"))
        };
        let sub = |e: &Expr| self.expr(e, locals);
        Ok(match e {
            Expr::Int(n) => TExpr::new(TKind::Int(*n), SrcType::Int),
            Expr::Var(x) => {
                let (i, t) = local(x)?;
                TExpr::new(TKind::Var(i), t)
            }
            Expr::Seq(a, b) => {
                let a = sub(a)?;
                let b = sub(b)?;
                let ty = b.ty.clone();
                TExpr::new(TKind::Seq(Box::new(a), Box::new(b)), ty)
            }
            Expr::Bin(op, a, b) => {
                let a = sub(a)?;
                let b = sub(b)?;
                match (&a.ty, &b.ty) {
                    (SrcType::Int, SrcType::Int) => {
                        TExpr::new(TKind::Bin(*op, Box::new(a), Box::new(b)), SrcType::Int)
                    }
                    (SrcType::Ptr(w), SrcType::Int) if matches!(op, SrcOp::Add | SrcOp::Sub) => {
                        let pointee = (**w).clone();
                        let ty = a.ty.clone();
                        TExpr::new(
                            TKind::PtrArith {
                                sub: *op == SrcOp::Sub,
                                ptr: Box::new(a),
                                n: Box::new(b),
                                pointee,
                            },
                            ty,
                        )
                    }
                    (l, r) => return Err(format!("`{}` is not defined on {l} and {r}", op.symbol())),
                }
            }
            Expr::Assign(x, v) => {
                let (i, t) = local(x)?;
                let v = coerce_to(sub(v)?, &t, &format!("assignment to `{x}`"))?;
                TExpr::new(TKind::Assign(i, Box::new(v)), SrcType::Int)
            }
            Expr::LetCall {
                var,
                func,
                arg,
                body,
            } => {
                let (fi, sig) = self
                    .funcs
                    .get(func.as_str())
                    .ok_or_else(|| format!("unknown function `{func}`"))?;
                let arg = coerce_to(sub(arg)?, &sig.param, &format!("argument of `{func}`"))?;
                let (bind, vt) = local(var)?;
                let coerce = if sig.result == vt {
                    false
                } else if sig.result == SrcType::Int && vt.is_ptr() {
                    true
                } else {
                    return Err(format!(
                        "`{func}` returns {}, but `{var}` has type {vt}",
                        sig.result
                    ));
                };
                let body = sub(body)?;
                let ty = body.ty.clone();
                TExpr::new(
                    TKind::Call {
                        func: *fi,
                        arg: Box::new(arg),
                        bind,
                        coerce,
                        body: Box::new(body),
                    },
                    ty,
                )
            }
            Expr::Deref(p) => {
                let p = sub(p)?;
                match &p.ty {
                    SrcType::Int => {
                        let p = coerce_to(p, &SrcType::ptr_to(SrcType::Int), "dereference")?;
                        TExpr::new(TKind::Deref(Box::new(p)), SrcType::Int)
                    }
                    SrcType::Ptr(w) => match &**w {
                        WordType::Scalar(t) => {
                            let t = t.clone();
                            TExpr::new(TKind::Deref(Box::new(p)), t)
                        }
                        w => return Err(format!("cannot dereference a pointer to {w}")),
                    },
                }
            }
            Expr::Write(p, v) => {
                let p = sub(p)?;
                let v = sub(v)?;
                match p.ty.clone() {
                    SrcType::Int => {
                        let p = coerce_to(p, &SrcType::ptr_to(v.ty.clone()), "store address")?;
                        TExpr::new(TKind::Write(Box::new(p), Box::new(v)), SrcType::Int)
                    }
                    SrcType::Ptr(w) => match *w {
                        WordType::Scalar(t) => {
                            let v = coerce_to(v, &t, "stored value")?;
                            TExpr::new(TKind::Write(Box::new(p), Box::new(v)), SrcType::Int)
                        }
                        w => return Err(format!("cannot store through a pointer to {w}")),
                    },
                }
            }
            Expr::If(c, t, f) => {
                let c = sub(c)?;
                if c.ty != SrcType::Int {
                    return Err(format!("condition must be int, found {}", c.ty));
                }
                let t = sub(t)?;
                let f = sub(f)?;
                let ty = if t.ty == SrcType::Int { f.ty.clone() } else { t.ty.clone() };
                let t = coerce_to(t, &ty, "then branch")?;
                let f = coerce_to(f, &ty, "else branch")?;
                TExpr::new(TKind::If(Box::new(c), Box::new(t), Box::new(f)), ty)
            }
            Expr::Field(p, f) => {
                let p = sub(p)?;
                let Some(WordType::Struct(s)) = p.ty.pointee() else {
                    return Err(format!("field `{f}` looked up on {}", p.ty));
                };
                let def = self.m.struct_def(s).expect("checked pointer type");
                let k = def
                    .fields
                    .iter()
                    .position(|(n, _)| n == f)
                    .ok_or_else(|| format!("struct `{s}` has no field `{f}`"))?;
                let ty = match &def.fields[k].1 {
                    WordType::Array(_, t) => SrcType::ptr_to(t.clone()),
                    w => SrcType::ptr(w.clone()),
                };
                let strukt = s.clone();
                TExpr::new(
                    TKind::Field {
                        ptr: Box::new(p),
                        strukt,
                        field: k,
                    },
                    ty,
                )
            }
            Expr::MallocArray(t, n) => {
                self.check_ty(t)?;
                let n = sub(n)?;
                if n.ty != SrcType::Int {
                    return Err(format!("allocation length must be int, found {}", n.ty));
                }
                TExpr::new(TKind::MallocArray(t.clone(), Box::new(n)), SrcType::ptr_to(t.clone()))
            }
            Expr::MallocSingle(w) => {
                match w {
                    WordType::Scalar(t) => self.check_ty(t)?,
                    WordType::Struct(_) => self.check_ty(&SrcType::ptr(w.clone()))?,
                    WordType::Array(..) => {
                        return Err("arrays are allocated with `malloc<t>(n)`".into())
                    }
                }
                TExpr::new(TKind::MallocSingle(w.clone()), SrcType::ptr(w.clone()))
            }
            Expr::Free(p) => {
                let p = sub(p)?;
                let p = match p.ty {
                    SrcType::Int => coerce_to(p, &SrcType::ptr_to(SrcType::Int), "free")?,
                    _ => p,
                };
                TExpr::new(TKind::Free(Box::new(p)), SrcType::Int)
            }
        })
    }
}

/// Checks `m` and returns its elaborated form.
pub fn src_typecheck(m: &SrcModule) -> Result<CheckedModule, SrcTypeError> {
    let top = |msg: String| SrcTypeError { func: None, msg };
    let mut ck = Checker {
        m,
        funcs: HashMap::new(),
    };
    ck.check_structs().map_err(top)?;
    let sigs = m
        .imports
        .iter()
        .map(|i| (&i.name, &i.param, &i.result))
        .chain(m.funcs.iter().map(|f| (&f.name, &f.param.1, &f.result)));
    for (i, (name, param, result)) in sigs.enumerate() {
        ck.check_ty(param)
            .and_then(|_| ck.check_ty(result))
            .map_err(|msg| SrcTypeError {
                func: Some(name.clone()),
                msg,
            })?;
        let sig = Sig {
            param: param.clone(),
            result: result.clone(),
        };
        if ck.funcs.insert(name, (i as u32, sig)).is_some() {
            return Err(top(format!("duplicate function `{name}`")));
        }
    }
    let main = m
        .funcs
        .iter()
        .position(|f| f.name == "main")
        .ok_or_else(|| top("no `main` function".into()))?;
    let mut funcs = Vec::new();
    for f in &m.funcs {
        let in_f = |msg: String| SrcTypeError {
            func: Some(f.name.clone()),
            msg,
        };
        let mut locals = HashMap::new();
        for (i, (x, t)) in std::iter::once(&f.param).chain(&f.vars).enumerate() {
            ck.check_ty(t).map_err(in_f)?;
            if locals.insert(x.as_str(), (i as u32, t.clone())).is_some() {
                return Err(in_f(format!("duplicate variable `{x}`")));
            }
        }
        let body = ck
            .expr(&f.body, &locals)
            .and_then(|b| coerce_to(b, &f.result, "function result"))
            .map_err(in_f)?;
        funcs.push(TFunction {
            name: f.name.clone(),
            param: f.param.1.clone(),
            result: f.result.clone(),
            vars: f.vars.iter().map(|(_, t)| t.clone()).collect(),
            body,
        });
    }
    Ok(CheckedModule {
        imports: m.imports.clone(),
        structs: m.structs.clone(),
        funcs,
        heap: m.heap,
        main,
    })
}

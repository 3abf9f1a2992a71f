//! Text format:
//!
//! ```text
//! (module (segment N) (heap N)
//!   (import (param T*) (result T*))*
//!   (func (param T*) (local T*) (result T*) INSTR*)*)
//! ```
//!
//! `if` takes two following lists, `(then INSTR*)` and `(else INSTR*)`;
//! the `else` list may be omitted when empty. `;;` starts a line comment.

use std::fmt::Write as _;

use thiserror::Error;

use super::sexpr::{read_one, Sexp, SexpError};
use super::{BinOp, FuncDef, FuncType, Instr, Literal, ModuleDef, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("parse error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("validation error in func {func}: {msg}")]
    Validation { func: usize, msg: String },
}

impl From<SexpError> for ParseError {
    fn from(e: SexpError) -> Self {
        ParseError::Syntax {
            line: e.line,
            col: e.col,
            msg: e.msg,
        }
    }
}

fn syntax(at: &Sexp, msg: impl Into<String>) -> ParseError {
    let (line, col) = at.pos();
    ParseError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

pub fn parse_module(src: &str) -> Result<ModuleDef, ParseError> {
    let top = read_one(src)?;
    let items = match (top.head(), top.as_list()) {
        (Some("module"), Some(items)) => &items[1..],
        _ => return Err(syntax(&top, "expected `(module ...)`")),
    };
    let mut module = ModuleDef::default();
    for item in items {
        match item.head() {
            Some("segment") => module.segment_size = parse_size(item)?,
            Some("heap") => module.heap_size = parse_size(item)?,
            Some("import") => {
                if !module.funcs.is_empty() {
                    return Err(syntax(item, "imports must precede functions"));
                }
                let list = &item.as_list().unwrap_or_default()[1..];
                let (ty, locals, rest) = parse_signature(list)?;
                if !locals.is_empty() {
                    return Err(syntax(item, "imports cannot declare locals"));
                }
                if let Some(extra) = rest.first() {
                    return Err(syntax(extra, "unexpected item in import"));
                }
                module.imports.push(ty);
            }
            Some("func") => {
                let list = &item.as_list().unwrap_or_default()[1..];
                let (ty, locals, rest) = parse_signature(list)?;
                let body = parse_instrs(rest)?;
                module.funcs.push(FuncDef { ty, locals, body });
            }
            _ => return Err(syntax(item, "expected segment, heap, import, or func")),
        }
    }
    validate_indices(&module)?;
    Ok(module)
}

fn parse_size(item: &Sexp) -> Result<u32, ParseError> {
    match item.as_list() {
        Some([_, n]) => parse_u32(n),
        _ => Err(syntax(item, "expected a single size")),
    }
}

fn parse_u32(s: &Sexp) -> Result<u32, ParseError> {
    s.as_atom()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| syntax(s, "expected an unsigned integer"))
}

fn parse_types(list: &[Sexp]) -> Result<Vec<ValueType>, ParseError> {
    list.iter()
        .map(|s| {
            s.as_atom()
                .and_then(ValueType::from_name)
                .ok_or_else(|| syntax(s, "expected a value type"))
        })
        .collect()
}

fn parse_signature(list: &[Sexp]) -> Result<(FuncType, Vec<ValueType>, &[Sexp]), ParseError> {
    let mut ty = FuncType::default();
    let mut locals = Vec::new();
    let mut i = 0;
    // Groups are accepted in param, local, result order; repeats concatenate.
    let mut stage = 0;
    while let Some(item) = list.get(i) {
        let this = match item.head() {
            Some("param") => 0,
            Some("local") => 1,
            Some("result") => 2,
            _ => break,
        };
        if this < stage {
            return Err(syntax(item, "signature groups must be ordered param, local, result"));
        }
        stage = this;
        let types = parse_types(&item.as_list().unwrap_or_default()[1..])?;
        match this {
            0 => ty.params.extend(types),
            1 => locals.extend(types),
            _ => ty.results.extend(types),
        }
        i += 1;
    }
    Ok((ty, locals, &list[i..]))
}

fn parse_instrs(items: &[Sexp]) -> Result<Vec<Instr>, ParseError> {
    let mut out = Vec::new();
    let mut it = items.iter().peekable();
    while let Some(item) = it.next() {
        let Some(word) = item.as_atom() else {
            return Err(syntax(item, "expected an instruction"));
        };
        let mut operand = |what: &str| {
            it.next()
                .ok_or_else(|| syntax(item, format!("`{word}` expects {what}")))
        };
        let instr = match word {
            "nop" => Instr::Nop,
            "trap" => Instr::Trap,
            "return" => Instr::Return,
            "slice" => Instr::Slice,
            "new_segment" => Instr::NewSegment,
            "handle.add" => Instr::HandleAdd,
            "segfree" => Instr::SegFree,
            "get" => Instr::Get(parse_u32(operand("an index")?)?),
            "set" => Instr::Set(parse_u32(operand("an index")?)?),
            "call" => Instr::Call(parse_u32(operand("an index")?)?),
            "if" => {
                let then = operand("a `(then ...)` list")?;
                if then.head() != Some("then") {
                    return Err(syntax(then, "expected `(then ...)`"));
                }
                let then = parse_instrs(&then.as_list().unwrap_or_default()[1..])?;
                let els = if it.peek().and_then(|s| s.head()) == Some("else") {
                    let e = it.next().expect("peeked");
                    parse_instrs(&e.as_list().unwrap_or_default()[1..])?
                } else {
                    Vec::new()
                };
                Instr::If(then, els)
            }
            _ => {
                let (ty, op) = word
                    .split_once('.')
                    .and_then(|(t, op)| Some((ValueType::from_name(t)?, op)))
                    .ok_or_else(|| syntax(item, format!("unknown instruction `{word}`")))?;
                match op {
                    "const" => {
                        if ty == ValueType::Handle {
                            return Err(syntax(item, "handles have no literal form"));
                        }
                        let lit = operand("a literal")?;
                        Instr::Const(ty, parse_literal(ty, lit)?)
                    }
                    "load" => Instr::Load(ty),
                    "store" => Instr::Store(ty),
                    "segload" => Instr::SegLoad(ty),
                    "segstore" => Instr::SegStore(ty),
                    _ => match BinOp::from_mnemonic(ty, op) {
                        Some(op) => Instr::BinOp(ty, op),
                        None => {
                            return Err(syntax(item, format!("unknown instruction `{word}`")))
                        }
                    },
                }
            }
        };
        out.push(instr);
    }
    Ok(out)
}

fn parse_literal(ty: ValueType, s: &Sexp) -> Result<Literal, ParseError> {
    let text = s.as_atom().ok_or_else(|| syntax(s, "expected a literal"))?;
    let bad = || syntax(s, format!("invalid {ty} literal `{text}`"));
    Ok(match ty {
        ValueType::I32 => {
            let v: i64 = text.parse().map_err(|_| bad())?;
            if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                return Err(bad());
            }
            Literal::Int(v as u32 as i32 as i64)
        }
        ValueType::I64 => Literal::Int(text.parse().map_err(|_| bad())?),
        ValueType::F32 => {
            let v: f32 = text.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Literal::Float(v as f64)
        }
        ValueType::F64 => {
            let v: f64 = text.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Literal::Float(v)
        }
        ValueType::Handle => return Err(bad()),
    })
}

fn validate_indices(m: &ModuleDef) -> Result<(), ParseError> {
    fn walk(body: &[Instr], locals: usize, funcs: usize) -> Result<(), String> {
        for i in body {
            match i {
                Instr::Get(n) | Instr::Set(n) if *n as usize >= locals => {
                    return Err(format!("local index {n} out of range ({locals} locals)"))
                }
                Instr::Call(n) if *n as usize >= funcs => {
                    return Err(format!("function index {n} out of range ({funcs} functions)"))
                }
                Instr::If(t, e) => {
                    walk(t, locals, funcs)?;
                    walk(e, locals, funcs)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
    let funcs = m.num_funcs();
    for (k, f) in m.funcs.iter().enumerate() {
        walk(&f.body, f.num_locals(), funcs)
            .map_err(|msg| ParseError::Validation { func: k, msg })?;
    }
    Ok(())
}

fn literal_text(ty: ValueType, lit: Literal) -> String {
    match (ty, lit) {
        (ValueType::I32, Literal::Int(v)) => (v as i32).to_string(),
        (_, Literal::Int(v)) => v.to_string(),
        (ValueType::F32, Literal::Float(v)) => float_text((v as f32) as f64, true),
        (_, Literal::Float(v)) => float_text(v, false),
    }
}

fn float_text(v: f64, single: bool) -> String {
    // `{:?}` is the shortest text that parses back to the same value.
    if single {
        format!("{:?}", v as f32)
    } else {
        format!("{v:?}")
    }
}

fn write_types(out: &mut String, kw: &str, types: &[ValueType]) {
    if types.is_empty() {
        return;
    }
    write!(out, " ({kw}").unwrap();
    for t in types {
        write!(out, " {t}").unwrap();
    }
    out.push(')');
}

/// Renders one instruction per line at the given indentation depth.
pub fn print_instrs(out: &mut String, body: &[Instr], depth: usize) {
    let pad = "  ".repeat(depth);
    for i in body {
        out.push('\n');
        out.push_str(&pad);
        match i {
            Instr::Nop => out.push_str("nop"),
            Instr::Trap => out.push_str("trap"),
            Instr::Const(t, l) => write!(out, "{t}.const {}", literal_text(*t, *l)).unwrap(),
            Instr::BinOp(t, op) => write!(out, "{t}.{}", op.mnemonic(*t)).unwrap(),
            Instr::Get(n) => write!(out, "get {n}").unwrap(),
            Instr::Set(n) => write!(out, "set {n}").unwrap(),
            Instr::Load(t) => write!(out, "{t}.load").unwrap(),
            Instr::Store(t) => write!(out, "{t}.store").unwrap(),
            Instr::If(then, els) => {
                out.push_str("if");
                out.push('\n');
                out.push_str(&pad);
                out.push_str("  (then");
                print_instrs(out, then, depth + 2);
                out.push(')');
                out.push('\n');
                out.push_str(&pad);
                out.push_str("  (else");
                print_instrs(out, els, depth + 2);
                out.push(')');
            }
            Instr::Call(n) => write!(out, "call {n}").unwrap(),
            Instr::Return => out.push_str("return"),
            Instr::SegLoad(t) => write!(out, "{t}.segload").unwrap(),
            Instr::SegStore(t) => write!(out, "{t}.segstore").unwrap(),
            Instr::Slice => out.push_str("slice"),
            Instr::NewSegment => out.push_str("new_segment"),
            Instr::HandleAdd => out.push_str("handle.add"),
            Instr::SegFree => out.push_str("segfree"),
        }
    }
}

/// Canonical text of a module; `parse_module` inverts it.
pub fn print_module(m: &ModuleDef) -> String {
    let mut out = String::from("(module");
    write!(out, "\n  (segment {})", m.segment_size).unwrap();
    write!(out, "\n  (heap {})", m.heap_size).unwrap();
    for imp in &m.imports {
        out.push_str("\n  (import");
        write_types(&mut out, "param", &imp.params);
        write_types(&mut out, "result", &imp.results);
        out.push(')');
    }
    for f in &m.funcs {
        out.push_str("\n  (func");
        write_types(&mut out, "param", &f.ty.params);
        write_types(&mut out, "local", &f.locals);
        write_types(&mut out, "result", &f.ty.results);
        print_instrs(&mut out, &f.body, 2);
        out.push(')');
    }
    out.push_str(")\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_module() {
        let m = parse_module("(module (segment 64) (heap 0) (func (result i32) i32.const 7 return))")
            .unwrap();
        assert_eq!(m.segment_size, 64);
        assert_eq!(m.funcs.len(), 1);
        assert_eq!(m.funcs[0].ty.results, vec![ValueType::I32]);
        assert_eq!(m.funcs[0].body, vec![Instr::i32(7), Instr::Return]);
    }

    #[test]
    fn call_out_of_range_is_a_validation_error() {
        let err = parse_module("(module (segment 64) (heap 0) (func call 5))").unwrap_err();
        assert!(matches!(err, ParseError::Validation { func: 0, .. }), "{err}");
    }

    #[test]
    fn local_out_of_range_is_a_validation_error() {
        let err = parse_module("(module (func (param i32) get 1))").unwrap_err();
        assert!(matches!(err, ParseError::Validation { .. }));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_module("(module\n  (func i32.bogus))").unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax {
                line: 2,
                col: 9,
                msg: "unknown instruction `i32.bogus`".into()
            }
        );
        assert!(matches!(
            parse_module("(module (func nop)"),
            Err(ParseError::Syntax { line: 1, col: 1, .. })
        ));
    }

    #[test]
    fn handle_literals_are_rejected() {
        assert!(parse_module("(module (func handle.const 0))").is_err());
    }

    #[test]
    fn empty_body_prints_bare_func() {
        let m = parse_module("(module (func))").unwrap();
        let text = print_module(&m);
        assert!(text.contains("\n  (func)"), "{text}");
        assert_eq!(parse_module(&text).unwrap(), m);
    }

    #[test]
    fn nested_if_golden() {
        let src = "(module (segment 16) (heap 0) (func (param i32) (result i32) get 0 \
                   if (then get 0 if (then i32.const 1) (else i32.const 2)) (else i32.const 3)))";
        let expected = "\
(module
  (segment 16)
  (heap 0)
  (func (param i32) (result i32)
    get 0
    if
      (then
        get 0
        if
          (then
            i32.const 1)
          (else
            i32.const 2))
      (else
        i32.const 3)))
";
        let m = parse_module(src).unwrap();
        assert_eq!(print_module(&m), expected);
        assert_eq!(parse_module(expected).unwrap(), m);
    }

    #[test]
    fn literals_round_trip() {
        let src = "(module (func i32.const -2147483648 i32.const 4294967295 i64.const -9 \
                   f32.const 0.1 f64.const 1e300 f64.const -0.5))";
        let m = parse_module(src).unwrap();
        assert_eq!(m.funcs[0].body[1], Instr::i32(-1));
        assert_eq!(parse_module(&print_module(&m)).unwrap(), m);
    }

    /// Every instruction constructor has both a printed and a parsed form.
    #[test]
    fn every_instruction_has_text() {
        let mut body = vec![
            Instr::Nop,
            Instr::Trap,
            Instr::Get(0),
            Instr::Set(0),
            Instr::If(vec![Instr::Nop], vec![]),
            Instr::Call(0),
            Instr::Return,
            Instr::Slice,
            Instr::NewSegment,
            Instr::HandleAdd,
            Instr::SegFree,
        ];
        for t in ValueType::ALL {
            if t != ValueType::Handle {
                body.push(Instr::Const(
                    t,
                    if t.is_int() {
                        Literal::Int(3)
                    } else {
                        Literal::Float(1.5)
                    },
                ));
                for op in BinOp::ALL.into_iter().filter(|op| op.applies_to(t)) {
                    body.push(Instr::BinOp(t, op));
                }
            }
            body.extend([
                Instr::Load(t),
                Instr::Store(t),
                Instr::SegLoad(t),
                Instr::SegStore(t),
            ]);
        }
        // Keep this match exhaustive so a new constructor fails to compile here.
        for i in &body {
            match i {
                Instr::Nop
                | Instr::Trap
                | Instr::Const(..)
                | Instr::BinOp(..)
                | Instr::Get(_)
                | Instr::Set(_)
                | Instr::Load(_)
                | Instr::Store(_)
                | Instr::If(..)
                | Instr::Call(_)
                | Instr::Return
                | Instr::SegLoad(_)
                | Instr::SegStore(_)
                | Instr::Slice
                | Instr::NewSegment
                | Instr::HandleAdd
                | Instr::SegFree => {}
            }
        }
        let m = ModuleDef {
            funcs: vec![FuncDef {
                ty: FuncType::default(),
                locals: vec![ValueType::I32],
                body,
            }],
            ..Default::default()
        };
        assert_eq!(parse_module(&print_module(&m)).unwrap(), m);
    }
}

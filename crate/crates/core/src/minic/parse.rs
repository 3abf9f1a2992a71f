//! Concrete syntax of the C subset.
//!
//! ```text
//! module   ::= 'module' '{' item* '}'
//! item     ::= 'import' 'fn' NAME '(' NAME ':' ty ')' '->' ty ';'
//!            | 'struct' NAME '{' NAME ':' word (',' NAME ':' word)* ','? '}'
//!            | 'fn' NAME '(' NAME ':' ty ')' '->' ty '{' ('var' '(' decls ')' ';')? expr '}'
//!            | 'heap' INT
//! ty       ::= 'int' | 'ptr' word
//! word     ::= ty | 'struct' NAME | '[' ty ';' INT ']'
//! expr     ::= assign (';' expr)?
//! assign   ::= NAME '=' assign | cmp (':=' assign)?
//! cmp      ::= sum (('==' | '<') sum)*
//! sum      ::= term (('+' | '-') term)*
//! term     ::= unary (('*' | '/') unary)*
//! unary    ::= '*' unary | '-' INT | postfix
//! postfix  ::= primary ('.' NAME)*
//! primary  ::= INT | NAME | '(' expr ')'
//!            | 'if' expr '{' expr '}' 'else' '{' expr '}'
//!            | 'let' NAME '=' NAME '(' expr ')' 'in' expr
//!            | 'malloc' '<' ty '>' '(' expr ')' | 'malloc' '(' word ')'
//!            | 'free' '(' expr ')'
//! ```
//!
//! `e1 := e2` stores `e2` at the address `e1`. Integers are 32-bit and wrap;
//! `//` starts a comment.

use std::fmt;

use super::ast::{Expr, Function, Import, SrcModule, SrcOp, SrcType, StructDef, WordType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {msg}")]
pub struct SrcParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Name(String),
    Int(i64),
    Punct(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Name(n) => write!(f, "`{n}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
        }
    }
}

const PUNCTS: [&str; 20] = [
    ":=", "==", "->", "{", "}", "(", ")", "[", "]", ";", ":", ",", "=", "<", ">", "+", "-", "*",
    "/", ".",
];

const KEYWORDS: [&str; 13] = [
    "module", "import", "struct", "fn", "var", "heap", "let", "in", "if", "else", "malloc",
    "free", "int",
];

fn lex(src: &str) -> Result<Vec<(Tok, usize, usize)>, SrcParseError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line = match line.find("//") {
            Some(i) => &line[..i],
            None => line,
        };
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let col = line[..i].chars().count() + 1;
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n = line[start..i].parse::<i64>().map_err(|_| SrcParseError {
                    line: ln + 1,
                    col,
                    msg: "integer literal too large".into(),
                })?;
                out.push((Tok::Int(n), ln + 1, col));
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Name(line[start..i].to_string()), ln + 1, col));
            } else if let Some(p) = PUNCTS.iter().find(|p| line[i..].starts_with(**p)) {
                out.push((Tok::Punct(p), ln + 1, col));
                i += p.len();
            } else {
                return Err(SrcParseError {
                    line: ln + 1,
                    col,
                    msg: format!("unexpected character `{}`", line[i..].chars().next().unwrap()),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    end: (usize, usize),
}

type PResult<T> = Result<T, SrcParseError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self
            .toks
            .get(self.pos)
            .map(|t| (t.1, t.2))
            .unwrap_or(self.end);
        Err(SrcParseError {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => t.to_string(),
            None => "end of input".into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Name(n)) if n == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        let hit = self.is_punct(p);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        let hit = self.is_kw(k);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", self.found()))
        }
    }

    fn kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.found()))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Name(n)) if !KEYWORDS.contains(&n.as_str()) && n != "ptr" => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => self.err(format!("expected a name, found {}", self.found())),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.err(format!("expected an integer, found {}", self.found())),
        }
    }

    fn u32_lit(&mut self) -> PResult<u32> {
        let n = self.int()?;
        match u32::try_from(n) {
            Ok(n) => Ok(n),
            Err(_) => {
                self.pos -= 1;
                self.err("size out of range")
            }
        }
    }

    fn ty(&mut self) -> PResult<SrcType> {
        if self.eat_kw("int") {
            Ok(SrcType::Int)
        } else if self.eat_kw("ptr") {
            Ok(SrcType::ptr(self.word()?))
        } else {
            self.err(format!("expected a type, found {}", self.found()))
        }
    }

    fn word(&mut self) -> PResult<WordType> {
        if self.eat_kw("struct") {
            Ok(WordType::Struct(self.name()?))
        } else if self.eat_punct("[") {
            let t = self.ty()?;
            self.punct(";")?;
            let n = self.u32_lit()?;
            self.punct("]")?;
            Ok(WordType::Array(n, t))
        } else {
            Ok(WordType::Scalar(self.ty()?))
        }
    }

    fn signature(&mut self) -> PResult<(String, (String, SrcType), SrcType)> {
        self.kw("fn")?;
        let name = self.name()?;
        self.punct("(")?;
        let p = self.name()?;
        self.punct(":")?;
        let pt = self.ty()?;
        self.punct(")")?;
        self.punct("->")?;
        let r = self.ty()?;
        Ok((name, (p, pt), r))
    }

    fn module(&mut self) -> PResult<SrcModule> {
        self.kw("module")?;
        self.punct("{")?;
        let mut m = SrcModule::default();
        let mut heap_seen = false;
        while !self.eat_punct("}") {
            if self.eat_kw("import") {
                if !m.funcs.is_empty() {
                    return self.err("imports must precede functions");
                }
                let (name, (_, param), result) = self.signature()?;
                self.punct(";")?;
                m.imports.push(Import {
                    name,
                    param,
                    result,
                });
            } else if self.eat_kw("struct") {
                let name = self.name()?;
                self.punct("{")?;
                let mut fields = Vec::new();
                while !self.eat_punct("}") {
                    let f = self.name()?;
                    self.punct(":")?;
                    fields.push((f, self.word()?));
                    if !self.eat_punct(",") {
                        self.punct("}")?;
                        break;
                    }
                }
                m.structs.push(StructDef { name, fields });
            } else if self.is_kw("fn") {
                let (name, param, result) = self.signature()?;
                self.punct("{")?;
                let mut vars = Vec::new();
                if self.eat_kw("var") {
                    self.punct("(")?;
                    while !self.eat_punct(")") {
                        let v = self.name()?;
                        self.punct(":")?;
                        vars.push((v, self.ty()?));
                        if !self.eat_punct(",") {
                            self.punct(")")?;
                            break;
                        }
                    }
                    self.punct(";")?;
                }
                let body = self.expr()?;
                self.punct("}")?;
                m.funcs.push(Function {
                    name,
                    param,
                    result,
                    vars,
                    body,
                });
            } else if self.eat_kw("heap") {
                if heap_seen {
                    return self.err("duplicate heap size");
                }
                heap_seen = true;
                m.heap = self.u32_lit()?;
            } else if self.peek().is_none() {
                return self.err("unterminated module");
            } else {
                return self.err(format!("expected a module item, found {}", self.found()));
            }
        }
        if self.peek().is_some() {
            return self.err(format!("trailing input {}", self.found()));
        }
        Ok(m)
    }

    fn expr(&mut self) -> PResult<Expr> {
        let first = self.assign()?;
        if self.eat_punct(";") {
            Ok(Expr::Seq(Box::new(first), Box::new(self.expr()?)))
        } else {
            Ok(first)
        }
    }

    fn assign(&mut self) -> PResult<Expr> {
        if matches!(self.peek2(), Some(Tok::Punct("="))) {
            if let Some(Tok::Name(_)) = self.peek() {
                let x = self.name()?;
                self.punct("=")?;
                return Ok(Expr::Assign(x, Box::new(self.assign()?)));
            }
        }
        let lhs = self.cmp()?;
        if self.eat_punct(":=") {
            Ok(Expr::Write(Box::new(lhs), Box::new(self.assign()?)))
        } else {
            Ok(lhs)
        }
    }

    fn binary(
        &mut self,
        ops: &[(&'static str, SrcOp)],
        next: fn(&mut Parser) -> PResult<Expr>,
    ) -> PResult<Expr> {
        let mut e = next(self)?;
        'outer: loop {
            for (p, op) in ops {
                if self.eat_punct(p) {
                    e = Expr::Bin(*op, Box::new(e), Box::new(next(self)?));
                    continue 'outer;
                }
            }
            return Ok(e);
        }
    }

    fn cmp(&mut self) -> PResult<Expr> {
        self.binary(&[("==", SrcOp::Eq), ("<", SrcOp::Lt)], Parser::sum)
    }

    fn sum(&mut self) -> PResult<Expr> {
        self.binary(&[("+", SrcOp::Add), ("-", SrcOp::Sub)], Parser::term)
    }

    fn term(&mut self) -> PResult<Expr> {
        self.binary(&[("*", SrcOp::Mul), ("/", SrcOp::Div)], Parser::unary)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_punct("*") {
            Ok(Expr::Deref(Box::new(self.unary()?)))
        } else if self.eat_punct("-") {
            let n = self.int()?;
            match i32::try_from(-n) {
                Ok(v) => Ok(Expr::Int(v)),
                Err(_) => {
                    self.pos -= 1;
                    self.err("integer literal out of range")
                }
            }
        } else {
            self.postfix()
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.eat_punct(".") {
            e = Expr::Field(Box::new(e), self.name()?);
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let tok = self.peek().cloned();
        match tok {
            Some(Tok::Int(n)) => {
                // Literals up to u32::MAX are accepted and wrap.
                if n > u32::MAX as i64 {
                    return self.err("integer literal out of range");
                }
                self.pos += 1;
                Ok(Expr::Int(n as u32 as i32))
            }
            Some(Tok::Punct("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.punct(")")?;
                Ok(e)
            }
            _ if self.eat_kw("if") => {
                let c = self.expr()?;
                self.punct("{")?;
                let t = self.expr()?;
                self.punct("}")?;
                self.kw("else")?;
                self.punct("{")?;
                let e = self.expr()?;
                self.punct("}")?;
                Ok(Expr::If(Box::new(c), Box::new(t), Box::new(e)))
            }
            _ if self.eat_kw("let") => {
                let var = self.name()?;
                self.punct("=")?;
                let func = self.name()?;
                self.punct("(")?;
                let arg = self.expr()?;
                self.punct(")")?;
                self.kw("in")?;
                let body = self.expr()?;
                Ok(Expr::LetCall {
                    var,
                    func,
                    arg: Box::new(arg),
                    body: Box::new(body),
                })
            }
            _ if self.eat_kw("malloc") => {
                if self.eat_punct("<") {
                    let t = self.ty()?;
                    self.punct(">")?;
                    self.punct("(")?;
                    let n = self.expr()?;
                    self.punct(")")?;
                    Ok(Expr::MallocArray(t, Box::new(n)))
                } else {
                    self.punct("(")?;
                    let w = self.word()?;
                    self.punct(")")?;
                    Ok(Expr::MallocSingle(w))
                }
            }
            _ if self.eat_kw("free") => {
                self.punct("(")?;
                let e = self.expr()?;
                self.punct(")")?;
                Ok(Expr::Free(Box::new(e)))
            }
            Some(Tok::Name(_)) => Ok(Expr::Var(self.name()?)),
            _ => self.err(format!("expected an expression, found {}", self.found())),
        }
    }
}

pub fn parse_src(src: &str) -> Result<SrcModule, SrcParseError> {
    let toks = lex(src)?;
    let lines = src.lines().count().max(1);
    let last = src.lines().last().map(|l| l.chars().count()).unwrap_or(0);
    let mut p = Parser {
        toks,
        pos: 0,
        end: (lines, last + 1),
    };
    p.module()
}

fn write_ty(out: &mut String, t: &SrcType) {
    out.push_str(&t.to_string());
}

fn prec(e: &Expr) -> u8 {
    match e {
        // A let body extends to the right as far as possible.
        Expr::Seq(..) | Expr::LetCall { .. } => 0,
        Expr::Assign(..) | Expr::Write(..) => 1,
        Expr::Bin(SrcOp::Eq | SrcOp::Lt, ..) => 2,
        Expr::Bin(SrcOp::Add | SrcOp::Sub, ..) => 3,
        Expr::Bin(SrcOp::Mul | SrcOp::Div, ..) => 4,
        Expr::Deref(_) => 5,
        Expr::Int(n) if *n < 0 => 5,
        _ => 6,
    }
}

fn write_expr(out: &mut String, e: &Expr, min: u8) {
    let paren = prec(e) < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Int(n) => out.push_str(&n.to_string()),
        Expr::Var(x) => out.push_str(x),
        Expr::Seq(a, b) => {
            write_expr(out, a, 1);
            out.push_str("; ");
            write_expr(out, b, 0);
        }
        Expr::Bin(op, a, b) => {
            let p = prec(e);
            write_expr(out, a, p);
            out.push_str(&format!(" {} ", op.symbol()));
            write_expr(out, b, p + 1);
        }
        Expr::Assign(x, v) => {
            out.push_str(&format!("{x} = "));
            write_expr(out, v, 1);
        }
        Expr::Write(p, v) => {
            write_expr(out, p, 2);
            out.push_str(" := ");
            write_expr(out, v, 1);
        }
        Expr::LetCall {
            var,
            func,
            arg,
            body,
        } => {
            out.push_str(&format!("let {var} = {func}("));
            write_expr(out, arg, 0);
            out.push_str(") in ");
            write_expr(out, body, 0);
        }
        Expr::Deref(p) => {
            out.push('*');
            write_expr(out, p, 5);
        }
        Expr::If(c, t, f) => {
            out.push_str("if ");
            write_expr(out, c, 0);
            out.push_str(" { ");
            write_expr(out, t, 0);
            out.push_str(" } else { ");
            write_expr(out, f, 0);
            out.push_str(" }");
        }
        Expr::Field(p, f) => {
            write_expr(out, p, 6);
            out.push('.');
            out.push_str(f);
        }
        Expr::MallocArray(t, n) => {
            out.push_str("malloc<");
            write_ty(out, t);
            out.push_str(">(");
            write_expr(out, n, 0);
            out.push(')');
        }
        Expr::MallocSingle(w) => out.push_str(&format!("malloc({w})")),
        Expr::Free(p) => {
            out.push_str("free(");
            write_expr(out, p, 0);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, 0);
    s
}

/// Prints a module in the syntax `parse_src` reads.
pub fn print_src(m: &SrcModule) -> String {
    let mut out = String::from("module {\n");
    for i in &m.imports {
        out.push_str(&format!(
            "  import fn {}(x: {}) -> {};\n",
            i.name, i.param, i.result
        ));
    }
    for s in &m.structs {
        let fields: Vec<String> = s.fields.iter().map(|(f, w)| format!("{f}: {w}")).collect();
        out.push_str(&format!("  struct {} {{ {} }}\n", s.name, fields.join(", ")));
    }
    for f in &m.funcs {
        out.push_str(&format!(
            "  fn {}({}: {}) -> {} {{\n",
            f.name, f.param.0, f.param.1, f.result
        ));
        if !f.vars.is_empty() {
            let vars: Vec<String> = f.vars.iter().map(|(v, t)| format!("{v}: {t}")).collect();
            out.push_str(&format!("    var ({});\n", vars.join(", ")));
        }
        out.push_str(&format!("    {}\n  }}\n", print_expr(&f.body)));
    }
    out.push_str(&format!("  heap {}\n}}\n", m.heap));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_full_grammar() {
        let src = "module {
            import fn ext(x: int) -> ptr int;
            struct User { name: [int; 32], id: int, next: ptr struct User }
            fn main(x: int) -> int {
                var (u: ptr struct User, p: ptr int, r: int);
                u = malloc(struct User);
                u.id := 7;
                p = malloc<int>(2);
                (p + 1) := *p + 2 * 3;
                let r = helper(x - 1) in
                if r < 3 { free(p) } else { *u.name }
            }
            fn helper(y: int) -> int { y }
            heap 64
        }";
        let m = parse_src(src).unwrap();
        assert_eq!(m.imports.len(), 1);
        assert_eq!(m.structs[0].fields[0].1, WordType::Array(32, SrcType::Int));
        assert_eq!(m.funcs.len(), 2);
        assert_eq!(m.heap, 64);
        let again = parse_src(&print_src(&m)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn precedence_and_associativity() {
        let m = parse_src("module { fn main(x: int) -> int { 1 - 2 - 3 * 4 == x } }").unwrap();
        assert_eq!(
            print_expr(&m.funcs[0].body),
            "1 - 2 - 3 * 4 == x",
        );
        use Expr::*;
        let lit = |n| Box::new(Int(n));
        assert_eq!(
            m.funcs[0].body,
            Bin(
                SrcOp::Eq,
                Box::new(Bin(
                    SrcOp::Sub,
                    Box::new(Bin(SrcOp::Sub, lit(1), lit(2))),
                    Box::new(Bin(SrcOp::Mul, lit(3), lit(4)))
                )),
                Box::new(Var("x".into()))
            )
        );
    }

    #[test]
    fn write_binds_looser_than_arithmetic() {
        let m = parse_src("module { fn main(x: int) -> int { 7 := 1; *x + 1 } }").unwrap();
        match &m.funcs[0].body {
            Expr::Seq(a, b) => {
                assert_eq!(**a, Expr::Write(Box::new(Expr::Int(7)), Box::new(Expr::Int(1))));
                assert!(matches!(**b, Expr::Bin(SrcOp::Add, _, _)));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_src("module {\n  fn main(x: int) -> int { x + }\n}").unwrap_err();
        assert_eq!((e.line, e.col), (2, 32));
        let e = parse_src("module { heap 1 heap 2 }").unwrap_err();
        assert!(e.msg.contains("duplicate"));
        assert!(parse_src("module { fn main(x: int) -> int { 1 } ").is_err());
        assert!(parse_src("module { fn main(x: int) -> int { # } }").is_err());
    }

    #[test]
    fn negative_and_wrapping_literals() {
        let m = parse_src("module { fn main(x: int) -> int { -2147483648 + 4294967295 } }")
            .unwrap();
        assert_eq!(
            m.funcs[0].body,
            Expr::Bin(SrcOp::Add, Box::new(Expr::Int(i32::MIN)), Box::new(Expr::Int(-1)))
        );
        assert!(parse_src("module { fn main(x: int) -> int { 4294967296 } }").is_err());
    }
}

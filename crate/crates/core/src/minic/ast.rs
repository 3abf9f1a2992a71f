//! Surface and elaborated syntax of the C subset.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Expression types: what variables, parameters, and results can hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SrcType {
    Int,
    Ptr(Box<WordType>),
}

/// Types of heap objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordType {
    Scalar(SrcType),
    Struct(String),
    Array(u32, SrcType),
}

impl SrcType {
    pub fn ptr(w: WordType) -> SrcType {
        SrcType::Ptr(Box::new(w))
    }

    pub fn ptr_to(t: SrcType) -> SrcType {
        SrcType::ptr(WordType::Scalar(t))
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, SrcType::Ptr(_))
    }

    pub fn pointee(&self) -> Option<&WordType> {
        match self {
            SrcType::Ptr(w) => Some(w),
            SrcType::Int => None,
        }
    }
}

impl fmt::Display for SrcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrcType::Int => f.write_str("int"),
            SrcType::Ptr(w) => write!(f, "ptr {w}"),
        }
    }
}

impl fmt::Display for WordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WordType::Scalar(t) => write!(f, "{t}"),
            WordType::Struct(s) => write!(f, "struct {s}"),
            WordType::Array(n, t) => write!(f, "[{t}; {n}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SrcOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Lt,
}

impl SrcOp {
    pub fn symbol(self) -> &'static str {
        match self {
            SrcOp::Add => "+",
            SrcOp::Sub => "-",
            SrcOp::Mul => "*",
            SrcOp::Div => "/",
            SrcOp::Eq => "==",
            SrcOp::Lt => "<",
        }
    }
}

/// Parsed expression; names are unresolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i32),
    Var(String),
    Seq(Box<Expr>, Box<Expr>),
    Bin(SrcOp, Box<Expr>, Box<Expr>),
    Assign(String, Box<Expr>),
    LetCall {
        var: String,
        func: String,
        arg: Box<Expr>,
        body: Box<Expr>,
    },
    Deref(Box<Expr>),
    /// `e1 := e2` writes `e2` through the pointer `e1`.
    Write(Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Field(Box<Expr>, String),
    MallocArray(SrcType, Box<Expr>),
    MallocSingle(WordType),
    Free(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<(String, WordType)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Import {
    pub name: String,
    pub param: SrcType,
    pub result: SrcType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub param: (String, SrcType),
    pub result: SrcType,
    pub vars: Vec<(String, SrcType)>,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SrcModule {
    pub imports: Vec<Import>,
    pub structs: Vec<StructDef>,
    pub funcs: Vec<Function>,
    /// Initial heap size in cells.
    pub heap: u32,
}

impl SrcModule {
    pub fn struct_def(&self, name: &str) -> Option<&StructDef> {
        self.structs.iter().find(|s| s.name == name)
    }
}

/// Elaborated expression: resolved names, explicit coercions, and the
/// static type of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TExpr {
    pub kind: TKind,
    pub ty: SrcType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TKind {
    Int(i32),
    /// Local slot: 0 is the parameter, then the declared variables.
    Var(u32),
    Seq(Box<TExpr>, Box<TExpr>),
    Bin(SrcOp, Box<TExpr>, Box<TExpr>),
    /// `ptr ± n`, moving by whole elements of `pointee`.
    PtrArith {
        sub: bool,
        ptr: Box<TExpr>,
        n: Box<TExpr>,
        pointee: WordType,
    },
    Assign(u32, Box<TExpr>),
    /// Calls function `func` (imports first) and stores the result in
    /// local `bind` before evaluating `body`. `coerce` marks an integer
    /// result bound to a pointer variable.
    Call {
        func: u32,
        arg: Box<TExpr>,
        bind: u32,
        coerce: bool,
        body: Box<TExpr>,
    },
    Deref(Box<TExpr>),
    /// Writes a value of type `val.ty` through `ptr`.
    Write(Box<TExpr>, Box<TExpr>),
    If(Box<TExpr>, Box<TExpr>, Box<TExpr>),
    Field {
        ptr: Box<TExpr>,
        strukt: String,
        field: usize,
    },
    MallocArray(SrcType, Box<TExpr>),
    MallocSingle(WordType),
    Free(Box<TExpr>),
    /// An integer used where a pointer is expected.
    CoerceIntToPtr(Box<TExpr>),
}

impl TExpr {
    pub fn new(kind: TKind, ty: SrcType) -> TExpr {
        TExpr { kind, ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TFunction {
    pub name: String,
    pub param: SrcType,
    pub result: SrcType,
    pub vars: Vec<SrcType>,
    pub body: TExpr,
}

impl TFunction {
    /// Parameter followed by declared variables.
    pub fn local_types(&self) -> impl Iterator<Item = &SrcType> {
        std::iter::once(&self.param).chain(&self.vars)
    }
}

/// A module that passed the source type checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckedModule {
    pub imports: Vec<Import>,
    pub structs: Vec<StructDef>,
    pub funcs: Vec<TFunction>,
    pub heap: u32,
    /// Index into `funcs` of `main`.
    pub main: usize,
}

impl CheckedModule {
    pub fn struct_def(&self, name: &str) -> &StructDef {
        self.structs
            .iter()
            .find(|s| s.name == name)
            .expect("checked struct name")
    }

    /// Number of heap cells a value of type `w` occupies.
    pub fn cells(&self, w: &WordType) -> u32 {
        match w {
            WordType::Scalar(_) => 1,
            WordType::Array(n, _) => *n,
            WordType::Struct(s) => self
                .struct_def(s)
                .fields
                .iter()
                .map(|(_, w)| self.cells(w))
                .sum(),
        }
    }

    /// Cell offset of field `k` of struct `s`.
    pub fn field_cell_offset(&self, s: &str, k: usize) -> u32 {
        self.struct_def(s).fields[..k]
            .iter()
            .map(|(_, w)| self.cells(w))
            .sum()
    }

    /// Element type and count a pointer to field `k` annotates.
    pub fn field_view(&self, s: &str, k: usize) -> (WordType, u32) {
        match &self.struct_def(s).fields[k].1 {
            WordType::Array(n, t) => (WordType::Scalar(t.clone()), *n),
            w => (w.clone(), 1),
        }
    }
}

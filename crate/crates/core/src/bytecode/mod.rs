//! Modules, value types, and instructions.
//!
//! The instruction set is WebAssembly's structured core (no labels or
//! branches) extended with segment instructions operating on handles.

mod sexpr;
mod text;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use sexpr::{Sexp, SexpError};
pub use text::{parse_module, print_instrs, print_module, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    I32,
    I64,
    F32,
    F64,
    Handle,
}

impl ValueType {
    pub const ALL: [ValueType; 5] = [
        ValueType::I32,
        ValueType::I64,
        ValueType::F32,
        ValueType::F64,
        ValueType::Handle,
    ];

    /// Width in bytes of the value's segment-memory representation.
    pub const fn size(self) -> u32 {
        match self {
            ValueType::I32 | ValueType::F32 => 4,
            ValueType::I64 | ValueType::F64 => 8,
            ValueType::Handle => 16,
        }
    }

    pub const fn is_int(self) -> bool {
        matches!(self, ValueType::I32 | ValueType::I64)
    }

    pub const fn is_float(self) -> bool {
        matches!(self, ValueType::F32 | ValueType::F64)
    }

    pub const fn name(self) -> &'static str {
        match self {
            ValueType::I32 => "i32",
            ValueType::I64 => "i64",
            ValueType::F32 => "f32",
            ValueType::F64 => "f64",
            ValueType::Handle => "handle",
        }
    }

    pub fn from_name(s: &str) -> Option<ValueType> {
        ValueType::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
    Xor,
    Eq,
    Lt,
}

impl BinOp {
    pub const ALL: [BinOp; 9] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Eq,
        BinOp::Lt,
    ];

    /// Whether `ty.op` is a defined instruction.
    pub fn applies_to(self, ty: ValueType) -> bool {
        match self {
            BinOp::And | BinOp::Or | BinOp::Xor => ty.is_int(),
            _ => ty != ValueType::Handle,
        }
    }

    /// Comparisons produce `i32` whatever the operand type.
    pub fn result_type(self, operand: ValueType) -> ValueType {
        match self {
            BinOp::Eq | BinOp::Lt => ValueType::I32,
            _ => operand,
        }
    }

    /// Text mnemonic for the given operand type (`div_s`/`lt_s` are the
    /// integer spellings).
    pub fn mnemonic(self, ty: ValueType) -> &'static str {
        let int = ty.is_int();
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div if int => "div_s",
            BinOp::Div => "div",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Eq => "eq",
            BinOp::Lt if int => "lt_s",
            BinOp::Lt => "lt",
        }
    }

    pub fn from_mnemonic(ty: ValueType, s: &str) -> Option<BinOp> {
        BinOp::ALL
            .into_iter()
            .find(|op| op.applies_to(ty) && op.mnemonic(ty) == s)
    }
}

/// Constant payload. Integers are stored sign-extended; `f32` constants are
/// kept in an `f64` that is exactly representable as `f32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Nop,
    Trap,
    Const(ValueType, Literal),
    BinOp(ValueType, BinOp),
    Get(u32),
    Set(u32),
    Load(ValueType),
    Store(ValueType),
    If(Vec<Instr>, Vec<Instr>),
    Call(u32),
    Return,
    SegLoad(ValueType),
    SegStore(ValueType),
    Slice,
    NewSegment,
    HandleAdd,
    SegFree,
}

impl Instr {
    pub fn i32(v: i32) -> Instr {
        Instr::Const(ValueType::I32, Literal::Int(v as i64))
    }

    pub fn i64(v: i64) -> Instr {
        Instr::Const(ValueType::I64, Literal::Int(v))
    }

    /// Number of instructions including those nested in `if` arms.
    pub fn count(body: &[Instr]) -> usize {
        body.iter()
            .map(|i| match i {
                Instr::If(t, e) => 1 + Instr::count(t) + Instr::count(e),
                _ => 1,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FuncType {
    pub params: Vec<ValueType>,
    pub results: Vec<ValueType>,
}

impl FuncType {
    pub fn new(params: Vec<ValueType>, results: Vec<ValueType>) -> Self {
        FuncType { params, results }
    }
}

impl fmt::Display for FuncType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |ts: &[ValueType]| {
            ts.iter()
                .map(|t| t.name())
                .collect::<Vec<_>>()
                .join(" ")
        };
        write!(f, "[{}] -> [{}]", join(&self.params), join(&self.results))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FuncDef {
    pub ty: FuncType,
    pub locals: Vec<ValueType>,
    pub body: Vec<Instr>,
}

impl FuncDef {
    /// Types of all local slots: parameters followed by declared locals.
    pub fn local_types(&self) -> impl Iterator<Item = ValueType> + '_ {
        self.ty.params.iter().chain(self.locals.iter()).copied()
    }

    pub fn num_locals(&self) -> usize {
        self.ty.params.len() + self.locals.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModuleDef {
    pub funcs: Vec<FuncDef>,
    pub imports: Vec<FuncType>,
    /// Linear memory size in bytes.
    pub heap_size: u32,
    /// Segment memory size in bytes.
    pub segment_size: u32,
}

impl ModuleDef {
    pub fn is_whole(&self) -> bool {
        self.imports.is_empty()
    }

    /// Function types in index order: imports first, then definitions.
    pub fn func_types(&self) -> Vec<FuncType> {
        self.imports
            .iter()
            .cloned()
            .chain(self.funcs.iter().map(|f| f.ty.clone()))
            .collect()
    }

    pub fn num_funcs(&self) -> usize {
        self.imports.len() + self.funcs.len()
    }
}

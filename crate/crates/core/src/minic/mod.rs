//! A small C-like source language with structs, arrays, and manual memory
//! management, and its safety judgment.

pub mod ast;
pub mod check;
pub mod eval;
pub mod parse;
pub mod relate;

pub use ast::{CheckedModule, Expr, SrcModule, SrcType, TExpr, TKind, WordType};
pub use check::{src_typecheck, SrcTypeError};
pub use eval::{
    src_run, SrcConfig, SrcEvent, SrcHostError, SrcOutcome, SrcPtr, SrcRunResult, SrcTrace,
    SrcValue,
};
pub use parse::{parse_src, print_src, SrcParseError};
pub use relate::{src_ms, src_relate, SrcVerdict};

/// Parse or type errors of a source module.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SrcError {
    #[error("parse error at {0}")]
    Parse(#[from] SrcParseError),
    #[error("type error: {0}")]
    Type(#[from] SrcTypeError),
}

/// Parses and checks a module in one go.
pub fn load_src(text: &str) -> Result<CheckedModule, SrcError> {
    Ok(src_typecheck(&parse_src(text)?)?)
}

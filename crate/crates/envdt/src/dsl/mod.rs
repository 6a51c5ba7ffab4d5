//! The `.envdt` text format: lexer, parser, and canonical printer.
//!
//! Parsing normalises models into canonical form (initial pseudostates at
//! index 0, constraints classified into shapes), and the printer emits
//! exactly that form, so `parse ∘ print` is the identity on everything
//! the parser can produce.

mod lexer;
mod parser;
mod printer;

pub use parser::parse_model;
pub use printer::print_model;

/// A lexing or parsing failure, with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

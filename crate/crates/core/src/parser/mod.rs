//! Text frontend for the `.casm` dialect.
//!
//! [`parse_program`] lexes, parses and validates a source text into a
//! [`Program`]; [`pretty_print`] produces canonical text that parses back to
//! a structurally equal program.

mod elab;
mod lexer;
mod print;
mod syntax;

use std::fmt;

use crate::ast::Program;

pub use print::{pretty_print, print_rule, print_term};

/// Version of the formula syntax emitted by the printer.
pub const DIALECT_VERSION: &str = "1.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub line: u32,
    pub col: u32,
    pub len: u32,
}

impl Span {
    pub const START: Span = Span {
        line: 1,
        col: 1,
        len: 0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub span: Span,
}

impl Diagnostic {
    pub fn error(code: &'static str, message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
            span,
        }
    }

    pub fn warning(code: &'static str, message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message: message.into(),
            span,
        }
    }

    /// `file:line:col: severity[code]: message`
    pub fn render(&self, file: &str) -> String {
        format!(
            "{file}:{}:{}: {}[{}]: {}",
            self.span.line, self.span.col, self.severity, self.code, self.message
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}[{}]: {}",
            self.span.line, self.span.col, self.severity, self.code, self.message
        )
    }
}

/// Parses and validates a program. On failure at least one error diagnostic
/// is returned and no program.
pub fn parse_program(text: &str) -> Result<Program, Vec<Diagnostic>> {
    let tokens = lexer::lex(text).map_err(|d| vec![d])?;
    if tokens.is_empty() {
        return Err(vec![Diagnostic::error(
            "E-EMPTY",
            "input contains no program",
            Span::START,
        )]);
    }
    // errors at end of input point at the last token
    let eof = tokens[tokens.len() - 1].span;
    let raw = syntax::Parser::new(tokens, eof)
        .program()
        .map_err(|d| vec![d])?;
    elab::elaborate(&raw)
}

//! The `.nkb` knowledge-base definition language.
//!
//! ```text
//! # body-weight fragment
//! range Weight = cardinal 1..300 unit "kg"
//! datum ReportedWeight : Weight
//! const UnknownWeight : Weight = uniform(1, 300)
//! infer CurrentWeight : Weight = nearest_obs(ReportedWeight, radius=12h, else=UnknownWeight)
//! ```
//!
//! [`parse`] turns text into a [`KnowledgeBase`] plus diagnostics; syntax
//! problems surface here with source spans, while semantic defects are the
//! business of [`KnowledgeBase::validate`]. [`serialize`] renders canonical
//! text: `parse(serialize(kb))` is structurally `kb`, and serializing twice
//! is byte-identical.

mod lexer;
mod parser;
mod serializer;

pub use parser::{parse, parse_named};
pub use serializer::serialize;

use std::fmt;

use crate::kb::Severity;

/// A location in `.nkb` source text. `line` and columns are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.col_start)
    }
}

/// A parser diagnostic; every rejection carries at least one of these with
/// severity [`Severity::Error`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub span: SourceSpan,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {sev}[{}] {}", self.span, self.code, self.message)
    }
}

//! The codified plan language.
//!
//! Grammar, one statement per logical line, blocks by indentation:
//!
//! ```text
//! plan      = "def" NAME "():" NEWLINE block
//! statement = "#" text
//!           | NAME "(" args ")"                       action call
//!           | NAME "=" expr                           binding
//!           | "assert(" pred ")" [else-clause]        precondition + recovery
//!           | "while" pred ":" block ["if" cond ": break"]
//!           | "if" cond ":" block ["else:" block]
//!           | "final_answer(" expr ")"
//! pred      = ["not"] 'REL' "to" 'OBJ' | ["not"] REL "(" 'OBJ' ")"
//!           | ["not"] "TextInspectorTool.contains(" 'probe' ")"
//! ```
//!
//! The `else:` of an `assert` may sit on the same line, on the next line at
//! the same or a deeper indent, or open its own block. Blocks nest at most
//! four levels deep.

mod ast;
mod lexer;
mod parser;
mod render;
mod validate;

use alloc::string::{String, ToString};
use core::fmt;

pub use ast::*;
pub use parser::{is_plan_name, parse_plan};
pub use render::{
    quote, render_call, render_condition, render_expr, render_plan, render_predicate, render_statements, render_value,
    CommentStyle,
};
pub use validate::{
    validate_plan, ActionSig, ArgKind, Issue, IssueKind, ValidationReport, VocabError, Vocabulary, LOOP_SENTINEL,
};

/// Deepest allowed block nesting; the plan body is level 1.
pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParseErrorKind {
    BadHeader,
    BadIndent,
    UnknownConstruct,
    DanglingElse,
    EmptyBody,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, kind: ParseErrorKind, message: &str) -> Self {
        ParseError {
            line,
            kind,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::BadHeader => "bad header",
            ParseErrorKind::BadIndent => "bad indent",
            ParseErrorKind::UnknownConstruct => "unknown construct",
            ParseErrorKind::DanglingElse => "dangling else",
            ParseErrorKind::EmptyBody => "empty body",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("no translation for comment `{0}`")]
    MissingTranslation(String),
}

/// Parses a completion that may or may not repeat the plan header.
pub fn parse_completion(header: &str, completion: &str) -> Result<PlanAst, ParseError> {
    let starts_with_def = completion
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with("def "));
    if starts_with_def {
        parse_plan(completion)
    } else {
        let mut src = String::with_capacity(header.len() + completion.len() + 1);
        src.push_str(header.trim_end());
        src.push('\n');
        src.push_str(completion);
        parse_plan(&src)
    }
}

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// A parsed plan: `def name():` followed by an ordered statement list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAst {
    pub name: String,
    pub body: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    /// 1-based source line of the statement's first token.
    pub line: usize,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtKind {
    Comment(String),
    Action(Call),
    Binding {
        target: String,
        value: Expr,
    },
    AssertRecover {
        predicate: Predicate,
        recovery: Vec<Statement>,
    },
    /// `while GUARD:` runs the body while the guard holds. The optional break
    /// condition is checked after every iteration.
    Loop {
        guard: Predicate,
        body: Vec<Statement>,
        break_if: Option<Condition>,
    },
    Conditional {
        condition: Condition,
        then_body: Vec<Statement>,
        else_body: Vec<Statement>,
    },
    /// `final_answer(expr)`
    Return(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub name: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arg {
    pub keyword: Option<String>,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Value {
    Str(String),
    Int(i64),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExprBase {
    Value(Value),
    Call(Call),
}

/// A value or call followed by `[0]` / `['key']` accessors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expr {
    pub base: ExprBase,
    pub path: Vec<Accessor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accessor {
    Index(i64),
    Key(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Close,
    Holding,
    Visible,
    /// Text probe over the current browser viewport.
    Contains,
    Eaten,
    SatOn,
    Open,
    On,
    Grabbed,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::Close,
        Relation::Holding,
        Relation::Visible,
        Relation::Contains,
        Relation::Eaten,
        Relation::SatOn,
        Relation::Open,
        Relation::On,
        Relation::Grabbed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Close => "close",
            Relation::Holding => "holding",
            Relation::Visible => "visible",
            Relation::Contains => "contains",
            Relation::Eaten => "eaten",
            Relation::SatOn => "sat_on",
            Relation::Open => "open",
            Relation::On => "on",
            Relation::Grabbed => "grabbed",
        }
    }

    pub fn from_name(name: &str) -> Option<Relation> {
        Relation::ALL.iter().copied().find(|r| r.as_str() == name)
    }

    /// `contains` takes a text probe; every other relation names an object.
    pub fn takes_object(self) -> bool {
        self != Relation::Contains
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub relation: Relation,
    pub subject: String,
    pub negated: bool,
}

impl Predicate {
    pub fn new(relation: Relation, subject: impl Into<String>) -> Self {
        Predicate {
            relation,
            subject: subject.into(),
            negated: false,
        }
    }

    pub fn negate(mut self) -> Self {
        self.negated = !self.negated;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Predicate(Predicate),
    /// A bare identifier: a bound variable or a built-in sentinel such as
    /// `too_many_pages_scrolled`.
    Flag {
        name: String,
        negated: bool,
    },
}

impl Statement {
    pub fn new(line: usize, kind: StmtKind) -> Self {
        Statement { line, kind }
    }

    pub fn is_comment(&self) -> bool {
        matches!(self.kind, StmtKind::Comment(_))
    }

    /// Nested statement blocks, in source order.
    pub fn children(&self) -> Vec<&[Statement]> {
        match &self.kind {
            StmtKind::AssertRecover { recovery, .. } => alloc::vec![recovery.as_slice()],
            StmtKind::Loop { body, .. } => alloc::vec![body.as_slice()],
            StmtKind::Conditional {
                then_body, else_body, ..
            } => alloc::vec![then_body.as_slice(), else_body.as_slice()],
            _ => Vec::new(),
        }
    }
}

impl PlanAst {
    /// Copy with every recorded line set to zero, for structural comparison.
    pub fn without_lines(&self) -> PlanAst {
        PlanAst {
            name: self.name.clone(),
            body: strip_lines(&self.body),
        }
    }

    pub fn structurally_eq(&self, other: &PlanAst) -> bool {
        self.without_lines() == other.without_lines()
    }

    /// Depth-first walk over every statement, nested ones included.
    pub fn walk(&self) -> Vec<&Statement> {
        let mut out = Vec::new();
        walk_into(&self.body, &mut out);
        out
    }

    /// Plan with every `assert` (and its recovery block) removed.
    pub fn without_assertions(&self) -> PlanAst {
        PlanAst {
            name: self.name.clone(),
            body: drop_asserts(&self.body),
        }
    }

    pub fn renamed(&self, name: impl Into<String>) -> PlanAst {
        PlanAst {
            name: name.into(),
            body: self.body.clone(),
        }
    }
}

fn walk_into<'a>(block: &'a [Statement], out: &mut Vec<&'a Statement>) {
    for stmt in block {
        out.push(stmt);
        for child in stmt.children() {
            walk_into(child, out);
        }
    }
}

fn strip_lines(block: &[Statement]) -> Vec<Statement> {
    block
        .iter()
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::AssertRecover { predicate, recovery } => StmtKind::AssertRecover {
                    predicate: predicate.clone(),
                    recovery: strip_lines(recovery),
                },
                StmtKind::Loop { guard, body, break_if } => StmtKind::Loop {
                    guard: guard.clone(),
                    body: strip_lines(body),
                    break_if: break_if.clone(),
                },
                StmtKind::Conditional {
                    condition,
                    then_body,
                    else_body,
                } => StmtKind::Conditional {
                    condition: condition.clone(),
                    then_body: strip_lines(then_body),
                    else_body: strip_lines(else_body),
                },
                other => other.clone(),
            };
            Statement { line: 0, kind }
        })
        .collect()
}

fn drop_asserts(block: &[Statement]) -> Vec<Statement> {
    block
        .iter()
        .filter(|s| !matches!(s.kind, StmtKind::AssertRecover { .. }))
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::Loop { guard, body, break_if } => StmtKind::Loop {
                    guard: guard.clone(),
                    body: drop_asserts(body),
                    break_if: break_if.clone(),
                },
                StmtKind::Conditional {
                    condition,
                    then_body,
                    else_body,
                } => StmtKind::Conditional {
                    condition: condition.clone(),
                    then_body: drop_asserts(then_body),
                    else_body: drop_asserts(else_body),
                },
                other => other.clone(),
            };
            Statement { line: s.line, kind }
        })
        .collect()
}

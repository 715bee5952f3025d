use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ast::*;

/// Identifier bound by the executors while a loop runs.
pub const LOOP_SENTINEL: &str = "too_many_pages_scrolled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    Object,
    Text,
    Int,
    Any,
}

impl ArgKind {
    pub fn from_name(name: &str) -> Option<ArgKind> {
        match name {
            "obj" | "object" => Some(ArgKind::Object),
            "text" | "str" => Some(ArgKind::Text),
            "int" => Some(ArgKind::Int),
            "any" => Some(ArgKind::Any),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ArgKind::Object => "obj",
            ArgKind::Text => "text",
            ArgKind::Int => "int",
            ArgKind::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSig {
    pub name: String,
    pub kinds: Vec<ArgKind>,
}

impl ActionSig {
    pub fn new(name: impl Into<String>, kinds: Vec<ArgKind>) -> Self {
        ActionSig {
            name: name.into(),
            kinds,
        }
    }

    pub fn arity(&self) -> usize {
        self.kinds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("duplicate action `{0}`")]
    DuplicateAction(String),
    #[error("duplicate object `{0}`")]
    DuplicateObject(String),
}

/// Declared actions (in declaration order) and objects.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    actions: Vec<ActionSig>,
    objects: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_action(&mut self, sig: ActionSig) -> Result<(), VocabError> {
        if self.action(&sig.name).is_some() {
            return Err(VocabError::DuplicateAction(sig.name));
        }
        self.actions.push(sig);
        Ok(())
    }

    pub fn add_object(&mut self, name: impl Into<String>) -> Result<(), VocabError> {
        let name = name.into();
        if self.has_object(&name) {
            return Err(VocabError::DuplicateObject(name));
        }
        self.objects.push(name);
        Ok(())
    }

    pub fn with_action(mut self, name: &str, kinds: &[ArgKind]) -> Self {
        let _ = self.add_action(ActionSig::new(name, kinds.to_vec()));
        self
    }

    pub fn with_objects<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for n in names {
            let _ = self.add_object(n);
        }
        self
    }

    pub fn action(&self, name: &str) -> Option<&ActionSig> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn actions(&self) -> &[ActionSig] {
        &self.actions
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn has_object(&self, name: &str) -> bool {
        self.objects.iter().any(|o| o == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    UnknownAction {
        name: String,
    },
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    ArgumentKind {
        name: String,
        position: usize,
        expected: ArgKind,
    },
    UnknownObject {
        name: String,
    },
    UnboundVariable {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub line: usize,
    #[serde(flatten)]
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// Issue kinds without line numbers.
    pub fn kinds(&self) -> Vec<IssueKind> {
        self.issues.iter().map(|i| i.kind.clone()).collect()
    }
}

/// Checks every call, predicate and variable reference against `vocab`.
/// Violations become report entries; the function itself never fails.
pub fn validate_plan(plan: &PlanAst, vocab: &Vocabulary) -> ValidationReport {
    let mut v = Validator {
        vocab,
        bound: BTreeSet::new(),
        issues: Vec::new(),
    };
    v.bound.insert(LOOP_SENTINEL.to_string());
    v.block(&plan.body);
    ValidationReport { issues: v.issues }
}

struct Validator<'a> {
    vocab: &'a Vocabulary,
    bound: BTreeSet<String>,
    issues: Vec<Issue>,
}

impl Validator<'_> {
    fn push(&mut self, line: usize, kind: IssueKind) {
        self.issues.push(Issue { line, kind });
    }

    fn block(&mut self, block: &[Statement]) {
        for stmt in block {
            self.statement(stmt);
        }
    }

    fn statement(&mut self, stmt: &Statement) {
        let line = stmt.line;
        match &stmt.kind {
            StmtKind::Comment(_) => {}
            StmtKind::Action(call) => self.call(line, call),
            StmtKind::Binding { target, value } => {
                self.expr(line, value);
                self.bound.insert(target.clone());
            }
            StmtKind::Return(expr) => self.expr(line, expr),
            StmtKind::AssertRecover { predicate, recovery } => {
                self.predicate(line, predicate);
                self.block(recovery);
            }
            StmtKind::Loop { guard, body, break_if } => {
                self.predicate(line, guard);
                self.block(body);
                if let Some(c) = break_if {
                    self.condition(line, c);
                }
            }
            StmtKind::Conditional {
                condition,
                then_body,
                else_body,
            } => {
                self.condition(line, condition);
                self.block(then_body);
                self.block(else_body);
            }
        }
    }

    fn call(&mut self, line: usize, call: &Call) {
        let Some(sig) = self.vocab.action(&call.name) else {
            self.push(
                line,
                IssueKind::UnknownAction {
                    name: call.name.clone(),
                },
            );
            for arg in &call.args {
                self.value_bound(line, &arg.value);
            }
            return;
        };
        let kinds = sig.kinds.clone();
        if kinds.len() != call.args.len() {
            self.push(
                line,
                IssueKind::ArityMismatch {
                    name: call.name.clone(),
                    expected: kinds.len(),
                    found: call.args.len(),
                },
            );
        }
        for (position, arg) in call.args.iter().enumerate() {
            let expected = kinds.get(position).copied().unwrap_or(ArgKind::Any);
            match (&arg.value, expected) {
                (Value::Var(_), _) => self.value_bound(line, &arg.value),
                (_, ArgKind::Any) => {}
                (Value::Str(s), ArgKind::Object) => {
                    if !self.vocab.has_object(s) {
                        self.push(line, IssueKind::UnknownObject { name: s.clone() });
                    }
                }
                (Value::Str(_), ArgKind::Text) | (Value::Int(_), ArgKind::Int) => {}
                _ => self.push(
                    line,
                    IssueKind::ArgumentKind {
                        name: call.name.clone(),
                        position,
                        expected,
                    },
                ),
            }
        }
    }

    fn value_bound(&mut self, line: usize, value: &Value) {
        if let Value::Var(name) = value {
            if !self.bound.contains(name) {
                self.push(line, IssueKind::UnboundVariable { name: name.clone() });
            }
        }
    }

    fn expr(&mut self, line: usize, expr: &Expr) {
        match &expr.base {
            ExprBase::Value(v) => self.value_bound(line, v),
            ExprBase::Call(c) => self.call(line, c),
        }
    }

    fn predicate(&mut self, line: usize, p: &Predicate) {
        if p.relation.takes_object() && !self.vocab.has_object(&p.subject) {
            self.push(
                line,
                IssueKind::UnknownObject {
                    name: p.subject.clone(),
                },
            );
        }
    }

    fn condition(&mut self, line: usize, c: &Condition) {
        match c {
            Condition::Predicate(p) => self.predicate(line, p),
            Condition::Flag { name, .. } => {
                if !self.bound.contains(name) {
                    self.push(line, IssueKind::UnboundVariable { name: name.clone() });
                }
            }
        }
    }
}

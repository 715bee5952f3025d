use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::ast::*;
use super::RenderError;

const INDENT: &str = "    ";

/// How comments are emitted by [`render_plan`].
#[derive(Debug, Clone, Copy)]
pub enum CommentStyle<'a> {
    Keep,
    Strip,
    /// Replace every comment via the lookup; a missing entry is an error.
    Translate(&'a BTreeMap<String, String>),
}

pub fn render_plan(plan: &PlanAst, style: CommentStyle<'_>) -> Result<String, RenderError> {
    let mut out = String::new();
    let _ = writeln!(out, "def {}():", plan.name);
    render_block(&plan.body, 1, style, &mut out)?;
    Ok(out)
}

/// Renders a block of statements at the given indent level.
pub fn render_statements(block: &[Statement], level: usize, style: CommentStyle<'_>) -> Result<String, RenderError> {
    let mut out = String::new();
    render_block(block, level, style, &mut out)?;
    Ok(out)
}

/// Single-line text of a call, e.g. `sit('sofa')`.
pub fn render_call(call: &Call) -> String {
    let mut out = String::new();
    out.push_str(&call.name);
    out.push('(');
    for (i, arg) in call.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if let Some(k) = &arg.keyword {
            out.push_str(k);
            out.push('=');
        }
        out.push_str(&render_value(&arg.value));
    }
    out.push(')');
    out
}

pub fn render_value(value: &Value) -> String {
    match value {
        Value::Str(s) => quote(s),
        Value::Int(i) => i.to_string(),
        Value::Var(v) => v.clone(),
    }
}

pub fn render_expr(expr: &Expr) -> String {
    let mut out = match &expr.base {
        ExprBase::Value(v) => render_value(v),
        ExprBase::Call(c) => render_call(c),
    };
    for acc in &expr.path {
        match acc {
            Accessor::Index(i) => {
                let _ = write!(out, "[{i}]");
            }
            Accessor::Key(k) => {
                let _ = write!(out, "[{}]", quote(k));
            }
        }
    }
    out
}

pub fn render_predicate(p: &Predicate) -> String {
    let not = if p.negated { "not " } else { "" };
    match p.relation {
        Relation::Contains => {
            alloc::format!("{not}TextInspectorTool.contains({})", quote(&p.subject))
        }
        rel => alloc::format!("{not}{} to {}", quote(rel.as_str()), quote(&p.subject)),
    }
}

pub fn render_condition(c: &Condition) -> String {
    match c {
        Condition::Predicate(p) => render_predicate(p),
        Condition::Flag { name, negated: true } => alloc::format!("not {name}"),
        Condition::Flag { name, negated: false } => name.clone(),
    }
}

/// Single-quoted literal with `\`, `'`, newline and tab escaped.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn visible<'b>(block: &'b [Statement], style: CommentStyle<'_>) -> Vec<&'b Statement> {
    block
        .iter()
        .filter(|s| !(s.is_comment() && matches!(style, CommentStyle::Strip)))
        .collect()
}

fn inline_ok(stmt: &Statement, style: CommentStyle<'_>) -> bool {
    match &stmt.kind {
        StmtKind::Action(_) | StmtKind::Binding { .. } | StmtKind::Return(_) => true,
        StmtKind::AssertRecover { recovery, .. } => {
            let rec = visible(recovery, style);
            rec.is_empty() || (rec.len() == 1 && inline_ok(rec[0], style))
        }
        _ => false,
    }
}

/// Statement text without its recovery block, or with an inline recovery.
fn inline_text(stmt: &Statement, style: CommentStyle<'_>) -> String {
    match &stmt.kind {
        StmtKind::Action(call) => render_call(call),
        StmtKind::Binding { target, value } => alloc::format!("{target} = {}", render_expr(value)),
        StmtKind::Return(expr) => alloc::format!("final_answer({})", render_expr(expr)),
        StmtKind::AssertRecover { predicate, recovery } => {
            let head = alloc::format!("assert({})", render_predicate(predicate));
            match visible(recovery, style).as_slice() {
                [] => head,
                [one] => alloc::format!("{head} else: {}", inline_text(one, style)),
                _ => head,
            }
        }
        _ => String::new(),
    }
}

fn render_block(
    block: &[Statement],
    level: usize,
    style: CommentStyle<'_>,
    out: &mut String,
) -> Result<(), RenderError> {
    for stmt in block {
        render_stmt(stmt, level, style, out)?;
    }
    Ok(())
}

fn pad(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str(INDENT);
    }
}

fn render_stmt(stmt: &Statement, level: usize, style: CommentStyle<'_>, out: &mut String) -> Result<(), RenderError> {
    match &stmt.kind {
        StmtKind::Comment(text) => {
            let text = match style {
                CommentStyle::Keep => text.clone(),
                CommentStyle::Strip => return Ok(()),
                CommentStyle::Translate(table) => table
                    .get(text)
                    .cloned()
                    .ok_or_else(|| RenderError::MissingTranslation(text.clone()))?,
            };
            pad(out, level);
            if text.is_empty() {
                out.push_str("#\n");
            } else {
                let _ = writeln!(out, "# {text}");
            }
        }
        StmtKind::Action(_) | StmtKind::Binding { .. } | StmtKind::Return(_) => {
            pad(out, level);
            out.push_str(&inline_text(stmt, style));
            out.push('\n');
        }
        StmtKind::AssertRecover { predicate, recovery } => {
            pad(out, level);
            let _ = writeln!(out, "assert({})", render_predicate(predicate));
            let rec = visible(recovery, style);
            match rec.as_slice() {
                [] => {}
                [one] if inline_ok(one, style) => {
                    pad(out, level + 1);
                    let _ = writeln!(out, "else: {}", inline_text(one, style));
                }
                _ => {
                    pad(out, level + 1);
                    out.push_str("else:\n");
                    render_block(recovery, level + 2, style, out)?;
                }
            }
        }
        StmtKind::Loop { guard, body, break_if } => {
            pad(out, level);
            let _ = writeln!(out, "while {}:", render_predicate(guard));
            render_block(body, level + 1, style, out)?;
            if let Some(cond) = break_if {
                pad(out, level + 1);
                let _ = writeln!(out, "if {}: break", render_condition(cond));
            }
        }
        StmtKind::Conditional {
            condition,
            then_body,
            else_body,
        } => {
            pad(out, level);
            let _ = writeln!(out, "if {}:", render_condition(condition));
            render_block(then_body, level + 1, style, out)?;
            if !else_body.is_empty() {
                pad(out, level);
                out.push_str("else:\n");
                render_block(else_body, level + 1, style, out)?;
            }
        }
    }
    Ok(())
}

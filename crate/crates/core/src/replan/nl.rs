//! Sentence template for the natural-language plan format, and its reader.
//!
//! ```text
//! Plan for eat bread on sofa:
//! Note: Locate sofa and bread.
//! Step 1: walk the livingroom.
//! Step 2: make sure the agent is close to the bread; otherwise find the bread.
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::plan::{Arg, Call, CommentStyle, PlanAst, Predicate, Relation, Statement, StmtKind, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NlError {
    #[error("line {line}: no sentence template for this statement")]
    Unsupported { line: usize },
    #[error("line {line}: unreadable sentence `{text}`")]
    Unreadable { line: usize, text: String },
    #[error("plan has no steps")]
    EmptyBody,
}

/// `eat_bread_on_sofa` as `eat bread on sofa`.
pub fn spoken(name: &str) -> String {
    name.replace('_', " ")
}

fn relation_template(r: Relation) -> &'static str {
    match r {
        Relation::Close => "the agent is close to the {}",
        Relation::Holding => "the agent is holding the {}",
        Relation::Visible => "the {} is visible",
        Relation::Contains => "the page mentions \"{}\"",
        Relation::Eaten => "the {} is eaten",
        Relation::SatOn => "the agent is sitting on the {}",
        Relation::Open => "the {} is open",
        Relation::On => "the {} is switched on",
        Relation::Grabbed => "the {} is grabbed",
    }
}

const NOT: &str = "it is not the case that ";

pub fn predicate_phrase(p: &Predicate) -> String {
    let s = relation_template(p.relation).replace("{}", &p.subject);
    if p.negated {
        format!("{NOT}{s}")
    } else {
        s
    }
}

fn read_predicate(text: &str) -> Option<Predicate> {
    let (negated, text) = match text.strip_prefix(NOT) {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    Relation::ALL.iter().find_map(|r| {
        let (head, tail) = relation_template(*r).split_once("{}")?;
        let subject = text.strip_prefix(head)?.strip_suffix(tail)?;
        (!subject.is_empty() && !subject.contains(' ')).then(|| Predicate {
            relation: *r,
            subject: subject.to_string(),
            negated,
        })
    })
}

fn arg_phrase(a: &Arg) -> String {
    match &a.value {
        Value::Str(s) => format!("the {s}"),
        Value::Int(i) => i.to_string(),
        Value::Var(v) => v.clone(),
    }
}

/// `walk the livingroom`, `put_back the cup and the fridge`.
pub fn call_phrase(c: &Call) -> Option<String> {
    if c.args
        .iter()
        .any(|a| a.keyword.is_some() || !matches!(a.value, Value::Str(_)))
    {
        return None;
    }
    let args: Vec<String> = c.args.iter().map(arg_phrase).collect();
    Some(if args.is_empty() {
        c.name.clone()
    } else {
        format!("{} {}", c.name, args.join(" and "))
    })
}

fn read_call(text: &str) -> Option<Call> {
    let (name, rest) = match text.split_once(' ') {
        Some((n, r)) => (n, Some(r)),
        None => (text, None),
    };
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        return None;
    }
    let mut args = Vec::new();
    if let Some(rest) = rest {
        for piece in rest.split(" and ") {
            let obj = piece.strip_prefix("the ")?;
            if obj.is_empty() || obj.contains(' ') {
                return None;
            }
            args.push(Arg {
                keyword: None,
                value: Value::Str(obj.to_string()),
            });
        }
    }
    Some(Call {
        name: name.to_string(),
        args,
    })
}

/// One sentence per top-level statement; comments become `Note:` lines.
pub fn render_nl(plan: &PlanAst, heading: &str, comments: CommentStyle<'_>) -> Result<String, NlError> {
    let mut out = format!("{heading}\n");
    let mut n = 0;
    for s in &plan.body {
        match &s.kind {
            StmtKind::Comment(text) => {
                let text = match comments {
                    CommentStyle::Strip => continue,
                    CommentStyle::Keep => text.as_str(),
                    CommentStyle::Translate(t) => t.get(text).map_or(text.as_str(), String::as_str),
                };
                out.push_str(&format!("Note: {text}\n"));
            }
            StmtKind::Action(c) => {
                n += 1;
                let phrase = call_phrase(c).ok_or(NlError::Unsupported { line: s.line })?;
                out.push_str(&format!("Step {n}: {phrase}.\n"));
            }
            StmtKind::AssertRecover { predicate, recovery } => {
                n += 1;
                let mut fixes = Vec::new();
                for r in recovery {
                    match &r.kind {
                        StmtKind::Action(c) => fixes.push(call_phrase(c).ok_or(NlError::Unsupported { line: r.line })?),
                        StmtKind::Comment(_) => {}
                        _ => return Err(NlError::Unsupported { line: r.line }),
                    }
                }
                let check = predicate_phrase(predicate);
                if fixes.is_empty() {
                    out.push_str(&format!("Step {n}: make sure {check}.\n"));
                } else {
                    out.push_str(&format!(
                        "Step {n}: make sure {check}; otherwise {}.\n",
                        fixes.join(", then ")
                    ));
                }
            }
            _ => return Err(NlError::Unsupported { line: s.line }),
        }
    }
    Ok(out)
}

/// Reads the sentence format back into a plan called `name`. A leading
/// heading line ending in `:` is skipped, as are blank lines.
pub fn read_nl(name: &str, text: &str) -> Result<PlanAst, NlError> {
    let mut body = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((_, l)) = lines.peek() {
        if l.trim().is_empty() {
            lines.next();
        } else {
            break;
        }
    }
    if let Some((_, l)) = lines.peek() {
        let t = l.trim();
        if t.ends_with(':') && !t.starts_with("Step ") && !t.starts_with("Note:") {
            lines.next();
        }
    }
    for (idx, raw) in lines {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        let bad = || NlError::Unreadable {
            line,
            text: t.to_string(),
        };
        if let Some(note) = t.strip_prefix("Note: ") {
            body.push(Statement::new(line, StmtKind::Comment(note.to_string())));
            continue;
        }
        let rest = t.strip_prefix("Step ").ok_or_else(bad)?;
        let (num, sentence) = rest.split_once(": ").ok_or_else(bad)?;
        if num.parse::<u32>().is_err() {
            return Err(bad());
        }
        let sentence = sentence.strip_suffix('.').ok_or_else(bad)?;
        let kind = if let Some(check) = sentence.strip_prefix("make sure ") {
            let (pred, fixes) = match check.split_once("; otherwise ") {
                Some((p, f)) => (p, Some(f)),
                None => (check, None),
            };
            let predicate = read_predicate(pred).ok_or_else(bad)?;
            let mut recovery = Vec::new();
            if let Some(fixes) = fixes {
                for f in fixes.split(", then ") {
                    recovery.push(Statement::new(line, StmtKind::Action(read_call(f).ok_or_else(bad)?)));
                }
            }
            StmtKind::AssertRecover { predicate, recovery }
        } else {
            StmtKind::Action(read_call(sentence).ok_or_else(bad)?)
        };
        body.push(Statement::new(line, kind));
    }
    if body.iter().all(Statement::is_comment) {
        return Err(NlError::EmptyBody);
    }
    Ok(PlanAst {
        name: name.to_string(),
        body,
    })
}

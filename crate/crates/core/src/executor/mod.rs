//! Runs a plan against the simulator with in-plan assertion recovery.
//!
//! A false `assert` runs its recovery block once and re-checks; a predicate
//! still false afterwards, or any failed action (recovery actions included),
//! halts execution and yields an [`ErrorTrace`].

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plan::{
    render_call, render_condition, render_expr, render_predicate, render_statements, Call, CommentStyle, Condition,
    ExprBase, Predicate, Statement, StmtKind, Value, LOOP_SENTINEL,
};
use crate::world::{apply_action, eval_predicate, ActionOutcome, SimAction, SimError, Verb, WorldState};
use crate::PlanAst;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    /// Non-comment statements evaluated per execution.
    pub max_steps: usize,
    /// Iterations per loop entry.
    pub max_loop_iters: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            max_steps: 100,
            max_loop_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StepEvent {
    Comment,
    Action { outcome: ActionOutcome },
    Check { holds: bool },
    Binding,
    Return,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub line: usize,
    pub text: String,
    #[serde(flatten)]
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub plan_name: String,
    pub steps: Vec<TraceStep>,
    pub completed: bool,
    pub failure: Option<ErrorTrace>,
    /// Action calls attempted.
    pub attempted: usize,
    /// Action calls that succeeded.
    pub succeeded: usize,
}

/// Diagnostic for an unrecoverable failure, sent back for replanning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub plan_name: String,
    /// Top-level plan statements up to and including the failing one.
    pub context: Vec<Statement>,
    /// Action calls that succeeded before the failure, in order.
    pub executed_prefix: Vec<Statement>,
    pub error_step: String,
    pub feedback_message: String,
    pub environmental_information: Vec<String>,
    pub items_in_hand: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Steps,
    LoopIterations,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("line {line}: {limit:?} budget exceeded")]
    LimitExceeded { limit: Limit, line: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("line {line}: unbound variable `{name}`")]
    UnboundVariable { name: String, line: usize },
    #[error("line {line}: {what}")]
    Unsupported { what: String, line: usize },
}

/// Execution stopped by an [`ExecError`]; carries the state reached so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecAbort {
    pub error: ExecError,
    pub state: WorldState,
    pub trace: ExecutionTrace,
}

pub fn execute(
    plan: &PlanAst,
    state: &WorldState,
    limits: ExecLimits,
) -> Result<(WorldState, ExecutionTrace), Box<ExecAbort>> {
    let mut run = Run {
        state: state.clone(),
        limits,
        steps_used: 0,
        steps: Vec::new(),
        attempted: 0,
        succeeded: 0,
        prefix: Vec::new(),
        env: BTreeMap::new(),
        loops: Vec::new(),
    };
    let mut failure = None;
    let mut error = None;
    for (idx, stmt) in plan.body.iter().enumerate() {
        match run.statement(stmt) {
            Ok(Flow::Next) => {}
            Ok(Flow::Return) => break,
            Ok(Flow::Halt(h)) => {
                failure = Some(ErrorTrace {
                    plan_name: plan.name.clone(),
                    context: plan.body[..=idx].to_vec(),
                    executed_prefix: core::mem::take(&mut run.prefix),
                    error_step: h.error_step,
                    feedback_message: h.feedback_message,
                    environmental_information: h.observations,
                    items_in_hand: run.state.held().to_vec(),
                });
                break;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    let trace = ExecutionTrace {
        plan_name: plan.name.clone(),
        steps: run.steps,
        completed: failure.is_none() && error.is_none(),
        failure,
        attempted: run.attempted,
        succeeded: run.succeeded,
    };
    match error {
        None => Ok((run.state, trace)),
        Some(error) => Err(Box::new(ExecAbort {
            error,
            state: run.state,
            trace,
        })),
    }
}

struct Halt {
    error_step: String,
    feedback_message: String,
    observations: Vec<String>,
}

enum Flow {
    Next,
    Return,
    Halt(Halt),
}

struct Run {
    state: WorldState,
    limits: ExecLimits,
    steps_used: usize,
    steps: Vec<TraceStep>,
    attempted: usize,
    succeeded: usize,
    prefix: Vec<Statement>,
    env: BTreeMap<String, Value>,
    /// Iteration counters of the enclosing loops, innermost last.
    loops: Vec<usize>,
}

impl Run {
    fn tick(&mut self, line: usize) -> Result<(), ExecError> {
        self.steps_used += 1;
        if self.steps_used > self.limits.max_steps {
            return Err(ExecError::LimitExceeded {
                limit: Limit::Steps,
                line,
            });
        }
        Ok(())
    }

    fn log(&mut self, line: usize, text: String, event: StepEvent) {
        self.steps.push(TraceStep { line, text, event });
    }

    fn block(&mut self, block: &[Statement]) -> Result<Flow, ExecError> {
        for stmt in block {
            match self.statement(stmt)? {
                Flow::Next => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Next)
    }

    fn statement(&mut self, stmt: &Statement) -> Result<Flow, ExecError> {
        let line = stmt.line;
        if let StmtKind::Comment(text) = &stmt.kind {
            self.log(line, format!("# {text}"), StepEvent::Comment);
            return Ok(Flow::Next);
        }
        self.tick(line)?;
        match &stmt.kind {
            StmtKind::Comment(_) => Ok(Flow::Next),
            StmtKind::Action(call) => self.action(stmt, call),
            StmtKind::Binding { target, value } => {
                if !value.path.is_empty() {
                    return Err(ExecError::Unsupported {
                        what: "accessors are not supported in embodied plans".to_string(),
                        line,
                    });
                }
                let v = match &value.base {
                    ExprBase::Value(v) => self.resolve(v, line)?,
                    ExprBase::Call(_) => {
                        return Err(ExecError::Unsupported {
                            what: "call results cannot be bound in embodied plans".to_string(),
                            line,
                        })
                    }
                };
                self.env.insert(target.clone(), v);
                self.log(line, format!("{target} = {}", render_expr(value)), StepEvent::Binding);
                Ok(Flow::Next)
            }
            StmtKind::Return(expr) => {
                self.log(line, format!("final_answer({})", render_expr(expr)), StepEvent::Return);
                Ok(Flow::Return)
            }
            StmtKind::AssertRecover { predicate, recovery } => {
                let text = format!("assert({})", render_predicate(predicate));
                let holds = self.predicate(predicate, line)?;
                self.log(line, text.clone(), StepEvent::Check { holds });
                if holds {
                    return Ok(Flow::Next);
                }
                match self.block(recovery)? {
                    Flow::Next => {}
                    other => return Ok(other),
                }
                let holds = self.predicate(predicate, line)?;
                self.log(line, text.clone(), StepEvent::Check { holds });
                if holds {
                    return Ok(Flow::Next);
                }
                let status = if predicate.negated { "unexpectedly" } else { "not" };
                Ok(Flow::Halt(Halt {
                    error_step: text,
                    feedback_message: format!(
                        "{status} {} to <{}> when [ASSERT]",
                        predicate.relation, predicate.subject
                    ),
                    observations: self.state.observe(&predicate.subject),
                }))
            }
            StmtKind::Loop { guard, body, break_if } => {
                self.loops.push(0);
                let flow = self.run_loop(guard, body, break_if.as_ref(), line);
                self.loops.pop();
                flow
            }
            StmtKind::Conditional {
                condition,
                then_body,
                else_body,
            } => {
                let holds = self.condition(condition, line)?;
                self.log(
                    line,
                    format!("if {}", render_condition(condition)),
                    StepEvent::Check { holds },
                );
                if holds {
                    self.block(then_body)
                } else {
                    self.block(else_body)
                }
            }
        }
    }

    fn run_loop(
        &mut self,
        guard: &Predicate,
        body: &[Statement],
        break_if: Option<&Condition>,
        line: usize,
    ) -> Result<Flow, ExecError> {
        loop {
            let holds = self.predicate(guard, line)?;
            self.log(
                line,
                format!("while {}", render_predicate(guard)),
                StepEvent::Check { holds },
            );
            if !holds {
                return Ok(Flow::Next);
            }
            if self.loops.last().copied().unwrap_or(0) >= self.limits.max_loop_iters {
                return Err(ExecError::LimitExceeded {
                    limit: Limit::LoopIterations,
                    line,
                });
            }
            match self.block(body)? {
                Flow::Next => {}
                other => return Ok(other),
            }
            if let Some(counter) = self.loops.last_mut() {
                *counter += 1;
            }
            if let Some(cond) = break_if {
                if self.condition(cond, line)? {
                    return Ok(Flow::Next);
                }
            }
        }
    }

    fn action(&mut self, stmt: &Statement, call: &Call) -> Result<Flow, ExecError> {
        let line = stmt.line;
        let verb = Verb::from_name(&call.name).ok_or_else(|| SimError::UnknownAction(call.name.clone()))?;
        let [arg] = call.args.as_slice() else {
            return Err(SimError::BadArguments(call.name.clone()).into());
        };
        let target = match self.resolve(&arg.value, line)? {
            Value::Str(s) => s,
            _ => return Err(SimError::BadArguments(call.name.clone()).into()),
        };
        let text = render_call(call);
        self.attempted += 1;
        let (next, outcome) = apply_action(&self.state, &SimAction { verb, target })?;
        self.state = next;
        let ok = outcome.ok;
        let halt = (!ok).then(|| Halt {
            error_step: text.clone(),
            feedback_message: outcome.feedback_message.clone(),
            observations: outcome.observations.clone(),
        });
        self.log(line, text, StepEvent::Action { outcome });
        match halt {
            None => {
                self.succeeded += 1;
                self.prefix.push(stmt.clone());
                Ok(Flow::Next)
            }
            Some(h) => Ok(Flow::Halt(h)),
        }
    }

    fn resolve(&self, value: &Value, line: usize) -> Result<Value, ExecError> {
        match value {
            Value::Var(name) => self.env.get(name).cloned().ok_or_else(|| ExecError::UnboundVariable {
                name: name.clone(),
                line,
            }),
            other => Ok(other.clone()),
        }
    }

    fn predicate(&self, p: &Predicate, _line: usize) -> Result<bool, ExecError> {
        Ok(eval_predicate(&self.state, p)?)
    }

    fn condition(&self, c: &Condition, line: usize) -> Result<bool, ExecError> {
        match c {
            Condition::Predicate(p) => self.predicate(p, line),
            Condition::Flag { name, negated } => {
                let value = if name == LOOP_SENTINEL {
                    self.loops.last().is_some_and(|n| *n >= self.limits.max_loop_iters)
                } else {
                    match self.resolve(&Value::Var(name.clone()), line)? {
                        Value::Str(s) => !s.is_empty(),
                        Value::Int(i) => i != 0,
                        Value::Var(_) => true,
                    }
                };
                Ok(value != *negated)
            }
        }
    }
}

/// How the executed part of a failed plan is shown in the feedback block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// Comments of the executed steps, with `...` in place of code.
    #[default]
    Elided,
    /// The succeeded action calls, in order.
    Full,
}

/// Renders the five-part feedback block followed by the next plan header.
///
/// Under [`CommentStyle::Translate`] comments without a translation are kept
/// as written.
pub fn serialize_error_trace(
    t: &ErrorTrace,
    next_plan_name: &str,
    mode: PrefixMode,
    comments: CommentStyle<'_>,
) -> String {
    let mut prefix = format!("def {}():\n", t.plan_name);
    match mode {
        PrefixMode::Elided => {
            let mut in_code = false;
            for stmt in &t.context {
                match &stmt.kind {
                    StmtKind::Comment(text) => {
                        let text = match comments {
                            CommentStyle::Strip => continue,
                            CommentStyle::Keep => text.as_str(),
                            CommentStyle::Translate(table) => table.get(text).map_or(text.as_str(), String::as_str),
                        };
                        prefix.push_str("    # ");
                        prefix.push_str(text);
                        prefix.push('\n');
                        in_code = false;
                    }
                    _ if !in_code => {
                        prefix.push_str("    ...\n");
                        in_code = true;
                    }
                    _ => {}
                }
            }
        }
        PrefixMode::Full => {
            if t.executed_prefix.is_empty() {
                prefix.push_str("    ...\n");
            } else {
                let body = render_statements(&t.executed_prefix, 1, CommentStyle::Keep).unwrap_or_default();
                prefix.push_str(&body);
            }
        }
    }
    let mut parts = Vec::with_capacity(6);
    parts.push(prefix);
    parts.push(format!("error_step = {}\n", json_str(&t.error_step)));
    parts.push(format!(
        "feedback_message = (\n  {}\n)\n",
        json_str(&t.feedback_message)
    ));
    parts.push(format!(
        "environmental_information = {}\n",
        list_block(&t.environmental_information)
    ));
    let items: Vec<String> = t.items_in_hand.iter().map(|s| json_str(s)).collect();
    parts.push(format!("items_in_hand = [{}]\n", items.join(", ")));
    parts.push(format!("def {next_plan_name}():\n"));
    parts.join("\n")
}

pub(crate) fn json_str(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_default()
}

fn list_block(items: &[String]) -> String {
    if items.is_empty() {
        return "[]".to_string();
    }
    let body: Vec<String> = items.iter().map(|s| format!("  {}", json_str(s))).collect();
    format!("[\n{}\n]", body.join(",\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed feedback block: {0}")]
pub struct FeedbackParseError(pub String);

/// Fields recovered from a serialized feedback block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFeedback {
    pub plan_name: String,
    /// `None` when the prefix was elided.
    pub executed_prefix: Option<Vec<Statement>>,
    pub error_step: String,
    pub feedback_message: String,
    pub environmental_information: Vec<String>,
    pub items_in_hand: Vec<String>,
    pub next_plan_name: String,
}

pub fn parse_error_feedback(text: &str) -> Result<ParsedFeedback, FeedbackParseError> {
    let err = |m: &str| FeedbackParseError(m.to_string());
    let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    let mut i = 0;
    let plan_name =
        header_name(lines.first().copied().ok_or_else(|| err("empty block"))?).ok_or_else(|| err("missing header"))?;
    i += 1;
    let mut body = Vec::new();
    while i < lines.len() && lines[i].starts_with(' ') {
        body.push(lines[i]);
        i += 1;
    }
    let executed_prefix = if body.iter().any(|l| l.trim() == "...") {
        None
    } else {
        let src = format!("def {plan_name}():\n{}\n", body.join("\n"));
        Some(
            crate::plan::parse_plan(&src)
                .map_err(|e| FeedbackParseError(e.to_string()))?
                .body,
        )
    };

    let error_step = assignment(lines.get(i).copied(), "error_step = ").ok_or_else(|| err("missing error_step"))?;
    let error_step: String = serde_json::from_str(error_step).map_err(|_| err("bad error_step"))?;
    i += 1;

    if lines.get(i).copied() != Some("feedback_message = (") {
        return Err(err("missing feedback_message"));
    }
    let msg_line = lines.get(i + 1).ok_or_else(|| err("truncated feedback_message"))?;
    let feedback_message: String = serde_json::from_str(msg_line.trim()).map_err(|_| err("bad feedback_message"))?;
    if lines.get(i + 2).copied() != Some(")") {
        return Err(err("unterminated feedback_message"));
    }
    i += 3;

    let first = assignment(lines.get(i).copied(), "environmental_information = ")
        .ok_or_else(|| err("missing environmental_information"))?;
    let mut list = String::from(first);
    i += 1;
    if first != "[]" {
        while i < lines.len() {
            list.push_str(lines[i]);
            i += 1;
            if lines[i - 1] == "]" {
                break;
            }
        }
    }
    let environmental_information: Vec<String> =
        serde_json::from_str(&list).map_err(|_| err("bad environmental_information"))?;

    let items = assignment(lines.get(i).copied(), "items_in_hand = ").ok_or_else(|| err("missing items_in_hand"))?;
    let items_in_hand: Vec<String> = serde_json::from_str(items).map_err(|_| err("bad items_in_hand"))?;
    i += 1;

    let next_plan_name = lines
        .get(i)
        .copied()
        .and_then(header_name)
        .ok_or_else(|| err("missing next header"))?;
    if i + 1 != lines.len() {
        return Err(err("trailing content after next header"));
    }
    Ok(ParsedFeedback {
        plan_name,
        executed_prefix,
        error_step,
        feedback_message,
        environmental_information,
        items_in_hand,
        next_plan_name,
    })
}

fn assignment<'a>(line: Option<&'a str>, prefix: &str) -> Option<&'a str> {
    line?.strip_prefix(prefix)
}

fn header_name(line: &str) -> Option<String> {
    let name = line.strip_prefix("def ")?.strip_suffix("():")?;
    crate::plan::is_plan_name(name).then(|| name.to_string())
}

/// Succeeded over attempted action calls; a trace with no actions counts as
/// fully executed.
pub fn exec_fraction(trace: &ExecutionTrace) -> f64 {
    if trace.attempted == 0 {
        1.0
    } else {
        trace.succeeded as f64 / trace.attempted as f64
    }
}

//! Planner, tool caller and replanner loop over the browsing sandbox.
//!
//! A plan is lowered to [`CodeActStep`]s, which the step interpreter runs
//! against a [`Sandbox`]. Tool calls cross the wire as [`ToolCall`] JSON. On
//! a failed call the replanner receives an [`ErrorFeedback`] block and its
//! plan resumes with the bindings made before the failure.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::executor::{json_str, ExecLimits, Limit};
use crate::gateway::{Exchange, ModelBackend, ModelError, TokenUsage};
use crate::plan::{
    parse_completion, render_expr, Accessor, Call, Condition, Expr, ExprBase, PlanAst, Predicate, Relation, Statement,
    StmtKind, Value, LOOP_SENTINEL,
};
use crate::tools::{Corpus, Sandbox, ToolCall, ToolError, ToolRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thought,
    Code,
    Observation,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Thought => "thought",
            Phase::Code => "code",
            Phase::Observation => "observation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub role: String,
    /// How tools are exposed to the model, e.g. `python_callable`.
    pub tool_style: String,
    pub tools: Vec<String>,
    pub cycle: Vec<Phase>,
    pub team: Vec<String>,
    pub task: String,
}

impl AgentConfig {
    pub fn new(task: impl Into<String>, tools: Vec<String>) -> Self {
        AgentConfig {
            role: "expert_assistant".to_string(),
            tool_style: "python_callable".to_string(),
            tools,
            cycle: alloc::vec![Phase::Thought, Phase::Code, Phase::Observation],
            team: alloc::vec!["web_browser_agent".to_string()],
            task: task.into(),
        }
    }

    /// Agent that owns the tools and reports their failures.
    pub fn tool_owner(&self) -> &str {
        self.team.first().map_or("tool_caller", String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
}

const TOOLS_PER_LINE: usize = 3;

pub fn render_system_prompt(cfg: &AgentConfig, registry: &ToolRegistry) -> Result<String, OrchestratorError> {
    for t in &cfg.tools {
        if registry.get(t).is_none() {
            return Err(OrchestratorError::UnknownTool(t.clone()));
        }
    }
    let cycle: Vec<&str> = cfg.cycle.iter().map(|p| p.as_str()).collect();
    let mut out = format!(
        "config = {{\n  role: '{}',\n  tools: '{}',\n  cycle: [{}]\n}}\n",
        cfg.role,
        cfg.tool_style,
        cycle.join(", ")
    );
    if cfg.tools.is_empty() {
        out.push_str("available_tools = []\n");
    } else {
        out.push_str("available_tools = [\n");
        let rows: Vec<String> = cfg
            .tools
            .chunks(TOOLS_PER_LINE)
            .map(|c| format!("  {}", c.join(", ")))
            .collect();
        out.push_str(&rows.join(",\n"));
        out.push_str("\n]\n");
    }
    out.push_str(&format!("team_agent = [{}]\n", cfg.team.join(", ")));
    out.push_str(&format!("task = {}\n", json_str(&cfg.task)));
    Ok(out)
}

/// A literal or a variable reference inside a lowered step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Str(String),
    Int(i64),
    Var(String),
}

impl From<&Value> for Operand {
    fn from(v: &Value) -> Self {
        match v {
            Value::Str(s) => Operand::Str(s.clone()),
            Value::Int(i) => Operand::Int(*i),
            Value::Var(n) => Operand::Var(n.clone()),
        }
    }
}

/// A tool call with arguments resolved to schema parameter names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTemplate {
    pub tool: String,
    pub args: Vec<(String, Operand)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guard {
    /// A predicate tool such as the viewport probe.
    Probe { call: CallTemplate, negated: bool },
    /// A bound variable's truthiness, or the loop-budget sentinel.
    Flag { name: String, negated: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Binding,
    ToolInvocation,
    Loop,
    Conditional,
    FinalAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeActStep {
    Binding {
        line: usize,
        target: String,
        source: Operand,
        path: Vec<Accessor>,
    },
    ToolInvocation {
        line: usize,
        target: Option<String>,
        call: CallTemplate,
        path: Vec<Accessor>,
    },
    /// Runs while the guard holds, at most `max_loop_iters` times.
    Loop {
        line: usize,
        guard: Guard,
        body: Vec<CodeActStep>,
        break_if: Option<Guard>,
    },
    /// `if`/`else`; an `assert` lowers to a conditional with `recheck` set,
    /// which re-evaluates the guard once after the recovery branch.
    Conditional {
        line: usize,
        guard: Guard,
        then_body: Vec<CodeActStep>,
        else_body: Vec<CodeActStep>,
        recheck: bool,
    },
    FinalAnswer {
        line: usize,
        source: Operand,
        path: Vec<Accessor>,
    },
}

impl CodeActStep {
    pub fn kind(&self) -> StepKind {
        match self {
            CodeActStep::Binding { .. } => StepKind::Binding,
            CodeActStep::ToolInvocation { .. } => StepKind::ToolInvocation,
            CodeActStep::Loop { .. } => StepKind::Loop,
            CodeActStep::Conditional { .. } => StepKind::Conditional,
            CodeActStep::FinalAnswer { .. } => StepKind::FinalAnswer,
        }
    }

    pub fn target_variable(&self) -> Option<&str> {
        match self {
            CodeActStep::Binding { target, .. } => Some(target),
            CodeActStep::ToolInvocation { target, .. } => target.as_deref(),
            _ => None,
        }
    }

    pub fn call(&self) -> Option<&CallTemplate> {
        match self {
            CodeActStep::ToolInvocation { call, .. } => Some(call),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoweringError {
    #[error("line {line}: unknown tool `{name}`")]
    UnknownTool { name: String, line: usize },
    #[error("line {line}: `{name}` {problem}")]
    ArityMismatch { name: String, problem: String, line: usize },
    #[error("line {line}: unbound variable `{name}`")]
    UnboundVariable { name: String, line: usize },
}

/// Name of the registered predicate tool behind `TextInspectorTool.contains`.
pub const CONTAINS_TOOL: &str = "TextInspectorTool.contains";

pub fn lower_plan_to_codeact(plan: &PlanAst, registry: &ToolRegistry) -> Result<Vec<CodeActStep>, LoweringError> {
    lower_with_bindings(plan, registry, &BTreeSet::new())
}

/// Lowers `plan` with `bound` already in scope, as after a resumed failure.
pub fn lower_with_bindings(
    plan: &PlanAst,
    registry: &ToolRegistry,
    bound: &BTreeSet<String>,
) -> Result<Vec<CodeActStep>, LoweringError> {
    let mut l = Lowerer {
        registry,
        bound: bound.clone(),
    };
    l.bound.insert(LOOP_SENTINEL.to_string());
    l.block(&plan.body)
}

struct Lowerer<'a> {
    registry: &'a ToolRegistry,
    bound: BTreeSet<String>,
}

impl Lowerer<'_> {
    fn block(&mut self, block: &[Statement]) -> Result<Vec<CodeActStep>, LoweringError> {
        let mut out = Vec::new();
        for s in block {
            if let Some(step) = self.statement(s)? {
                out.push(step);
            }
        }
        Ok(out)
    }

    fn statement(&mut self, s: &Statement) -> Result<Option<CodeActStep>, LoweringError> {
        let line = s.line;
        Ok(Some(match &s.kind {
            StmtKind::Comment(_) => return Ok(None),
            StmtKind::Action(call) => CodeActStep::ToolInvocation {
                line,
                target: None,
                call: self.call(call, line)?,
                path: Vec::new(),
            },
            StmtKind::Binding { target, value } => {
                let step = match &value.base {
                    ExprBase::Call(call) => CodeActStep::ToolInvocation {
                        line,
                        target: Some(target.clone()),
                        call: self.call(call, line)?,
                        path: value.path.clone(),
                    },
                    ExprBase::Value(v) => CodeActStep::Binding {
                        line,
                        target: target.clone(),
                        source: self.operand(v, line)?,
                        path: value.path.clone(),
                    },
                };
                self.bound.insert(target.clone());
                step
            }
            StmtKind::Return(expr) => match &expr.base {
                ExprBase::Value(v) => CodeActStep::FinalAnswer {
                    line,
                    source: self.operand(v, line)?,
                    path: expr.path.clone(),
                },
                ExprBase::Call(_) => {
                    return Err(LoweringError::ArityMismatch {
                        name: "final_answer".to_string(),
                        problem: "takes a value, not a call".to_string(),
                        line,
                    })
                }
            },
            StmtKind::AssertRecover { predicate, recovery } => CodeActStep::Conditional {
                line,
                guard: self.predicate(&predicate.clone().negate(), line)?,
                then_body: self.block(recovery)?,
                else_body: Vec::new(),
                recheck: true,
            },
            StmtKind::Loop { guard, body, break_if } => CodeActStep::Loop {
                line,
                guard: self.predicate(guard, line)?,
                body: self.block(body)?,
                break_if: break_if.as_ref().map(|c| self.condition(c, line)).transpose()?,
            },
            StmtKind::Conditional {
                condition,
                then_body,
                else_body,
            } => CodeActStep::Conditional {
                line,
                guard: self.condition(condition, line)?,
                then_body: self.block(then_body)?,
                else_body: self.block(else_body)?,
                recheck: false,
            },
        }))
    }

    fn operand(&self, v: &Value, line: usize) -> Result<Operand, LoweringError> {
        if let Value::Var(name) = v {
            if !self.bound.contains(name) {
                return Err(LoweringError::UnboundVariable {
                    name: name.clone(),
                    line,
                });
            }
        }
        Ok(v.into())
    }

    fn call(&self, call: &Call, line: usize) -> Result<CallTemplate, LoweringError> {
        let schema = self
            .registry
            .get(&call.name)
            .ok_or_else(|| LoweringError::UnknownTool {
                name: call.name.clone(),
                line,
            })?;
        let arity = |problem: String| LoweringError::ArityMismatch {
            name: call.name.clone(),
            problem,
            line,
        };
        let mut args: Vec<(String, Operand)> = Vec::new();
        for (position, arg) in call.args.iter().enumerate() {
            let name = match &arg.keyword {
                Some(k) => {
                    if !schema.params.iter().any(|p| &p.name == k) {
                        return Err(arity(format!("has no parameter `{k}`")));
                    }
                    k.clone()
                }
                None => match schema.params.get(position) {
                    Some(p) => p.name.clone(),
                    None => return Err(arity(format!("takes {} arguments", schema.params.len()))),
                },
            };
            if args.iter().any(|(n, _)| *n == name) {
                return Err(arity(format!("got `{name}` twice")));
            }
            args.push((name, self.operand(&arg.value, line)?));
        }
        for p in &schema.params {
            if p.required && !args.iter().any(|(n, _)| *n == p.name) {
                return Err(arity(format!("is missing `{}`", p.name)));
            }
        }
        Ok(CallTemplate {
            tool: call.name.clone(),
            args,
        })
    }

    fn predicate(&self, p: &Predicate, line: usize) -> Result<Guard, LoweringError> {
        if p.relation != Relation::Contains {
            return Err(LoweringError::UnknownTool {
                name: p.relation.as_str().to_string(),
                line,
            });
        }
        let probe = Call {
            name: CONTAINS_TOOL.to_string(),
            args: alloc::vec![crate::plan::Arg {
                keyword: None,
                value: Value::Str(p.subject.clone()),
            }],
        };
        Ok(Guard::Probe {
            call: self.call(&probe, line)?,
            negated: p.negated,
        })
    }

    fn condition(&self, c: &Condition, line: usize) -> Result<Guard, LoweringError> {
        match c {
            Condition::Predicate(p) => self.predicate(p, line),
            Condition::Flag { name, negated } => {
                if !self.bound.contains(name) {
                    return Err(LoweringError::UnboundVariable {
                        name: name.clone(),
                        line,
                    });
                }
                Ok(Guard::Flag {
                    name: name.clone(),
                    negated: *negated,
                })
            }
        }
    }
}

pub type Bindings = BTreeMap<String, Json>;

/// One tool dispatch as seen by the tool caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub call: ToolCall,
    pub wire: String,
    pub result: Result<Json, String>,
}

/// Structured report of a failed step, sent to the replanner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFeedback {
    pub error_message: String,
    pub failing_call: Option<ToolCall>,
    pub line: usize,
    /// Number of tool dispatches made before the failure.
    pub step: usize,
    pub agent_id: String,
    pub tool_state: String,
    pub bindings: Bindings,
}

/// Renders the feedback block followed by the replanner header.
pub fn serialize_feedback(fb: &ErrorFeedback) -> String {
    let mut out = format!("error_message = {}\n", json_str(&fb.error_message));
    if let Some(call) = &fb.failing_call {
        out.push_str(&format!("failed_call = {}\n", call.encode().unwrap_or_default()));
        for (k, v) in &call.args {
            let rendered = match v {
                Json::String(s) => json_str(s),
                other => other.to_string(),
            };
            out.push_str(&format!("failed_{k} = {rendered}\n"));
        }
    }
    out.push_str(&format!("agent_id = {}\n", json_str(&fb.agent_id)));
    out.push_str(&format!("step = {}\n", fb.step));
    out.push_str(&format!("tool_state = {}\n", json_str(&fb.tool_state)));
    let names: Vec<String> = fb.bindings.keys().map(|k| json_str(k)).collect();
    out.push_str(&format!("bound_variables = [{}]\n", names.join(", ")));
    out.push_str(REPLAN_HEADER);
    out.push('\n');
    out
}

pub const INITIAL_HEADER: &str = "def initial_plan():";
pub const REPLAN_HEADER: &str = "def updated_plan():";

/// Final value of a successful run: the `final_answer` value or, failing
/// that, the last variable bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: Option<String>,
    pub value: Option<Json>,
}

impl Observation {
    /// `name = value` lines; a list bound to a plural name is spread over
    /// numbered singular names (`drivers` becomes `driver1`, `driver2`, ...).
    pub fn render(&self) -> String {
        let Some(value) = &self.value else {
            return String::new();
        };
        let name = self.name.as_deref().unwrap_or("answer");
        let scalar = |v: &Json| match v {
            Json::String(s) => json_str(s),
            other => other.to_string(),
        };
        match value {
            Json::Array(items) => {
                let stem = name.strip_suffix('s').filter(|s| !s.is_empty()).unwrap_or(name);
                items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{stem}{} = {}\n", i + 1, scalar(v)))
                    .collect()
            }
            other => format!("{name} = {}\n", scalar(other)),
        }
    }

    /// Plain-text answer used for scoring.
    pub fn answer_text(&self) -> String {
        match &self.value {
            None => String::new(),
            Some(Json::String(s)) => s.clone(),
            Some(Json::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Json::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("; "),
            Some(other) => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodeActError {
    #[error("line {line}: {limit:?} budget exceeded")]
    LimitExceeded { limit: Limit, line: usize },
    #[error("line {line}: unbound variable `{name}`")]
    UnboundVariable { name: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunResult {
    Observation(Observation),
    Failed(ErrorFeedback),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeActRun {
    pub bindings: Bindings,
    pub invocations: Vec<Invocation>,
    pub result: Result<RunResult, CodeActError>,
}

pub fn run_codeact(
    steps: &[CodeActStep],
    registry: &ToolRegistry,
    sandbox: &mut Sandbox<'_>,
    bindings: Bindings,
    limits: ExecLimits,
    agent_id: &str,
) -> CodeActRun {
    let mut m = Machine {
        registry,
        sandbox,
        env: bindings,
        limits,
        steps_used: 0,
        loops: Vec::new(),
        invocations: Vec::new(),
        last_bound: None,
        agent_id,
    };
    let result = match m.block(steps) {
        Ok(Flow::Next) => Ok(RunResult::Observation(Observation {
            value: m.last_bound.as_ref().and_then(|n| m.env.get(n)).cloned(),
            name: m.last_bound.clone(),
        })),
        Ok(Flow::Final(name, value)) => Ok(RunResult::Observation(Observation {
            name,
            value: Some(value),
        })),
        Ok(Flow::Failed(fb)) => Ok(RunResult::Failed(fb)),
        Err(e) => Err(e),
    };
    CodeActRun {
        bindings: m.env,
        invocations: m.invocations,
        result,
    }
}

enum Flow {
    Next,
    Final(Option<String>, Json),
    Failed(ErrorFeedback),
}

struct Machine<'a, 'c> {
    registry: &'a ToolRegistry,
    sandbox: &'a mut Sandbox<'c>,
    env: Bindings,
    limits: ExecLimits,
    steps_used: usize,
    loops: Vec<usize>,
    invocations: Vec<Invocation>,
    last_bound: Option<String>,
    agent_id: &'a str,
}

/// Scalar form of a value for a tool argument; string lists are joined by
/// blank lines.
fn to_scalar(v: &Json) -> Json {
    match v {
        Json::String(_) | Json::Number(_) | Json::Bool(_) => v.clone(),
        Json::Array(items) => Json::String(
            items
                .iter()
                .map(|i| match i {
                    Json::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("\n\n"),
        ),
        other => Json::String(other.to_string()),
    }
}

fn truthy(v: &Json) -> bool {
    match v {
        Json::Null => false,
        Json::Bool(b) => *b,
        Json::Number(n) => n.as_f64() != Some(0.0),
        Json::String(s) => !s.is_empty(),
        Json::Array(a) => !a.is_empty(),
        Json::Object(o) => !o.is_empty(),
    }
}

fn follow(mut v: Json, path: &[Accessor]) -> Result<Json, String> {
    for a in path {
        v = match a {
            Accessor::Index(i) => {
                let Json::Array(items) = v else {
                    return Err(format!("cannot index [{i}] into a non-list"));
                };
                let idx = if *i < 0 { items.len() as i64 + i } else { *i };
                match usize::try_from(idx).ok().and_then(|k| items.into_iter().nth(k)) {
                    Some(x) => x,
                    None => return Err(format!("index [{i}] out of range")),
                }
            }
            Accessor::Key(k) => {
                let Json::Object(mut map) = v else {
                    return Err(format!("cannot read ['{k}'] from a non-record"));
                };
                match map.remove(k) {
                    Some(x) => x,
                    None => return Err(format!("missing field ['{k}']")),
                }
            }
        };
    }
    Ok(v)
}

impl Machine<'_, '_> {
    fn tick(&mut self, line: usize) -> Result<(), CodeActError> {
        self.steps_used += 1;
        if self.steps_used > self.limits.max_steps {
            return Err(CodeActError::LimitExceeded {
                limit: Limit::Steps,
                line,
            });
        }
        Ok(())
    }

    fn feedback(&self, message: String, call: Option<ToolCall>, line: usize) -> ErrorFeedback {
        ErrorFeedback {
            error_message: message,
            failing_call: call,
            line,
            step: self.invocations.len(),
            agent_id: self.agent_id.to_string(),
            tool_state: self.sandbox.state_line(),
            bindings: self.env.clone(),
        }
    }

    fn operand(&self, op: &Operand, line: usize) -> Result<Json, CodeActError> {
        Ok(match op {
            Operand::Str(s) => Json::String(s.clone()),
            Operand::Int(i) => Json::from(*i),
            Operand::Var(name) => self
                .env
                .get(name)
                .cloned()
                .ok_or_else(|| CodeActError::UnboundVariable {
                    name: name.clone(),
                    line,
                })?,
        })
    }

    fn make_call(&self, t: &CallTemplate, line: usize) -> Result<ToolCall, CodeActError> {
        let mut call = ToolCall::new(t.tool.clone());
        for (name, op) in &t.args {
            call.args.insert(name.clone(), to_scalar(&self.operand(op, line)?));
        }
        Ok(call)
    }

    fn invoke(&mut self, t: &CallTemplate, line: usize) -> Result<Result<Json, ErrorFeedback>, CodeActError> {
        let call = self.make_call(t, line)?;
        let wire = call.encode().unwrap_or_default();
        let result = self.sandbox.dispatch(self.registry, &call);
        let recorded = result.clone().map_err(|e: ToolError| e.to_string());
        let fb = result
            .as_ref()
            .err()
            .map(|e| self.feedback(e.to_string(), Some(call.clone()), line));
        self.invocations.push(Invocation {
            call,
            wire,
            result: recorded,
        });
        Ok(match (result, fb) {
            (Ok(v), _) => Ok(v),
            (Err(_), Some(mut fb)) => {
                fb.step = self.invocations.len();
                Err(fb)
            }
            (Err(_), None) => unreachable!(),
        })
    }

    fn guard(&mut self, g: &Guard, line: usize) -> Result<Result<bool, ErrorFeedback>, CodeActError> {
        match g {
            Guard::Probe { call, negated } => Ok(self.invoke(call, line)?.map(|v| truthy(&v) != *negated)),
            Guard::Flag { name, negated } => {
                let v = if name == LOOP_SENTINEL && !self.env.contains_key(name) {
                    self.loops.last().is_some_and(|n| *n >= self.limits.max_loop_iters)
                } else {
                    truthy(&self.operand(&Operand::Var(name.clone()), line)?)
                };
                Ok(Ok(v != *negated))
            }
        }
    }

    fn block(&mut self, steps: &[CodeActStep]) -> Result<Flow, CodeActError> {
        for s in steps {
            match self.step(s)? {
                Flow::Next => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Next)
    }

    fn bind(&mut self, target: &str, value: Json) {
        self.env.insert(target.to_string(), value);
        self.last_bound = Some(target.to_string());
    }

    fn step(&mut self, s: &CodeActStep) -> Result<Flow, CodeActError> {
        match s {
            CodeActStep::Binding {
                line,
                target,
                source,
                path,
            } => {
                self.tick(*line)?;
                let v = self.operand(source, *line)?;
                match follow(v, path) {
                    Ok(v) => self.bind(target, v),
                    Err(msg) => return Ok(Flow::Failed(self.feedback(msg, None, *line))),
                }
            }
            CodeActStep::ToolInvocation {
                line,
                target,
                call,
                path,
            } => {
                self.tick(*line)?;
                let v = match self.invoke(call, *line)? {
                    Ok(v) => v,
                    Err(fb) => return Ok(Flow::Failed(fb)),
                };
                if let Some(t) = target {
                    match follow(v, path) {
                        Ok(v) => self.bind(t, v),
                        Err(msg) => {
                            let last = self.invocations.last().map(|i| i.call.clone());
                            return Ok(Flow::Failed(self.feedback(msg, last, *line)));
                        }
                    }
                }
            }
            CodeActStep::FinalAnswer { line, source, path } => {
                self.tick(*line)?;
                let name = match source {
                    Operand::Var(n) if path.is_empty() => Some(n.clone()),
                    _ => None,
                };
                let v = self.operand(source, *line)?;
                return Ok(match follow(v, path) {
                    Ok(v) => Flow::Final(name, v),
                    Err(msg) => Flow::Failed(self.feedback(msg, None, *line)),
                });
            }
            CodeActStep::Conditional {
                line,
                guard,
                then_body,
                else_body,
                recheck,
            } => {
                self.tick(*line)?;
                let holds = match self.guard(guard, *line)? {
                    Ok(h) => h,
                    Err(fb) => return Ok(Flow::Failed(fb)),
                };
                let flow = if holds {
                    self.block(then_body)?
                } else {
                    self.block(else_body)?
                };
                if !matches!(flow, Flow::Next) {
                    return Ok(flow);
                }
                if *recheck && holds {
                    match self.guard(guard, *line)? {
                        Ok(false) => {}
                        Ok(true) => {
                            return Ok(Flow::Failed(self.feedback(
                                "assertion failed after recovery".to_string(),
                                None,
                                *line,
                            )))
                        }
                        Err(fb) => return Ok(Flow::Failed(fb)),
                    }
                }
            }
            CodeActStep::Loop {
                line,
                guard,
                body,
                break_if,
            } => {
                self.tick(*line)?;
                self.loops.push(0);
                let flow = self.run_loop(*line, guard, body, break_if.as_ref());
                self.loops.pop();
                return flow;
            }
        }
        Ok(Flow::Next)
    }

    fn run_loop(
        &mut self,
        line: usize,
        guard: &Guard,
        body: &[CodeActStep],
        break_if: Option<&Guard>,
    ) -> Result<Flow, CodeActError> {
        loop {
            match self.guard(guard, line)? {
                Ok(true) => {}
                Ok(false) => return Ok(Flow::Next),
                Err(fb) => return Ok(Flow::Failed(fb)),
            }
            if self.loops.last().copied().unwrap_or(0) >= self.limits.max_loop_iters {
                return Err(CodeActError::LimitExceeded {
                    limit: Limit::LoopIterations,
                    line,
                });
            }
            match self.block(body)? {
                Flow::Next => {}
                other => return Ok(other),
            }
            if let Some(n) = self.loops.last_mut() {
                *n += 1;
            }
            if let Some(b) = break_if {
                match self.guard(b, line)? {
                    Ok(true) => return Ok(Flow::Next),
                    Ok(false) => {}
                    Err(fb) => return Ok(Flow::Failed(fb)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Plan,
    Codeact,
    ToolResult,
    ErrorFeedback,
    Final,
}

impl MessageKind {
    pub fn phase(self) -> Phase {
        match self {
            MessageKind::Plan => Phase::Thought,
            MessageKind::Codeact => Phase::Code,
            _ => Phase::Observation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub phase: Phase,
    pub body: String,
    pub tokens: TokenUsage,
}

pub const PLANNER: &str = "planner";
pub const REPLANNER: &str = "replanner";
pub const TOOL_CALLER: &str = "tool_caller";

/// Everything an agent episode needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub cfg: &'a AgentConfig,
    pub registry: &'a ToolRegistry,
    pub corpus: &'a Corpus,
    pub limits: ExecLimits,
}

/// A plan request answered with an unusable completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub completion: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replan {
    pub plan: PlanAst,
    pub steps: Vec<CodeActStep>,
    pub exchanges: Vec<Exchange>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub feedback: ErrorFeedback,
    pub exchanges: Vec<Exchange>,
    pub rejections: Vec<Rejection>,
    pub model_error: Option<ModelError>,
}

/// Prompt sent to the replanner for `fb`.
pub fn replan_prompt(system_prompt: &str, fb: &ErrorFeedback) -> String {
    format!("{system_prompt}\n{}", serialize_feedback(fb))
}

fn rejection_note(reason: &str) -> String {
    format!("# previous completion rejected: {}\n", reason.replace('\n', " "))
}

/// Asks for an updated plan, spending one unit of `budget` per model call.
/// Bindings in `fb` stay in scope for the new plan.
pub fn replan_from_feedback<B: ModelBackend + ?Sized>(
    fb: &ErrorFeedback,
    backend: &mut B,
    ctx: AgentContext<'_>,
    budget: usize,
) -> Result<Replan, Box<Abort>> {
    let system = render_system_prompt(ctx.cfg, ctx.registry).unwrap_or_default();
    let base = replan_prompt(&system, fb);
    let bound: BTreeSet<String> = fb.bindings.keys().cloned().collect();
    request_plan(&base, REPLAN_HEADER, &bound, backend, ctx.registry, budget).map_err(
        |(exchanges, rejections, model_error)| {
            Box::new(Abort {
                feedback: fb.clone(),
                exchanges,
                rejections,
                model_error,
            })
        },
    )
}

type PlanFailure = (Vec<Exchange>, Vec<Rejection>, Option<ModelError>);

/// Up to `calls` model calls until a completion parses and lowers.
fn request_plan<B: ModelBackend + ?Sized>(
    base: &str,
    header: &str,
    bound: &BTreeSet<String>,
    backend: &mut B,
    registry: &ToolRegistry,
    calls: usize,
) -> Result<Replan, PlanFailure> {
    let mut exchanges = Vec::new();
    let mut rejections: Vec<Rejection> = Vec::new();
    for _ in 0..calls {
        let prompt = match rejections.last() {
            None => String::from(base),
            Some(r) => {
                let cut = base.rfind(header).unwrap_or(base.len());
                format!("{}{}{}", &base[..cut], rejection_note(&r.reason), &base[cut..])
            }
        };
        let c = match backend.complete(&prompt) {
            Ok(c) => c,
            Err(e) => return Err((exchanges, rejections, Some(e))),
        };
        exchanges.push(Exchange {
            prompt,
            completion: c.text.clone(),
            usage: c.usage,
            usage_source: c.usage_source,
        });
        let plan = match parse_completion(header, &c.text) {
            Ok(p) => p,
            Err(e) => {
                rejections.push(Rejection {
                    completion: c.text,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match lower_with_bindings(&plan, registry, bound) {
            Ok(steps) => {
                return Ok(Replan {
                    plan,
                    steps,
                    exchanges,
                    rejections,
                })
            }
            Err(e) => rejections.push(Rejection {
                completion: c.text,
                reason: e.to_string(),
            }),
        }
    }
    Err((exchanges, rejections, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentOutcome {
    Answered,
    /// Budget exhausted or no usable plan.
    Aborted,
    LimitExceeded,
    ModelError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentEpisode {
    pub outcome: AgentOutcome,
    pub messages: Vec<AgentMessage>,
    pub exchanges: Vec<Exchange>,
    pub plans: Vec<PlanAst>,
    pub rejections: Vec<Rejection>,
    pub failures: Vec<ErrorFeedback>,
    pub invocations: Vec<Invocation>,
    pub bindings: Bindings,
    pub observation: Option<Observation>,
    pub replans_used: usize,
    pub usage: TokenUsage,
    pub error: Option<String>,
}

impl AgentEpisode {
    pub fn model_calls(&self) -> usize {
        self.exchanges.len()
    }

    pub fn answer_text(&self) -> String {
        self.observation
            .as_ref()
            .map(Observation::answer_text)
            .unwrap_or_default()
    }
}

fn msg(from: &str, to: &str, kind: MessageKind, body: String, tokens: TokenUsage) -> AgentMessage {
    AgentMessage {
        from: from.to_string(),
        to: to.to_string(),
        kind,
        phase: kind.phase(),
        body,
        tokens,
    }
}

fn render_template(t: &CallTemplate) -> String {
    let args: Vec<String> = t
        .args
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Operand::Str(s) => json_str(s),
                Operand::Int(i) => i.to_string(),
                Operand::Var(n) => n.clone(),
            };
            format!("{k}={v}")
        })
        .collect();
    format!("{}({})", t.tool, args.join(", "))
}

fn path_suffix(path: &[Accessor]) -> String {
    let e = Expr {
        base: ExprBase::Value(Value::Var(String::new())),
        path: path.to_vec(),
    };
    render_expr(&e)
}

/// One line of executable code per lowered step, nested blocks indented.
pub fn render_codeact(steps: &[CodeActStep]) -> String {
    fn go(steps: &[CodeActStep], depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        let guard = |g: &Guard| match g {
            Guard::Probe { call, negated } => {
                format!("{}{}", if *negated { "not " } else { "" }, render_template(call))
            }
            Guard::Flag { name, negated } => {
                format!("{}{name}", if *negated { "not " } else { "" })
            }
        };
        let operand = |o: &Operand| match o {
            Operand::Str(s) => json_str(s),
            Operand::Int(i) => i.to_string(),
            Operand::Var(n) => n.clone(),
        };
        for s in steps {
            match s {
                CodeActStep::Binding {
                    target, source, path, ..
                } => {
                    out.push_str(&format!("{pad}{target} = {}{}\n", operand(source), path_suffix(path)));
                }
                CodeActStep::ToolInvocation { target, call, path, .. } => match target {
                    Some(t) => out.push_str(&format!("{pad}{t} = {}{}\n", render_template(call), path_suffix(path))),
                    None => out.push_str(&format!("{pad}{}\n", render_template(call))),
                },
                CodeActStep::FinalAnswer { source, path, .. } => {
                    out.push_str(&format!(
                        "{pad}final_answer({}{})\n",
                        operand(source),
                        path_suffix(path)
                    ));
                }
                CodeActStep::Loop {
                    guard: g,
                    body,
                    break_if,
                    ..
                } => {
                    out.push_str(&format!("{pad}while {}:\n", guard(g)));
                    go(body, depth + 1, out);
                    if let Some(b) = break_if {
                        out.push_str(&format!("{pad}  if {}: break\n", guard(b)));
                    }
                }
                CodeActStep::Conditional {
                    guard: g,
                    then_body,
                    else_body,
                    ..
                } => {
                    out.push_str(&format!("{pad}if {}:\n", guard(g)));
                    go(then_body, depth + 1, out);
                    if !else_body.is_empty() {
                        out.push_str(&format!("{pad}else:\n"));
                        go(else_body, depth + 1, out);
                    }
                }
            }
        }
    }
    let mut out = String::new();
    go(steps, 0, &mut out);
    out
}

/// Planner, tool caller and replanner until an answer, an abort, or the
/// replan budget runs out. The model is called at most `budget + 1` times.
pub fn run_agent_episode<B: ModelBackend + ?Sized>(
    ctx: AgentContext<'_>,
    backend: &mut B,
    budget: usize,
) -> AgentEpisode {
    let mut ep = AgentEpisode {
        outcome: AgentOutcome::Aborted,
        messages: Vec::new(),
        exchanges: Vec::new(),
        plans: Vec::new(),
        rejections: Vec::new(),
        failures: Vec::new(),
        invocations: Vec::new(),
        bindings: Bindings::new(),
        observation: None,
        replans_used: 0,
        usage: TokenUsage::default(),
        error: None,
    };
    let system = match render_system_prompt(ctx.cfg, ctx.registry) {
        Ok(s) => s,
        Err(e) => {
            ep.error = Some(e.to_string());
            return ep;
        }
    };
    let owner = ctx.cfg.tool_owner().to_string();
    let mut sandbox = Sandbox::new(ctx.corpus);
    let mut prompt = format!("{system}\n{INITIAL_HEADER}\n");
    let mut header = INITIAL_HEADER;
    let mut author = PLANNER;
    let mut calls_left = budget + 1;

    loop {
        let bound: BTreeSet<String> = ep.bindings.keys().cloned().collect();
        let got = request_plan(&prompt, header, &bound, backend, ctx.registry, calls_left);
        let (exchanges, rejections, result) = match got {
            Ok(r) => (r.exchanges.clone(), r.rejections.clone(), Ok((r.plan, r.steps))),
            Err((x, r, e)) => (x, r, Err(e)),
        };
        calls_left -= exchanges.len();
        for x in &exchanges {
            ep.usage += x.usage;
            ep.messages.push(msg(
                author,
                TOOL_CALLER,
                MessageKind::Plan,
                x.completion.clone(),
                x.usage,
            ));
        }
        // Every model call after the first is a replan.
        ep.replans_used = (budget + 1 - calls_left).saturating_sub(1);
        ep.exchanges.extend(exchanges);
        ep.rejections.extend(rejections);
        let (plan, steps) = match result {
            Ok(p) => p,
            Err(model_error) => {
                if let Some(e) = model_error {
                    ep.outcome = AgentOutcome::ModelError;
                    ep.error = Some(e.to_string());
                }
                close_segment(&mut ep, &owner, "no usable plan".to_string());
                return ep;
            }
        };
        ep.plans.push(plan);
        let run = run_codeact(
            &steps,
            ctx.registry,
            &mut sandbox,
            ep.bindings.clone(),
            ctx.limits,
            &owner,
        );
        let skipped = ep.invocations.len();
        ep.invocations.extend(run.invocations.iter().cloned());
        for inv in &ep.invocations[skipped..] {
            ep.messages.push(msg(
                TOOL_CALLER,
                &owner,
                MessageKind::Codeact,
                inv.wire.clone(),
                TokenUsage::default(),
            ));
            let (kind, body) = match &inv.result {
                Ok(v) => (MessageKind::ToolResult, v.to_string()),
                Err(e) => (MessageKind::ErrorFeedback, e.clone()),
            };
            ep.messages
                .push(msg(&owner, TOOL_CALLER, kind, body, TokenUsage::default()));
        }
        ep.bindings = run.bindings;
        match run.result {
            Ok(RunResult::Observation(obs)) => {
                ep.messages.push(msg(
                    TOOL_CALLER,
                    &owner,
                    MessageKind::Codeact,
                    render_codeact(&steps),
                    TokenUsage::default(),
                ));
                ep.messages.push(msg(
                    TOOL_CALLER,
                    PLANNER,
                    MessageKind::Final,
                    obs.render(),
                    TokenUsage::default(),
                ));
                ep.observation = Some(obs);
                ep.outcome = AgentOutcome::Answered;
                return ep;
            }
            Ok(RunResult::Failed(fb)) => {
                let tool_failure =
                    fb.failing_call.is_some() && ep.messages.last().map(|m| m.kind) == Some(MessageKind::ErrorFeedback);
                if tool_failure {
                    if let Some(m) = ep.messages.last_mut() {
                        m.to = REPLANNER.to_string();
                        m.body = serialize_feedback(&fb);
                    }
                } else {
                    ep.messages.push(msg(
                        TOOL_CALLER,
                        &owner,
                        MessageKind::Codeact,
                        render_codeact(&steps),
                        TokenUsage::default(),
                    ));
                    ep.messages.push(msg(
                        &owner,
                        REPLANNER,
                        MessageKind::ErrorFeedback,
                        serialize_feedback(&fb),
                        TokenUsage::default(),
                    ));
                }
                prompt = replan_prompt(&system, &fb);
                ep.failures.push(fb);
                if calls_left == 0 {
                    ep.outcome = AgentOutcome::Aborted;
                    return ep;
                }
                header = REPLAN_HEADER;
                author = REPLANNER;
            }
            Err(e) => {
                ep.error = Some(e.to_string());
                ep.outcome = AgentOutcome::LimitExceeded;
                close_segment(&mut ep, &owner, e.to_string());
                return ep;
            }
        }
    }
}

/// Ends the current model-call segment with a code and an observation
/// message so the log keeps the cycle order.
fn close_segment(ep: &mut AgentEpisode, owner: &str, reason: String) {
    if ep.messages.last().map(|m| m.phase) == Some(Phase::Observation) {
        return;
    }
    ep.messages.push(msg(
        TOOL_CALLER,
        owner,
        MessageKind::Codeact,
        String::new(),
        TokenUsage::default(),
    ));
    ep.messages.push(msg(
        TOOL_CALLER,
        PLANNER,
        MessageKind::Final,
        reason,
        TokenUsage::default(),
    ));
}

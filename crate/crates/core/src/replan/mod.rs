//! Task prompts and the plan, execute, replan loop for household tasks.

pub mod nl;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::executor::{execute, json_str, serialize_error_trace, ErrorTrace, ExecLimits, ExecutionTrace, PrefixMode};
use crate::gateway::{Exchange, ModelBackend, TokenUsage};
use crate::plan::{parse_completion, render_plan, validate_plan, CommentStyle, PlanAst, StmtKind, Vocabulary};
use crate::world::{score_goals, GoalScore, GoalSpec, WorldState};

use nl::{call_phrase, read_nl, render_nl, spoken};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFormat {
    Nl,
    #[default]
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentMode {
    None,
    #[default]
    En,
    Cn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub format: PlanFormat,
    pub comments: CommentMode,
    pub assert_enabled: bool,
    pub replan_enabled: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            format: PlanFormat::Code,
            comments: CommentMode::En,
            assert_enabled: true,
            replan_enabled: true,
        }
    }
}

pub const DEFAULT_BUDGET: usize = 3;

pub fn initial_name(task: &str) -> String {
    format!("initial_plan_for_{task}")
}

pub fn updated_name(task: &str) -> String {
    format!("updated_plan_for_{task}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub format: PlanFormat,
    pub action_imports: String,
    pub object_list: String,
    pub few_shot: Vec<String>,
    pub header: String,
    /// Comments left in English for want of a translation.
    pub untranslated: Vec<String>,
}

impl TaskPrompt {
    /// Imports, objects and examples: everything before the next-task part.
    pub fn preamble(&self) -> String {
        let mut out = format!("{}\n{}\n\n", self.action_imports, self.object_list);
        match self.format {
            PlanFormat::Code => out.push_str("# Example tasks\n"),
            PlanFormat::Nl => out.push_str("Example tasks:\n"),
        }
        for ex in &self.few_shot {
            out.push_str(ex);
            if self.format == PlanFormat::Nl {
                out.push('\n');
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let next = match self.format {
            PlanFormat::Code => "# Next Task",
            PlanFormat::Nl => "Next task:",
        };
        format!("{}\n{next}\n{}\n", self.preamble(), self.header)
    }
}

fn comment_style<'a>(mode: CommentMode, table: &'a BTreeMap<String, String>) -> CommentStyle<'a> {
    match mode {
        CommentMode::None => CommentStyle::Strip,
        CommentMode::En => CommentStyle::Keep,
        CommentMode::Cn => CommentStyle::Translate(table),
    }
}

/// Heading of a natural-language plan, the counterpart of `def name():`.
pub fn nl_heading(plan_name: &str) -> String {
    let spoken_name = match plan_name.strip_prefix("initial_plan_for_") {
        Some(task) => format!("Plan for {}", spoken(task)),
        None => match plan_name.strip_prefix("updated_plan_for_") {
            Some(task) => format!("Updated plan for {}", spoken(task)),
            None => format!("Plan for {}", spoken(plan_name)),
        },
    };
    format!("{spoken_name}:")
}

fn plan_header(format: PlanFormat, plan_name: &str) -> String {
    match format {
        PlanFormat::Code => format!("def {plan_name}():"),
        PlanFormat::Nl => nl_heading(plan_name),
    }
}

/// Builds the prompt for `task_name`. Examples that cannot be shown in the
/// chosen format are skipped.
pub fn build_task_prompt(
    vocab: &Vocabulary,
    objects: &[String],
    examples: &[PlanAst],
    task_name: &str,
    opts: PromptOptions,
    translations: &BTreeMap<String, String>,
) -> TaskPrompt {
    let style = comment_style(opts.comments, translations);
    let mut untranslated = Vec::new();
    let mut few_shot = Vec::new();
    for ex in examples {
        let ex = if opts.assert_enabled {
            ex.clone()
        } else {
            ex.without_assertions()
        };
        if opts.comments == CommentMode::Cn {
            for s in ex.walk() {
                if let StmtKind::Comment(c) = &s.kind {
                    if !translations.contains_key(c) && !untranslated.contains(c) {
                        untranslated.push(c.clone());
                    }
                }
            }
        }
        let text = match opts.format {
            PlanFormat::Code => render_plan_fallback(&ex, style),
            PlanFormat::Nl => render_nl(&ex, &nl_heading(&ex.name), style).ok(),
        };
        if let Some(t) = text {
            few_shot.push(t);
        }
    }
    let (action_imports, object_list) = match opts.format {
        PlanFormat::Code => {
            let sigs: Vec<String> = vocab
                .actions()
                .iter()
                .map(|a| {
                    let kinds: Vec<&str> = a.kinds.iter().map(|k| k.short_name()).collect();
                    format!("{}<{}>", a.name, kinds.join(", "))
                })
                .collect();
            let objs: Vec<String> = objects.iter().map(|o| json_str(o)).collect();
            (
                format!("from actions import {}", sigs.join(", ")),
                format!("objects = [{}]", objs.join(", ")),
            )
        }
        PlanFormat::Nl => {
            let sigs: Vec<String> = vocab
                .actions()
                .iter()
                .map(|a| match a.arity() {
                    0 => format!("{} (no arguments)", a.name),
                    1 => format!("{} (one object)", a.name),
                    n => format!("{} ({n} objects)", a.name),
                })
                .collect();
            (
                format!("You can use these actions: {}.", sigs.join(", ")),
                format!("The objects are: {}.", objects.join(", ")),
            )
        }
    };
    TaskPrompt {
        format: opts.format,
        action_imports,
        object_list,
        few_shot,
        header: plan_header(opts.format, &initial_name(task_name)),
        untranslated,
    }
}

/// Translation falls back to the English comment instead of failing.
fn render_plan_fallback(plan: &PlanAst, style: CommentStyle<'_>) -> Option<String> {
    match style {
        CommentStyle::Translate(table) => {
            let mut body = plan.clone();
            translate_in_place(&mut body.body, table);
            render_plan(&body, CommentStyle::Keep).ok()
        }
        other => render_plan(plan, other).ok(),
    }
}

fn translate_in_place(block: &mut [crate::plan::Statement], table: &BTreeMap<String, String>) {
    for s in block {
        match &mut s.kind {
            StmtKind::Comment(c) => {
                if let Some(t) = table.get(c) {
                    *c = t.clone();
                }
            }
            StmtKind::AssertRecover { recovery, .. } => translate_in_place(recovery, table),
            StmtKind::Loop { body, .. } => translate_in_place(body, table),
            StmtKind::Conditional {
                then_body, else_body, ..
            } => {
                translate_in_place(then_body, table);
                translate_in_place(else_body, table);
            }
            _ => {}
        }
    }
}

/// Feedback block in the sentence format.
pub fn serialize_error_trace_nl(t: &ErrorTrace, next_plan_name: &str, comments: CommentStyle<'_>) -> String {
    let mut out = format!(
        "The {} failed.\n",
        nl_heading(&t.plan_name).trim_end_matches(':').to_lowercase()
    );
    for s in &t.context {
        if let StmtKind::Comment(c) = &s.kind {
            let text = match comments {
                CommentStyle::Strip => continue,
                CommentStyle::Keep => c.as_str(),
                CommentStyle::Translate(table) => table.get(c).map_or(c.as_str(), String::as_str),
            };
            out.push_str(&format!("Done so far: {text}\n"));
        }
    }
    let step = parse_completion("def s():", &format!("    {}\n", t.error_step))
        .ok()
        .and_then(|p| match p.body.first().map(|s| &s.kind) {
            Some(StmtKind::Action(c)) => call_phrase(c),
            Some(StmtKind::AssertRecover { predicate, .. }) => {
                Some(format!("make sure {}", nl::predicate_phrase(predicate)))
            }
            _ => None,
        })
        .unwrap_or_else(|| t.error_step.clone());
    out.push_str(&format!("Failed step: {step}.\n"));
    out.push_str(&format!("Feedback: {}.\n", t.feedback_message));
    if t.environmental_information.is_empty() {
        out.push_str("Environment: nothing observed.\n");
    } else {
        out.push_str(&format!("Environment: {}.\n", t.environmental_information.join("; ")));
    }
    if t.items_in_hand.is_empty() {
        out.push_str("Items in hand: none.\n");
    } else {
        out.push_str(&format!("Items in hand: {}.\n", t.items_in_hand.join(", ")));
    }
    out.push_str(&format!("\n{}\n", nl_heading(next_plan_name)));
    out
}

/// A household task ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbodiedTask {
    pub name: String,
    pub world: WorldState,
    pub vocab: Vocabulary,
    pub goals: GoalSpec,
    pub examples: Vec<PlanAst>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub options: PromptOptions,
    pub budget: usize,
    pub limits: ExecLimits,
    pub prefix: PrefixMode,
    pub translations: BTreeMap<String, String>,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            options: PromptOptions::default(),
            budget: DEFAULT_BUDGET,
            limits: ExecLimits::default(),
            prefix: PrefixMode::default(),
            translations: BTreeMap::new(),
        }
    }
}

impl EpisodeSettings {
    /// Replans allowed; zero when replanning is switched off.
    pub fn effective_budget(&self) -> usize {
        if self.options.replan_enabled {
            self.budget
        } else {
            0
        }
    }
}

/// What happened to one completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attempt {
    Executed {
        trace: Box<ExecutionTrace>,
    },
    /// Unparseable, invalid, or aborted by an execution limit.
    Rejected {
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Completed,
    BudgetExhausted,
    ModelError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub final_state: WorldState,
    pub attempts: Vec<Attempt>,
    pub replans_used: usize,
    pub transcript: Vec<Exchange>,
    pub score: GoalScore,
    pub outcome: EpisodeOutcome,
    pub error: Option<String>,
    pub untranslated: Vec<String>,
}

impl EpisodeResult {
    pub fn traces(&self) -> impl Iterator<Item = &ExecutionTrace> {
        self.attempts.iter().filter_map(|a| match a {
            Attempt::Executed { trace } => Some(&**trace),
            Attempt::Rejected { .. } => None,
        })
    }

    pub fn last_trace(&self) -> Option<&ExecutionTrace> {
        self.traces().last()
    }

    pub fn usage(&self) -> TokenUsage {
        self.transcript.iter().map(|x| x.usage).sum()
    }

    /// Action calls attempted and succeeded over every executed plan.
    pub fn step_counts(&self) -> (usize, usize) {
        self.traces()
            .fold((0, 0), |(a, s), t| (a + t.attempted, s + t.succeeded))
    }
}

fn rejection_note(format: PlanFormat, reason: &str) -> String {
    let reason = reason.replace('\n', " ");
    match format {
        PlanFormat::Code => format!("# previous completion rejected: {reason}\n"),
        PlanFormat::Nl => format!("Note: the previous answer was rejected ({reason}).\n"),
    }
}

/// Inserts `note` on the line before the trailing header of `prompt`.
fn with_note(prompt: &str, header: &str, note: &str) -> String {
    match prompt.rfind(header) {
        Some(at) => format!("{}{note}{}", &prompt[..at], &prompt[at..]),
        None => format!("{prompt}{note}"),
    }
}

fn read_plan(format: PlanFormat, header: &str, name: &str, text: &str) -> Result<PlanAst, String> {
    match format {
        PlanFormat::Code => parse_completion(header, text).map_err(|e| e.to_string()),
        PlanFormat::Nl => read_nl(name, text).map_err(|e| e.to_string()),
    }
}

/// Prompt, plan, execute; on an escalated failure ask for an updated plan
/// that continues from the state reached. The model is called at most
/// `budget + 1` times.
pub fn run_episode<B: ModelBackend + ?Sized>(
    task: &EmbodiedTask,
    backend: &mut B,
    settings: &EpisodeSettings,
) -> EpisodeResult {
    let opts = settings.options;
    let budget = settings.effective_budget();
    let objects: Vec<String> = task.vocab.objects().to_vec();
    let prompt = build_task_prompt(
        &task.vocab,
        &objects,
        &task.examples,
        &task.name,
        opts,
        &settings.translations,
    );
    let style = comment_style(opts.comments, &settings.translations);
    let preamble = prompt.preamble();

    let mut plan_name = initial_name(&task.name);
    let mut header = prompt.header.clone();
    let mut base = prompt.render();
    let mut note: Option<String> = None;

    let mut state = task.world.clone();
    let mut attempts = Vec::new();
    let mut transcript = Vec::new();
    let mut outcome = EpisodeOutcome::BudgetExhausted;
    let mut error = None;

    loop {
        let text = match &note {
            Some(n) => with_note(&base, &header, n),
            None => base.clone(),
        };
        let c = match backend.complete(&text) {
            Ok(c) => c,
            Err(e) => {
                outcome = EpisodeOutcome::ModelError;
                error = Some(e.to_string());
                break;
            }
        };
        transcript.push(Exchange {
            prompt: text,
            completion: c.text.clone(),
            usage: c.usage,
            usage_source: c.usage_source,
        });
        let calls = transcript.len();

        let plan = read_plan(opts.format, &header, &plan_name, &c.text).and_then(|p| {
            let p = if opts.assert_enabled { p } else { p.without_assertions() };
            let report = validate_plan(&p, &task.vocab);
            match report.issues.first() {
                None => Ok(p),
                Some(first) => Err(format!("invalid plan: line {}: {:?}", first.line, first.kind)),
            }
        });
        let plan = match plan {
            Ok(p) => p,
            Err(reason) => {
                note = Some(rejection_note(opts.format, &reason));
                attempts.push(Attempt::Rejected { reason });
                if calls > budget {
                    break;
                }
                continue;
            }
        };
        match execute(&plan, &state, settings.limits) {
            Ok((next, trace)) => {
                state = next;
                let failure = trace.failure.clone();
                attempts.push(Attempt::Executed { trace: Box::new(trace) });
                let Some(failure) = failure else {
                    outcome = EpisodeOutcome::Completed;
                    break;
                };
                if calls > budget {
                    break;
                }
                let next_name = updated_name(&task.name);
                let feedback = match opts.format {
                    PlanFormat::Code => serialize_error_trace(&failure, &next_name, settings.prefix, style),
                    PlanFormat::Nl => serialize_error_trace_nl(&failure, &next_name, style),
                };
                base = format!("{preamble}\n{feedback}");
                header = plan_header(opts.format, &next_name);
                plan_name = next_name;
                note = None;
            }
            Err(abort) => {
                state = abort.state;
                let reason = abort.error.to_string();
                note = Some(rejection_note(opts.format, &reason));
                attempts.push(Attempt::Rejected { reason });
                if calls > budget {
                    break;
                }
            }
        }
    }

    let trace_ok = matches!(attempts.last(), Some(Attempt::Executed { trace }) if trace.completed);
    let score = score_goals(&state, trace_ok, &task.goals);
    EpisodeResult {
        final_state: state,
        replans_used: transcript.len().saturating_sub(1),
        attempts,
        transcript,
        score,
        outcome,
        error,
        untranslated: prompt.untranslated,
    }
}

#[cfg(test)]
mod tests;

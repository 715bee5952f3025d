//! Runs a suite under one ablation setting and assembles the report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use codeagents_core::gateway::{
    Completion, Exchange, ModelBackend, ModelError, ReplayBackend, ScriptedBackend, TokenUsage, UsageSource,
};
use codeagents_core::metrics::{qa_score, summarize, Summary};
use codeagents_core::orchestrator::{run_agent_episode, AgentContext};
use codeagents_core::plan::PlanAst;
use codeagents_core::replan::{run_episode, EmbodiedTask, EpisodeSettings, PlanFormat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::Backend;
use crate::config::{RunContext, RunSettings};
use crate::formats::{FormatError, LoadedTask, QaTask, Suite, TaskKind, TaskSpec};
use crate::store::{read_ndjson, to_ndjson, write_ndjson, StoreError, TranscriptRecord};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXEC_DEFINITION: &str = "succeeded action steps divided by attempted action steps, summed over every \
                                   executed plan of the episode; comments are not steps; 0/0 counts as 1.0";
pub const TOKENS_PER_TASK_DEFINITION: &str = "mean over tasks of input+output tokens of all model calls in a task";
pub const TOKENS_PER_RUN_DEFINITION: &str = "sum over tasks of input+output tokens of all model calls in one pass";
pub const USAGE_SOURCE_DEFINITION: &str =
    "provider: counts reported by the model API; local: reference tokenizer; mixed: both within one task";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode `{episode}`: cannot create backend: {message}")]
    Backend { episode: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Creates a fresh backend for one episode.
pub type BackendFactory<'a> = dyn Fn(&TaskSpec, &str, PlanFormat) -> Result<Box<dyn Backend>, String> + Sync + 'a;

/// Flat per-task result; one per task and repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub kind: TaskKind,
    pub repeat: usize,
    pub seed: u64,
    pub episode: String,
    pub outcome: String,
    pub sr: Option<u8>,
    pub psr: Option<f64>,
    pub exec_fraction: Option<f64>,
    pub em: Option<u8>,
    pub f1: Option<f64>,
    pub answer: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub usage_source: String,
    pub cost: f64,
    pub replans: usize,
    pub model_calls: usize,
    /// Comments shown in English because the translation table lacked them.
    #[serde(default)]
    pub untranslated_comments: Vec<String>,
    pub error: Option<String>,
}

impl TaskRecord {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(self.input_tokens, self.output_tokens)
    }
}

/// Mean and standard deviation over repeats of per-repeat suite means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub repeats: usize,
    pub sr: Option<Summary>,
    pub psr: Option<Summary>,
    pub exec_fraction: Option<Summary>,
    pub em: Option<Summary>,
    pub f1: Option<Summary>,
    pub cost: Summary,
    pub replans: Summary,
    pub model_calls: Summary,
    pub tokens_per_task: Summary,
    pub tokens_per_run: Summary,
    pub usage_sum: TokenUsage,
    pub cost_sum: f64,
    pub usage_sources: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definitions {
    pub exec_fraction: String,
    pub tokens_per_task: String,
    pub tokens_per_run: String,
    pub usage_source: String,
}

impl Default for Definitions {
    fn default() -> Self {
        Definitions {
            exec_fraction: EXEC_DEFINITION.into(),
            tokens_per_task: TOKENS_PER_TASK_DEFINITION.into(),
            tokens_per_run: TOKENS_PER_RUN_DEFINITION.into(),
            usage_source: USAGE_SOURCE_DEFINITION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub suite: String,
    pub settings: RunSettings,
    pub definitions: Definitions,
    pub records: Vec<TaskRecord>,
    pub aggregates: Aggregates,
    pub per_task: BTreeMap<String, Aggregates>,
}

/// Per-episode log: attempts for household tasks, messages for agent tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: String,
    pub task_id: String,
    pub log: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub transcripts: Vec<TranscriptRecord>,
    pub episodes: Vec<EpisodeLog>,
}

pub fn episode_key(task_id: &str, repeat: usize) -> String {
    format!("{task_id}#{repeat}")
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates `records`: each metric is averaged within a repeat, then
/// summarized across repeats.
pub fn aggregate(records: &[TaskRecord]) -> Aggregates {
    let mut by_repeat: BTreeMap<usize, Vec<&TaskRecord>> = BTreeMap::new();
    for r in records {
        by_repeat.entry(r.repeat).or_default().push(r);
    }
    let per_repeat = |f: &dyn Fn(&TaskRecord) -> Option<f64>| -> Option<Summary> {
        let means: Vec<f64> = by_repeat
            .values()
            .filter_map(|rs| mean_of(rs.iter().filter_map(|r| f(r))))
            .collect();
        (!means.is_empty()).then(|| summarize(&means))
    };
    let zero = Summary::default;
    let sums: Vec<f64> = by_repeat
        .values()
        .map(|rs| rs.iter().map(|r| r.total_tokens as f64).sum())
        .collect();
    let mut usage_sources = BTreeMap::new();
    for r in records {
        *usage_sources.entry(r.usage_source.clone()).or_insert(0) += 1;
    }
    Aggregates {
        repeats: by_repeat.len(),
        sr: per_repeat(&|r| r.sr.map(f64::from)),
        psr: per_repeat(&|r| r.psr),
        exec_fraction: per_repeat(&|r| r.exec_fraction),
        em: per_repeat(&|r| r.em.map(f64::from)),
        f1: per_repeat(&|r| r.f1),
        cost: per_repeat(&|r| Some(r.cost)).unwrap_or_else(zero),
        replans: per_repeat(&|r| Some(r.replans as f64)).unwrap_or_else(zero),
        model_calls: per_repeat(&|r| Some(r.model_calls as f64)).unwrap_or_else(zero),
        tokens_per_task: per_repeat(&|r| Some(r.total_tokens as f64)).unwrap_or_else(zero),
        tokens_per_run: summarize(&sums),
        usage_sum: records.iter().map(TaskRecord::usage).sum(),
        cost_sum: records.iter().map(|r| r.cost).sum(),
        usage_sources,
    }
}

/// Few-shot examples in the order used for `seed`.
pub fn shuffled_examples(examples: &[PlanAst], seed: u64) -> Vec<PlanAst> {
    let mut out = examples.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

pub fn episode_settings(ctx: &RunContext) -> EpisodeSettings {
    let s = &ctx.settings;
    EpisodeSettings {
        options: s.ablation.options(),
        budget: s.budget,
        limits: s.limits,
        prefix: s.prefix,
        translations: ctx.translations.clone(),
    }
}

/// Passes calls through and keeps each exchange with its raw bodies.
struct Tap<'a> {
    inner: &'a mut dyn Backend,
    episode: &'a str,
    records: Vec<TranscriptRecord>,
}

impl ModelBackend for Tap<'_> {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        let c = self.inner.complete(prompt)?;
        let x = Exchange {
            prompt: prompt.to_string(),
            completion: c.text.clone(),
            usage: c.usage,
            usage_source: c.usage_source,
        };
        let bodies = self.inner.take_bodies();
        self.records
            .push(TranscriptRecord::new(self.episode, self.records.len(), &x, bodies));
        Ok(c)
    }
}

fn source_label(records: &[TranscriptRecord]) -> String {
    let has = |s| records.iter().any(|r| r.usage_source == s);
    match (has(UsageSource::Provider), has(UsageSource::Local)) {
        (true, true) => "mixed",
        (true, false) => "provider",
        (false, true) => "local",
        (false, false) => "none",
    }
    .to_string()
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

struct Job<'a> {
    spec: &'a TaskSpec,
    repeat: usize,
}

type JobResult = (TaskRecord, Vec<TranscriptRecord>, EpisodeLog);

fn run_embodied(task: &EmbodiedTask, seed: u64, ctx: &RunContext, tap: &mut Tap<'_>) -> (TaskRecord, Value) {
    let mut t = task.clone();
    t.examples = shuffled_examples(&task.examples, seed);
    let res = run_episode(&t, tap, &episode_settings(ctx));
    let (attempted, succeeded) = res.step_counts();
    let exec = if attempted == 0 {
        1.0
    } else {
        succeeded as f64 / attempted as f64
    };
    let record = TaskRecord {
        task_id: task.name.clone(),
        kind: TaskKind::Embodied,
        repeat: 0,
        seed,
        episode: String::new(),
        outcome: label(&res.outcome),
        sr: Some(res.score.sr),
        psr: Some(res.score.psr),
        exec_fraction: Some(exec),
        em: None,
        f1: None,
        answer: None,
        input_tokens: 0,
        output_tokens: 0,
        total_tokens: 0,
        usage_source: String::new(),
        cost: 0.0,
        replans: res.replans_used,
        model_calls: res.transcript.len(),
        untranslated_comments: res.untranslated.clone(),
        error: res.error.clone(),
    };
    let log = json!({
        "outcome": res.outcome,
        "attempts": res.attempts,
        "score": res.score,
        "error": res.error,
    });
    (record, log)
}

fn run_qa(task: &QaTask, seed: u64, ctx: &RunContext, tap: &mut Tap<'_>) -> (TaskRecord, Value) {
    let s = &ctx.settings;
    let budget = if s.ablation.replan_enabled { s.budget } else { 0 };
    let actx = AgentContext {
        cfg: &task.config,
        registry: &task.registry,
        corpus: &task.corpus,
        limits: s.limits,
    };
    let ep = run_agent_episode(actx, tap, budget);
    let answer = ep.answer_text();
    let score = qa_score(&answer, &task.gold);
    let record = TaskRecord {
        task_id: task.id.clone(),
        kind: TaskKind::Qa,
        repeat: 0,
        seed,
        episode: String::new(),
        outcome: label(&ep.outcome),
        sr: None,
        psr: None,
        exec_fraction: None,
        em: Some(score.em),
        f1: Some(score.f1),
        answer: Some(answer),
        input_tokens: 0,
        output_tokens: 0,
        total_tokens: 0,
        usage_source: String::new(),
        cost: 0.0,
        replans: ep.replans_used,
        model_calls: ep.model_calls(),
        untranslated_comments: Vec::new(),
        error: ep.error.clone(),
    };
    let log = json!({
        "outcome": ep.outcome,
        "messages": ep.messages,
        "invocations": ep.invocations,
        "failures": ep.failures,
        "rejections": ep.rejections,
        "error": ep.error,
    });
    (record, log)
}

fn run_job(job: &Job<'_>, ctx: &RunContext, factory: &BackendFactory<'_>) -> Result<JobResult, HarnessError> {
    let episode = episode_key(&job.spec.id, job.repeat);
    let seed = ctx.settings.ablation.seed_for(job.repeat);
    let format = match job.spec.task {
        LoadedTask::Embodied(_) => ctx.settings.ablation.format,
        LoadedTask::Qa(_) => PlanFormat::Code,
    };
    let mut backend = factory(job.spec, &episode, format).map_err(|message| HarnessError::Backend {
        episode: episode.clone(),
        message,
    })?;
    let mut tap = Tap {
        inner: backend.as_mut(),
        episode: &episode,
        records: Vec::new(),
    };
    let (mut record, log) = match &job.spec.task {
        LoadedTask::Embodied(t) => run_embodied(t, seed, ctx, &mut tap),
        LoadedTask::Qa(t) => run_qa(t, seed, ctx, &mut tap),
    };
    let transcripts = tap.records;
    let usage: TokenUsage = transcripts
        .iter()
        .map(|r| TokenUsage::new(r.input_tokens, r.output_tokens))
        .sum();
    record.repeat = job.repeat;
    record.episode = episode.clone();
    record.input_tokens = usage.input_tokens;
    record.output_tokens = usage.output_tokens;
    record.total_tokens = usage.total();
    record.usage_source = source_label(&transcripts);
    record.cost = ctx
        .prices
        .cost(&ctx.settings.model, usage)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let log = EpisodeLog {
        episode,
        task_id: job.spec.id.clone(),
        log,
    };
    Ok((record, transcripts, log))
}

/// Runs every task `repeats` times. Task failures are recorded in the
/// report; only configuration and backend-construction problems are errors.
pub fn run_suite(suite: &Suite, ctx: &RunContext, factory: &BackendFactory<'_>) -> Result<RunOutput, HarnessError> {
    let s = &ctx.settings;
    s.ablation.validate().map_err(HarnessError::Config)?;
    if ctx.prices.get(&s.model).is_none() {
        return Err(HarnessError::Config(format!("no prices for model `{}`", s.model)));
    }
    let jobs: Vec<Job<'_>> = suite
        .tasks
        .iter()
        .flat_map(|spec| (0..s.ablation.repeats).map(move |repeat| Job { spec, repeat }))
        .collect();
    let results: Mutex<Vec<Option<Result<JobResult, HarnessError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = s.parallelism.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(job, ctx, factory);
                results.lock().expect("result slot lock")[i] = Some(r);
            });
        }
    });
    let mut records = Vec::new();
    let mut transcripts = Vec::new();
    let mut episodes = Vec::new();
    for r in results.into_inner().expect("result slot lock") {
        let (rec, tr, log) = r.expect("every job ran")?;
        records.push(rec);
        transcripts.extend(tr);
        episodes.push(log);
    }
    Ok(RunOutput {
        report: build_report(&suite.name, s.clone(), records),
        transcripts,
        episodes,
    })
}

pub fn build_report(suite: &str, settings: RunSettings, records: Vec<TaskRecord>) -> RunReport {
    let mut grouped: BTreeMap<String, Vec<TaskRecord>> = BTreeMap::new();
    for r in &records {
        grouped.entry(r.task_id.clone()).or_default().push(r.clone());
    }
    RunReport {
        schema_version: SCHEMA_VERSION,
        suite: suite.to_string(),
        settings,
        definitions: Definitions::default(),
        aggregates: aggregate(&records),
        per_task: grouped.into_iter().map(|(k, rs)| (k, aggregate(&rs))).collect(),
        records,
    }
}

/// Scripted completions from each task's script file.
pub fn scripted_factory() -> impl Fn(&TaskSpec, &str, PlanFormat) -> Result<Box<dyn Backend>, String> + Sync {
    |spec: &TaskSpec, _: &str, format: PlanFormat| {
        let script = spec
            .script
            .as_ref()
            .ok_or_else(|| format!("task `{}` has no script", spec.id))?;
        let b: Box<dyn Backend> = Box::new(ScriptedBackend::new(script.entries(format).to_vec()));
        Ok(b)
    }
}

/// Plays back recorded exchanges keyed by episode.
pub fn replay_factory(
    recorded: BTreeMap<String, Vec<Exchange>>,
) -> impl Fn(&TaskSpec, &str, PlanFormat) -> Result<Box<dyn Backend>, String> + Sync {
    move |_: &TaskSpec, episode: &str, _: PlanFormat| {
        let xs = recorded.get(episode).cloned().unwrap_or_default();
        let b: Box<dyn Backend> = Box::new(ReplayBackend::new(xs));
        Ok(b)
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const RECORDS_FILE: &str = "records.ndjson";
pub const TRANSCRIPTS_FILE: &str = "transcripts.ndjson";
pub const EPISODES_FILE: &str = "episodes.ndjson";

pub fn report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes the report, the flat record file, transcripts and episode logs.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(REPORT_FILE), report_json(&out.report)).map_err(io)?;
    write_ndjson(&dir.join(RECORDS_FILE), &out.report.records)?;
    write_ndjson(&dir.join(TRANSCRIPTS_FILE), &out.transcripts)?;
    write_ndjson(&dir.join(EPISODES_FILE), &out.episodes)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = crate::formats::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        HarnessError::Format(FormatError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>, HarnessError> {
    Ok(read_ndjson(path)?)
}

/// Transcript file contents exactly as [`write_run`] writes them.
pub fn transcripts_ndjson(out: &RunOutput) -> String {
    to_ndjson(&out.transcripts)
}

fn cell(s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
        None => "-".into(),
    }
}

/// Plain-text table of the aggregates and per-task means.
pub fn render_table(report: &RunReport) -> String {
    let a = &report.aggregates;
    let ab = &report.settings.ablation;
    let mut out = format!(
        "suite {} | model {} | format {} | comments {} | assert {} | replan {} | repeats {}\n\n",
        report.suite,
        report.settings.model,
        label(&ab.format),
        label(&ab.comments),
        ab.assert_enabled,
        ab.replan_enabled,
        a.repeats
    );
    let rows: [(&str, String); 10] = [
        ("SR", cell(&a.sr)),
        ("PSR", cell(&a.psr)),
        ("Exec", cell(&a.exec_fraction)),
        ("EM", cell(&a.em)),
        ("F1", cell(&a.f1)),
        ("tokens/task", cell(&Some(a.tokens_per_task))),
        ("tokens/run", cell(&Some(a.tokens_per_run))),
        ("cost/task ($)", cell(&Some(a.cost))),
        ("replans/task", cell(&Some(a.replans))),
        ("calls/task", cell(&Some(a.model_calls))),
    ];
    for (k, v) in rows {
        out.push_str(&format!("{k:<14} {v}\n"));
    }
    out.push_str(&format!(
        "{:<14} {} in / {} out, ${:.4}\n",
        "total", a.usage_sum.input_tokens, a.usage_sum.output_tokens, a.cost_sum
    ));
    let sources: Vec<String> = a.usage_sources.iter().map(|(k, n)| format!("{k}={n}")).collect();
    out.push_str(&format!("{:<14} {}\n\n", "usage source", sources.join(", ")));
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
        "task", "SR", "PSR", "Exec", "EM", "F1", "tokens"
    ));
    let m = |s: &Option<Summary>| s.map_or("-".to_string(), |s| format!("{:.3}", s.mean));
    for (id, t) in &report.per_task {
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10.1}\n",
            id,
            m(&t.sr),
            m(&t.psr),
            m(&t.exec_fraction),
            m(&t.em),
            m(&t.f1),
            t.tokens_per_task.mean
        ));
    }
    out
}

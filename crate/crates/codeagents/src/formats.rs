//! On-disk formats: vocabularies, worlds, tasks, corpora, registries, prices,
//! translation tables, completion scripts and suites.
//!
//! Relative paths inside a file are resolved against that file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use codeagents_core::gateway::{CostModel, Matcher, PriceTable, ScriptEntry, TokenUsage};
use codeagents_core::orchestrator::AgentConfig;
use codeagents_core::plan::{parse_plan, ActionSig, ArgKind, Predicate, Relation, Vocabulary};
use codeagents_core::replan::{EmbodiedTask, PlanFormat};
use codeagents_core::tools::{Corpus, Document, ToolRegistry};
use codeagents_core::world::{GoalSpec, WorldBuilder};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Syntax {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

fn invalid(path: &Path, message: impl ToString) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn syntax(path: &Path, line: usize, message: impl ToString) -> FormatError {
    FormatError::Syntax {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    toml::from_str(&read_text(path)?).map_err(|e| invalid(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

/// `action walk/1` declares an action taking object arguments;
/// `action say text` lists argument kinds explicitly. `object sofa` adds an
/// object name.
pub fn parse_vocab(path: &Path, text: &str) -> Result<Vocabulary, FormatError> {
    let mut v = Vocabulary::new();
    for (line, words) in content_lines(text) {
        match words.as_slice() {
            ["action", spec, kinds @ ..] => {
                let sig = match spec.split_once('/') {
                    Some((name, n)) if kinds.is_empty() => {
                        let n: usize = n.parse().map_err(|_| syntax(path, line, "bad arity"))?;
                        ActionSig::new(name, vec![ArgKind::Object; n])
                    }
                    Some(_) => return Err(syntax(path, line, "give either an arity or argument kinds")),
                    None => {
                        let kinds = kinds
                            .iter()
                            .map(|k| {
                                ArgKind::from_name(k).ok_or_else(|| syntax(path, line, format!("unknown kind `{k}`")))
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        ActionSig::new(*spec, kinds)
                    }
                };
                v.add_action(sig).map_err(|e| syntax(path, line, e))?;
            }
            ["object", name] => v.add_object(*name).map_err(|e| syntax(path, line, e))?,
            _ => return Err(syntax(path, line, "expected `action NAME/N` or `object NAME`")),
        }
    }
    Ok(v)
}

/// `room R`, `object X in R [property ...]` and an optional `agent R`.
pub fn parse_world(path: &Path, text: &str) -> Result<WorldBuilder, FormatError> {
    let mut b = WorldBuilder::new();
    for (line, words) in content_lines(text) {
        b = match words.as_slice() {
            ["room", r] => b.room(r),
            ["object", id, "in", room, props @ ..] => b.object(id, room, props),
            ["agent", room] => b.agent_in(room),
            _ => return Err(syntax(path, line, "expected `room`, `object X in R` or `agent R`")),
        };
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskFile {
    pub name: String,
    pub world: PathBuf,
    pub vocab: PathBuf,
    pub examples_dir: PathBuf,
    pub agent: Option<String>,
    pub goals: Vec<Predicate>,
    pub examples: Vec<String>,
}

fn parse_goal(path: &Path, line: usize, words: &[&str]) -> Result<Predicate, FormatError> {
    let (negated, rest) = match words {
        ["not", rest @ ..] => (true, rest),
        rest => (false, rest),
    };
    match rest {
        [rel, obj] => {
            let relation =
                Relation::from_name(rel).ok_or_else(|| syntax(path, line, format!("unknown relation `{rel}`")))?;
            let p = Predicate::new(relation, *obj);
            Ok(if negated { p.negate() } else { p })
        }
        _ => Err(syntax(path, line, "expected `goal [not] RELATION OBJECT`")),
    }
}

/// Task files name the task, point at a world and a vocabulary, place the
/// agent, and list goals and few-shot example ids.
pub fn parse_task(path: &Path, text: &str) -> Result<TaskFile, FormatError> {
    let dir = base_dir(path);
    let mut name = None;
    let mut world = None;
    let mut vocab = None;
    let mut examples_dir = dir.join("../examples");
    let mut agent = None;
    let mut goals = Vec::new();
    let mut examples = Vec::new();
    for (line, words) in content_lines(text) {
        match words.as_slice() {
            ["task", n] => name = Some(n.to_string()),
            ["world", p] => world = Some(dir.join(p)),
            ["vocab", p] => vocab = Some(dir.join(p)),
            ["examples", p] => examples_dir = dir.join(p),
            ["init", "agent", room] => agent = Some(room.to_string()),
            ["goal", rest @ ..] => goals.push(parse_goal(path, line, rest)?),
            ["example", id] => examples.push(id.to_string()),
            _ => return Err(syntax(path, line, "unrecognised task line")),
        }
    }
    Ok(TaskFile {
        name: name.ok_or_else(|| invalid(path, "missing `task` line"))?,
        world: world.ok_or_else(|| invalid(path, "missing `world` line"))?,
        vocab: vocab.ok_or_else(|| invalid(path, "missing `vocab` line"))?,
        examples_dir,
        agent,
        goals,
        examples,
    })
}

pub fn load_embodied_task(path: &Path) -> Result<EmbodiedTask, FormatError> {
    let tf = parse_task(path, &read_text(path)?)?;
    let vocab = parse_vocab(&tf.vocab, &read_text(&tf.vocab)?)?;
    let mut builder = parse_world(&tf.world, &read_text(&tf.world)?)?;
    if let Some(room) = &tf.agent {
        builder = builder.agent_in(room);
    }
    let world = builder.build().map_err(|e| invalid(&tf.world, e))?;
    let goals = GoalSpec::new(tf.goals, &world).map_err(|e| invalid(path, e))?;
    let examples = tf
        .examples
        .iter()
        .map(|id| {
            let p = tf.examples_dir.join(format!("{id}.py"));
            parse_plan(&read_text(&p)?).map_err(|e| invalid(&p, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbodiedTask {
        name: tf.name,
        world,
        vocab,
        goals,
        examples,
    })
}

/// Every `*.txt` file in `dir`, in file-name order.
pub fn load_corpus(dir: &Path) -> Result<Corpus, FormatError> {
    let io = |source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    paths.sort();
    let docs = paths
        .iter()
        .map(|p| Document::parse(&read_text(p)?).map_err(|e| invalid(p, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Corpus::new(docs).map_err(|e| invalid(dir, e))
}

pub fn load_registry(path: &Path) -> Result<ToolRegistry, FormatError> {
    let raw: ToolRegistry = serde_json::from_str(&read_text(path)?).map_err(|e| invalid(path, e))?;
    ToolRegistry::new(raw.tools().to_vec()).map_err(|e| invalid(path, e))
}

/// TOML tables keyed by model id, each with `input_per_million` and
/// `output_per_million`.
pub fn parse_prices(path: &Path, text: &str) -> Result<PriceTable, FormatError> {
    let raw: BTreeMap<String, CostModel> = toml::from_str(text).map_err(|e| invalid(path, e))?;
    let mut table = PriceTable::new();
    for (model, prices) in raw {
        table.insert(model, prices).map_err(|e| invalid(path, e))?;
    }
    Ok(table)
}

pub fn load_prices(path: &Path) -> Result<PriceTable, FormatError> {
    parse_prices(path, &read_text(path)?)
}

/// Tab-separated `english<TAB>translation` rows; `#` lines are comments.
pub fn parse_translations(path: &Path, text: &str) -> Result<BTreeMap<String, String>, FormatError> {
    let mut out = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() || l.starts_with('#') {
            continue;
        }
        let (en, cn) = l
            .split_once('\t')
            .ok_or_else(|| syntax(path, i + 1, "expected a tab"))?;
        out.insert(en.trim().to_string(), cn.trim().to_string());
    }
    Ok(out)
}

pub fn load_translations(path: &Path) -> Result<BTreeMap<String, String>, FormatError> {
    parse_translations(path, &read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScriptItem {
    completion: Option<String>,
    completion_file: Option<PathBuf>,
    #[serde(default)]
    matcher: Matcher,
    usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    #[serde(default)]
    code: Vec<RawScriptItem>,
    #[serde(default)]
    nl: Vec<RawScriptItem>,
}

/// Canned completions for one task, per plan format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub code: Vec<ScriptEntry>,
    pub nl: Vec<ScriptEntry>,
}

impl Script {
    pub fn entries(&self, format: PlanFormat) -> &[ScriptEntry] {
        match format {
            PlanFormat::Code => &self.code,
            PlanFormat::Nl => &self.nl,
        }
    }
}

/// `[[code]]` and `[[nl]]` arrays; each item has `completion` or
/// `completion_file`, and optionally `matcher` and `usage`.
pub fn load_script(path: &Path) -> Result<Script, FormatError> {
    let raw: RawScript = read_toml(path)?;
    let dir = base_dir(path);
    let resolve = |items: Vec<RawScriptItem>| -> Result<Vec<ScriptEntry>, FormatError> {
        items
            .into_iter()
            .map(|it| {
                let completion = match (it.completion, it.completion_file) {
                    (Some(c), None) => c,
                    (None, Some(f)) => read_text(&dir.join(f))?,
                    _ => {
                        return Err(invalid(
                            path,
                            "each entry needs exactly one of completion, completion_file",
                        ))
                    }
                };
                let mut e = ScriptEntry::new(completion).when(it.matcher);
                e.usage = it.usage;
                Ok(e)
            })
            .collect()
    };
    Ok(Script {
        code: resolve(raw.code)?,
        nl: resolve(raw.nl)?,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQaTask {
    id: String,
    question: String,
    gold: String,
    corpus: PathBuf,
    registry: Option<PathBuf>,
    tools: Option<Vec<String>>,
    role: Option<String>,
    team: Option<Vec<String>>,
}

/// A question answered by the browsing agent over a local corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct QaTask {
    pub id: String,
    pub gold: String,
    pub config: AgentConfig,
    pub registry: ToolRegistry,
    pub corpus: Corpus,
}

const DEFAULT_TOOLS: [&str; 6] = [
    "GoogleSearchTool",
    "VisitTool",
    "PageUpTool",
    "PageDownTool",
    "FinderTool",
    "TextInspectorTool",
];

pub fn load_qa_task(path: &Path) -> Result<QaTask, FormatError> {
    let raw: RawQaTask = read_toml(path)?;
    let dir = base_dir(path);
    let registry = match &raw.registry {
        Some(p) => load_registry(&dir.join(p))?,
        None => ToolRegistry::browsing(),
    };
    let tools = raw
        .tools
        .unwrap_or_else(|| DEFAULT_TOOLS.iter().map(|t| t.to_string()).collect());
    let mut config = AgentConfig::new(raw.question, tools);
    if let Some(role) = raw.role {
        config.role = role;
    }
    if let Some(team) = raw.team {
        config.team = team;
    }
    Ok(QaTask {
        id: raw.id,
        gold: raw.gold,
        config,
        registry,
        corpus: load_corpus(&dir.join(&raw.corpus))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Embodied,
    Qa,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuiteEntry {
    kind: TaskKind,
    path: PathBuf,
    script: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    name: String,
    #[serde(rename = "task")]
    tasks: Vec<RawSuiteEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedTask {
    Embodied(EmbodiedTask),
    Qa(QaTask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub task: LoadedTask,
    pub script: Option<Script>,
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self.task {
            LoadedTask::Embodied(_) => TaskKind::Embodied,
            LoadedTask::Qa(_) => TaskKind::Qa,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
}

/// Loads a suite and every task in it; any task that fails to load fails
/// the whole suite.
pub fn load_suite(path: &Path) -> Result<Suite, FormatError> {
    let raw: RawSuite = read_toml(path)?;
    let dir = base_dir(path);
    let mut tasks = Vec::new();
    for entry in raw.tasks {
        let p = dir.join(&entry.path);
        let (id, task) = match entry.kind {
            TaskKind::Embodied => {
                let t = load_embodied_task(&p)?;
                (t.name.clone(), LoadedTask::Embodied(t))
            }
            TaskKind::Qa => {
                let t = load_qa_task(&p)?;
                (t.id.clone(), LoadedTask::Qa(t))
            }
        };
        if tasks.iter().any(|t: &TaskSpec| t.id == id) {
            return Err(invalid(path, format!("duplicate task id `{id}`")));
        }
        let script = entry.script.map(|s| load_script(&dir.join(s))).transpose()?;
        tasks.push(TaskSpec { id, task, script });
    }
    Ok(Suite { name: raw.name, tasks })
}

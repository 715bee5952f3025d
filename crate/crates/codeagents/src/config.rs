//! Ablation settings and the run configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use codeagents_core::executor::{ExecLimits, PrefixMode};
use codeagents_core::gateway::PriceTable;
use codeagents_core::replan::{CommentMode, PlanFormat, PromptOptions, DEFAULT_BUDGET};
use serde::{Deserialize, Serialize};

use crate::formats::{load_prices, load_translations, read_text, FormatError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub format: PlanFormat,
    pub comments: CommentMode,
    pub assert_enabled: bool,
    pub replan_enabled: bool,
    /// One seed per repeat, cycled; the repeat index is used when empty.
    pub seeds: Vec<u64>,
    pub repeats: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::preset(11).expect("row 11 exists")
    }
}

/// Labels of the eleven ablation rows, in table order.
pub const ABLATION_LABELS: [&str; 11] = [
    "Natural Language",
    "Natural Language + Replan",
    "Code Only",
    "Code + Replan",
    "Code + Assert",
    "Code + Assert + Replan",
    "Code + CN Comment + Assert + Replan",
    "Code + EN Comment",
    "Code + EN Comment + Replan",
    "Code + EN Comment + Assert",
    "Code + EN Comment + Assert + Replan",
];

impl AblationConfig {
    fn row(format: PlanFormat, comments: CommentMode, assert_enabled: bool, replan_enabled: bool) -> Self {
        AblationConfig {
            format,
            comments,
            assert_enabled,
            replan_enabled,
            seeds: Vec::new(),
            repeats: 1,
        }
    }

    /// Row `n` (1-based) of the ablation table.
    pub fn preset(n: usize) -> Option<Self> {
        use CommentMode::*;
        use PlanFormat::*;
        let (f, c, a, r) = match n {
            1 => (Nl, En, false, false),
            2 => (Nl, En, false, true),
            3 => (Code, None, false, false),
            4 => (Code, None, false, true),
            5 => (Code, None, true, false),
            6 => (Code, None, true, true),
            7 => (Code, Cn, true, true),
            8 => (Code, En, false, false),
            9 => (Code, En, false, true),
            10 => (Code, En, true, false),
            11 => (Code, En, true, true),
            _ => return Option::None,
        };
        Some(Self::row(f, c, a, r))
    }

    pub fn ablation_rows() -> Vec<(usize, &'static str, AblationConfig)> {
        (1..=11)
            .map(|n| (n, ABLATION_LABELS[n - 1], Self::preset(n).expect("row exists")))
            .collect()
    }

    pub fn options(&self) -> PromptOptions {
        PromptOptions {
            format: self.format,
            comments: self.comments,
            assert_enabled: self.assert_enabled,
            replan_enabled: self.replan_enabled,
        }
    }

    pub fn seed_for(&self, repeat: usize) -> u64 {
        if self.seeds.is_empty() {
            repeat as u64
        } else {
            self.seeds[repeat % self.seeds.len()]
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.repeats == 0 {
            return Err("repeats must be at least 1".into());
        }
        Ok(())
    }
}

/// Everything about a run that ends up in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub ablation: AblationConfig,
    pub budget: usize,
    pub limits: ExecLimits,
    pub prefix: PrefixMode,
    pub model: String,
    pub parallelism: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            ablation: AblationConfig::default(),
            budget: DEFAULT_BUDGET,
            limits: ExecLimits::default(),
            prefix: PrefixMode::default(),
            model: "gemini-2.5-flash".into(),
            parallelism: 1,
        }
    }
}

/// Settings plus the tables they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub settings: RunSettings,
    pub prices: PriceTable,
    pub translations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAblation {
    preset: Option<usize>,
    format: Option<PlanFormat>,
    comments: Option<CommentMode>,
    assert_enabled: Option<bool>,
    replan_enabled: Option<bool>,
    seeds: Option<Vec<u64>>,
    repeats: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    prices: PathBuf,
    translations: Option<PathBuf>,
    budget: Option<usize>,
    parallelism: Option<usize>,
    prefix: Option<PrefixMode>,
    max_steps: Option<usize>,
    max_loop_iters: Option<usize>,
    #[serde(default)]
    ablation: RawAblation,
}

fn resolve_ablation(path: &Path, raw: RawAblation) -> Result<AblationConfig, FormatError> {
    let invalid = |message: String| FormatError::Invalid {
        path: path.to_path_buf(),
        message,
    };
    let mut a = match raw.preset {
        Some(n) => AblationConfig::preset(n).ok_or_else(|| invalid(format!("no ablation preset {n}")))?,
        None => AblationConfig::default(),
    };
    if let Some(v) = raw.format {
        a.format = v;
    }
    if let Some(v) = raw.comments {
        a.comments = v;
    }
    if let Some(v) = raw.assert_enabled {
        a.assert_enabled = v;
    }
    if let Some(v) = raw.replan_enabled {
        a.replan_enabled = v;
    }
    if let Some(v) = raw.seeds {
        a.seeds = v;
    }
    if let Some(v) = raw.repeats {
        a.repeats = v;
    }
    a.validate().map_err(invalid)?;
    Ok(a)
}

/// Reads a run configuration and the price and translation tables it names.
pub fn load_config(path: &Path) -> Result<RunContext, FormatError> {
    let raw: RawConfig = toml::from_str(&read_text(path)?).map_err(|e| FormatError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let defaults = ExecLimits::default();
    let settings = RunSettings {
        ablation: resolve_ablation(path, raw.ablation)?,
        budget: raw.budget.unwrap_or(DEFAULT_BUDGET),
        limits: ExecLimits {
            max_steps: raw.max_steps.unwrap_or(defaults.max_steps),
            max_loop_iters: raw.max_loop_iters.unwrap_or(defaults.max_loop_iters),
        },
        prefix: raw.prefix.unwrap_or_default(),
        model: raw.model,
        parallelism: raw.parallelism.unwrap_or(1).max(1),
    };
    let prices = load_prices(&dir.join(raw.prices))?;
    let translations = match raw.translations {
        Some(p) => load_translations(&dir.join(p))?,
        None => BTreeMap::new(),
    };
    Ok(RunContext {
        settings,
        prices,
        translations,
    })
}

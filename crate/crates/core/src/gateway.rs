//! Model backends, token counting and cost accounting.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl core::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

/// Where a usage figure came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSource {
    /// Reported by the model provider.
    Provider,
    /// Computed with the local reference tokenizer.
    #[default]
    Local,
}

/// Price per million input and output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl CostModel {
    pub fn cost(&self, usage: TokenUsage) -> f64 {
        usage.input_tokens as f64 / 1e6 * self.input_per_million
            + usage.output_tokens as f64 / 1e6 * self.output_per_million
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("no prices for model `{0}`")]
    UnknownModel(String),
    #[error("negative price for model `{0}`")]
    NegativePrice(String),
}

/// Prices keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(flatten)]
    models: BTreeMap<String, CostModel>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: impl Into<String>, prices: CostModel) -> Result<(), CostError> {
        let model = model.into();
        if prices.input_per_million < 0.0 || prices.output_per_million < 0.0 {
            return Err(CostError::NegativePrice(model));
        }
        self.models.insert(model, prices);
        Ok(())
    }

    pub fn get(&self, model: &str) -> Option<&CostModel> {
        self.models.get(model)
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn cost(&self, model: &str, usage: TokenUsage) -> Result<f64, CostError> {
        self.get(model)
            .map(|m| m.cost(usage))
            .ok_or_else(|| CostError::UnknownModel(model.to_string()))
    }
}

pub trait Tokenizer {
    fn count(&self, text: &str) -> usize;
}

/// Every maximal run of alphanumerics and underscores is one token, every
/// other non-whitespace character is one token, whitespace is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTokenizer;

impl Tokenizer for ReferenceTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

pub fn count_tokens(text: &str) -> usize {
    ReferenceTokenizer.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub usage_source: UsageSource,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("script exhausted after {0} calls")]
    ScriptExhausted(usize),
    #[error("script entry {0} does not match the prompt")]
    ScriptMismatch(usize),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider rejected the request: {0}")]
    ProviderRejection(String),
    #[error("empty prompt")]
    EmptyPrompt,
}

pub trait ModelBackend {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &mut B {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        (**self).complete(prompt)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for alloc::boxed::Box<B> {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        (**self).complete(prompt)
    }
}

fn local_completion(prompt: &str, text: String) -> Completion {
    let usage = TokenUsage::new(count_tokens(prompt) as u64, count_tokens(&text) as u64);
    Completion {
        text,
        usage,
        usage_source: UsageSource::Local,
    }
}

/// Condition a scripted entry places on the prompt it answers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Any,
    Contains(String),
    EndsWith(String),
    Exact(String),
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::EndsWith(s) => prompt.trim_end().ends_with(s.trim_end()),
            Matcher::Exact(s) => prompt == s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub matcher: Matcher,
    pub completion: String,
    /// Synthetic usage; computed with the reference tokenizer when absent.
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

impl ScriptEntry {
    pub fn new(completion: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: Matcher::Any,
            completion: completion.into(),
            usage: None,
        }
    }

    pub fn when(mut self, matcher: Matcher) -> Self {
        self.matcher = matcher;
        self
    }
}

/// Replays canned completions in order. An entry is consumed only when its
/// matcher accepts the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedBackend {
    script: Vec<ScriptEntry>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        ScriptedBackend { script, cursor: 0 }
    }

    pub fn from_completions<I, S>(completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(completions.into_iter().map(ScriptEntry::new).collect())
    }

    pub fn calls(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let entry = self
            .script
            .get(self.cursor)
            .ok_or(ModelError::ScriptExhausted(self.cursor))?;
        if !entry.matcher.matches(prompt) {
            return Err(ModelError::ScriptMismatch(self.cursor));
        }
        self.cursor += 1;
        let mut c = local_completion(prompt, entry.completion.clone());
        if let Some(u) = entry.usage {
            c.usage = u;
        }
        Ok(c)
    }
}

/// Returns the same completion for every prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstantBackend {
    pub completion: String,
    pub calls: usize,
}

impl ConstantBackend {
    pub fn new(completion: impl Into<String>) -> Self {
        ConstantBackend {
            completion: completion.into(),
            calls: 0,
        }
    }
}

impl ModelBackend for ConstantBackend {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        self.calls += 1;
        Ok(local_completion(prompt, self.completion.clone()))
    }
}

/// One model call as persisted in a transcript store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub completion: String,
    pub usage: TokenUsage,
    pub usage_source: UsageSource,
}

/// Wraps a backend and keeps every exchange it serves.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    exchanges: Vec<Exchange>,
}

impl<B: ModelBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            exchanges: Vec::new(),
        }
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn into_parts(self) -> (B, Vec<Exchange>) {
        (self.inner, self.exchanges)
    }
}

impl<B: ModelBackend> ModelBackend for RecordingBackend<B> {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        let c = self.inner.complete(prompt)?;
        self.exchanges.push(Exchange {
            prompt: prompt.to_string(),
            completion: c.text.clone(),
            usage: c.usage,
            usage_source: c.usage_source,
        });
        Ok(c)
    }
}

/// Plays back recorded exchanges; each prompt must equal the recorded one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayBackend {
    exchanges: Vec<Exchange>,
    cursor: usize,
}

impl ReplayBackend {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayBackend { exchanges, cursor: 0 }
    }
}

impl ModelBackend for ReplayBackend {
    fn complete(&mut self, prompt: &str) -> Result<Completion, ModelError> {
        let e = self
            .exchanges
            .get(self.cursor)
            .ok_or(ModelError::ScriptExhausted(self.cursor))?;
        if e.prompt != prompt {
            return Err(ModelError::ScriptMismatch(self.cursor));
        }
        self.cursor += 1;
        Ok(Completion {
            text: e.completion.clone(),
            usage: e.usage,
            usage_source: e.usage_source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn reference_tokenizer_pins() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("walk('livingroom')"), 6);
        assert_eq!(count_tokens("    # Step 1: Locate sofa and bread"), 8);
        assert_eq!(count_tokens("步骤1：走"), 3);
    }

    #[test]
    fn scripted_playback() {
        let mut b = ScriptedBackend::from_completions(["first", "second"]);
        assert_eq!(b.complete("p").unwrap().text, "first");
        assert_eq!(b.complete("p").unwrap().text, "second");
        assert_eq!(b.complete("p"), Err(ModelError::ScriptExhausted(2)));
        assert_eq!(
            ScriptedBackend::default().complete("p"),
            Err(ModelError::ScriptExhausted(0))
        );
    }

    #[test]
    fn matcher_gates_consumption() {
        let mut b = ScriptedBackend::new(vec![ScriptEntry::new("x").when(Matcher::Contains("error_step".into()))]);
        assert_eq!(b.complete("prompt"), Err(ModelError::ScriptMismatch(0)));
        assert_eq!(b.remaining(), 1);
        assert!(b.complete("... error_step = ...").is_ok());
    }

    #[test]
    fn synthetic_usage_overrides_local_count() {
        let mut entry = ScriptEntry::new("abc");
        entry.usage = Some(TokenUsage::new(10, 20));
        let mut b = ScriptedBackend::new(vec![entry]);
        assert_eq!(b.complete("p").unwrap().usage, TokenUsage::new(10, 20));
    }

    #[test]
    fn record_then_replay() {
        let mut rec = RecordingBackend::new(ScriptedBackend::from_completions(["a b", "c"]));
        let first = rec.complete("one").unwrap();
        let second = rec.complete("two").unwrap();
        let (_, log) = rec.into_parts();
        let mut replay = ReplayBackend::new(log);
        assert_eq!(replay.complete("one").unwrap(), first);
        assert_eq!(replay.complete("two").unwrap(), second);
        assert_eq!(replay.complete("three"), Err(ModelError::ScriptExhausted(2)));
        let mut wrong = ReplayBackend::new(vec![]);
        assert!(wrong.complete("x").is_err());
    }

    /// Prices reverse-derived from two rows of published usage and cost.
    fn flash_prices() -> CostModel {
        // 72.42 a + 0.31482 b = 11.05 ; 23.28 a + 0.17460 b = 3.60
        let (a1, b1, c1) = (72.42, 0.31482, 11.05);
        let (a2, b2, c2) = (23.28, 0.17460, 3.60);
        let det = a1 * b2 - a2 * b1;
        CostModel {
            input_per_million: (c1 * b2 - c2 * b1) / det,
            output_per_million: (a1 * c2 - a2 * c1) / det,
        }
    }

    #[test]
    fn cost_cross_check() {
        let m = flash_prices();
        assert!(m.input_per_million > 0.0 && m.output_per_million > 0.0);
        let cost = m.cost(TokenUsage::new(23_280_000, 174_600));
        assert!((cost - 3.60).abs() <= 0.05, "{cost}");
        assert_eq!(m.cost(TokenUsage::default()), 0.0);
        let mut table = PriceTable::new();
        table.insert("flash", m).unwrap();
        assert_eq!(
            table.cost("pro", TokenUsage::default()),
            Err(CostError::UnknownModel("pro".into()))
        );
    }

    proptest! {
        #[test]
        fn append_never_decreases_count(a in ".{0,40}", b in ".{0,40}") {
            let joined = alloc::format!("{a}{b}");
            prop_assert!(count_tokens(&joined) >= count_tokens(&a));
        }

        #[test]
        fn cost_is_additive(xs in proptest::collection::vec((0u64..50_000_000, 0u64..5_000_000), 0..20)) {
            let m = CostModel { input_per_million: 0.15, output_per_million: 0.60 };
            let usages: Vec<TokenUsage> = xs.iter().map(|(i, o)| TokenUsage::new(*i, *o)).collect();
            let whole = m.cost(usages.iter().copied().sum());
            let parts: f64 = usages.iter().map(|u| m.cost(*u)).sum();
            prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
        }
    }
}

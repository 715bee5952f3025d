//! Offline browsing tools over a fixed document corpus.
//!
//! Documents are url-shaped ids mapped to paragraphs. A [`BrowseSession`]
//! holds the page cursor of one episode; the corpus itself is never mutated.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

/// Paragraphs shown per page.
pub const PAGE_SIZE: usize = 5;

pub const URL_FAILED: &str = "URL failed to load";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub paragraphs: Vec<String>,
    /// Searchable but fails to load when visited.
    #[serde(default)]
    pub unavailable: bool,
}

impl Document {
    /// Parses the corpus file layout: the id on the first line, an optional
    /// `@unavailable` marker line, then blank-line-separated paragraphs.
    pub fn parse(text: &str) -> Result<Document, CorpusError> {
        let mut lines = text.lines();
        let id = lines.next().map(str::trim).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(CorpusError::MissingId);
        }
        let rest: Vec<&str> = lines.collect();
        let mut unavailable = false;
        let mut body = rest.as_slice();
        if let Some(first) = body.first() {
            if first.trim() == "@unavailable" {
                unavailable = true;
                body = &body[1..];
            }
        }
        let mut paragraphs = Vec::new();
        let mut cur: Vec<&str> = Vec::new();
        for line in body.iter().map(|l| l.trim()).chain(core::iter::once("")) {
            if line.is_empty() {
                if !cur.is_empty() {
                    paragraphs.push(cur.join(" "));
                    cur.clear();
                }
            } else {
                cur.push(line);
            }
        }
        if paragraphs.is_empty() {
            return Err(CorpusError::Empty(id));
        }
        Ok(Document {
            id,
            paragraphs,
            unavailable,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("document has no id line")]
    MissingId,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has no paragraphs")]
    Empty(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    /// Lowercased word to the ids of the documents containing it.
    index: BTreeMap<String, Vec<String>>,
}

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut documents = BTreeMap::new();
        for d in docs {
            if d.paragraphs.is_empty() {
                return Err(CorpusError::Empty(d.id));
            }
            if documents.contains_key(&d.id) {
                return Err(CorpusError::DuplicateId(d.id));
            }
            documents.insert(d.id.clone(), d);
        }
        let mut index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for d in documents.values() {
            let ws: BTreeSet<String> = d.paragraphs.iter().flat_map(|p| words(p)).collect();
            for w in ws {
                index.entry(w).or_default().push(d.id.clone());
            }
        }
        Ok(Corpus { documents, index })
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
}

fn search_terms(doc: &Document) -> BTreeSet<String> {
    doc.paragraphs
        .iter()
        .flat_map(|p| words(p))
        .chain(words(&doc.id))
        .collect()
}

/// Ranks documents by exact-phrase hit, then distinct keyword overlap, then
/// id. Words of the document id count as keywords, so `site:` style queries
/// favour matching hosts. Documents with no overlap are dropped.
pub fn search(query: &str, corpus: &Corpus) -> Vec<SearchHit> {
    let keys: BTreeSet<String> = words(query).collect();
    let phrase = query.trim().to_lowercase();
    let mut scored: Vec<(bool, usize, &Document)> = corpus
        .documents()
        .filter_map(|d| {
            let terms = search_terms(d);
            let overlap = keys.iter().filter(|k| terms.contains(*k)).count();
            if overlap == 0 {
                return None;
            }
            let hit = !phrase.is_empty() && d.paragraphs.iter().any(|p| p.to_lowercase().contains(&phrase));
            Some((hit, overlap, d))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.id.cmp(&b.2.id)));
    scored
        .into_iter()
        .map(|(_, _, d)| SearchHit {
            url: d.id.clone(),
            title: d.paragraphs[0].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("{0}")]
    Failed(String),
    #[error("no document open")]
    NoDocument,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("`{tool}`: {problem}")]
    Schema { tool: String, problem: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowseSession {
    pub current_doc: Option<String>,
    /// First paragraph index of the viewport.
    pub start: usize,
    pub scroll_count: usize,
}

impl BrowseSession {
    pub fn new() -> Self {
        Self::default()
    }

    fn doc<'c>(&self, corpus: &'c Corpus) -> Result<&'c Document, ToolError> {
        self.current_doc
            .as_deref()
            .and_then(|id| corpus.document(id))
            .ok_or(ToolError::NoDocument)
    }

    /// Paragraph index range currently shown.
    pub fn viewport(&self, corpus: &Corpus) -> Result<core::ops::Range<usize>, ToolError> {
        let d = self.doc(corpus)?;
        Ok(self.start..(self.start + PAGE_SIZE).min(d.paragraphs.len()))
    }

    fn page_text(&self, corpus: &Corpus) -> Result<String, ToolError> {
        let d = self.doc(corpus)?;
        Ok(d.paragraphs[self.viewport(corpus)?].join("\n\n"))
    }

    pub fn visit(&mut self, url: &str, corpus: &Corpus) -> Result<String, ToolError> {
        match corpus.document(url) {
            Some(d) if !d.unavailable => {
                self.current_doc = Some(url.to_string());
                self.start = 0;
                self.scroll_count = 0;
                self.page_text(corpus)
            }
            _ => Err(ToolError::Failed(URL_FAILED.to_string())),
        }
    }

    pub fn page_down(&mut self, corpus: &Corpus) -> Result<String, ToolError> {
        let len = self.doc(corpus)?.paragraphs.len();
        if self.start + PAGE_SIZE < len {
            self.start += PAGE_SIZE;
        }
        self.scroll_count += 1;
        self.page_text(corpus)
    }

    pub fn page_up(&mut self, corpus: &Corpus) -> Result<String, ToolError> {
        self.doc(corpus)?;
        self.start = self.start.saturating_sub(PAGE_SIZE);
        self.page_text(corpus)
    }

    /// Paragraphs of the open document containing `keyword`, ignoring case.
    pub fn finder(&self, keyword: &str, corpus: &Corpus) -> Result<Vec<String>, ToolError> {
        let needle = keyword.to_lowercase();
        Ok(self
            .doc(corpus)?
            .paragraphs
            .iter()
            .filter(|p| p.to_lowercase().contains(&needle))
            .cloned()
            .collect())
    }

    /// Whether the viewport contains `probe`, ignoring case.
    pub fn contains(&self, probe: &str, corpus: &Corpus) -> Result<bool, ToolError> {
        Ok(self.page_text(corpus)?.to_lowercase().contains(&probe.to_lowercase()))
    }
}

fn focus_key(word: &str) -> String {
    let w = word.to_lowercase();
    match w.strip_suffix('s') {
        Some(stem) if w.chars().count() > 3 => stem.to_string(),
        _ => w,
    }
}

/// Splits on `. ! ? ; :`, keeping the terminator with each piece.
pub fn sentences(text: &str) -> Vec<(String, Option<char>)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if matches!(c, '.' | '!' | '?' | ';' | ':') {
            let s = cur.trim();
            if !s.is_empty() {
                out.push((s.to_string(), Some(c)));
            }
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push((s.to_string(), None));
    }
    out
}

/// Up to `count` snippets near focus-term occurrences.
///
/// Sentences sharing words with `focus` are anchors, scored by the number
/// of distinct focus words they contain (plural `s` ignored). An anchor
/// ending in `:` introduces its snippet, the following sentence; any other
/// anchor is its own snippet. Snippets are ranked by score, then position,
/// with duplicates dropped.
pub fn inspect(text: &str, focus: &str, count: usize) -> Vec<String> {
    let keys: BTreeSet<String> = words(focus).map(|w| focus_key(&w)).collect();
    let sents = sentences(text);
    let mut scored: Vec<(usize, usize, String)> = Vec::new();
    for (i, (s, end)) in sents.iter().enumerate() {
        let ws: BTreeSet<String> = words(s).map(|w| focus_key(&w)).collect();
        let overlap = keys.iter().filter(|k| ws.contains(*k)).count();
        if overlap == 0 {
            continue;
        }
        let snippet = match end {
            Some(':') => match sents.get(i + 1) {
                Some((next, _)) => next.clone(),
                None => s.clone(),
            },
            _ => s.clone(),
        };
        scored.push((overlap, i, snippet));
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut seen = BTreeSet::new();
    scored
        .into_iter()
        .filter(|(_, _, s)| seen.insert(s.clone()))
        .take(count)
        .map(|(_, _, s)| s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Str,
    Int,
    Bool,
}

impl ParamKind {
    fn accepts(self, v: &Json) -> bool {
        match self {
            ParamKind::Str => v.is_string(),
            ParamKind::Int => v.is_i64() || v.is_u64(),
            ParamKind::Bool => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

/// What a tool does; the sandbox binds each kind to its implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Search,
    Visit,
    PageUp,
    PageDown,
    Finder,
    Inspect,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub kind: ToolKind,
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub description: String,
}

/// Tool call as it travels on the wire: `{"tool":..., "args":{...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub tool: String,
    pub args: BTreeMap<String, Json>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed tool call: {0}")]
    Malformed(String),
    #[error("argument `{0}` is not a scalar")]
    NonScalar(String),
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        ToolCall {
            tool: tool.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, name: &str, value: impl Into<Json>) -> Self {
        self.args.insert(name.to_string(), value.into());
        self
    }

    pub fn encode(&self) -> Result<String, WireError> {
        for (k, v) in &self.args {
            if v.is_array() || v.is_object() || v.is_null() {
                return Err(WireError::NonScalar(k.clone()));
            }
        }
        serde_json::to_string(self).map_err(|e| WireError::Malformed(e.to_string()))
    }

    pub fn decode(text: &str) -> Result<ToolCall, WireError> {
        let call: ToolCall = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
        for (k, v) in &call.args {
            if v.is_array() || v.is_object() || v.is_null() {
                return Err(WireError::NonScalar(k.clone()));
            }
        }
        Ok(call)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate tool `{0}`")]
    Duplicate(String),
}

/// Declared tools in declaration order. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRegistry {
    tools: Vec<ToolSchema>,
}

fn param(name: &str, kind: ParamKind) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        kind,
        required: true,
    }
}

fn schema(name: &str, kind: ToolKind, params: Vec<ParamSpec>, description: &str) -> ToolSchema {
    ToolSchema {
        name: name.to_string(),
        kind,
        params,
        description: description.to_string(),
    }
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolSchema>) -> Result<Self, RegistryError> {
        let mut seen = BTreeSet::new();
        for t in &tools {
            if !seen.insert(t.name.clone()) {
                return Err(RegistryError::Duplicate(t.name.clone()));
            }
        }
        Ok(ToolRegistry { tools })
    }

    /// The six browsing tools plus the viewport probe.
    pub fn browsing() -> Self {
        use ParamKind::*;
        ToolRegistry {
            tools: alloc::vec![
                schema(
                    "GoogleSearchTool",
                    ToolKind::Search,
                    alloc::vec![param("query", Str)],
                    "rank corpus documents for a query"
                ),
                schema(
                    "VisitTool",
                    ToolKind::Visit,
                    alloc::vec![param("url", Str)],
                    "open a document at its first page"
                ),
                schema("PageUpTool", ToolKind::PageUp, alloc::vec![], "scroll one page up"),
                schema(
                    "PageDownTool",
                    ToolKind::PageDown,
                    alloc::vec![],
                    "scroll one page down"
                ),
                schema(
                    "FinderTool",
                    ToolKind::Finder,
                    alloc::vec![param("keyword", Str)],
                    "paragraphs containing a keyword"
                ),
                schema(
                    "TextInspectorTool",
                    ToolKind::Inspect,
                    alloc::vec![param("text", Str), param("focus", Str), param("count", Int)],
                    "snippets around focus terms"
                ),
                schema(
                    "TextInspectorTool.contains",
                    ToolKind::Contains,
                    alloc::vec![param("probe", Str)],
                    "whether the viewport mentions a phrase"
                ),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tools(&self) -> &[ToolSchema] {
        &self.tools
    }

    /// Checks names and kinds of `call` against the declared schema.
    pub fn check(&self, call: &ToolCall) -> Result<&ToolSchema, ToolError> {
        let schema = self
            .get(&call.tool)
            .ok_or_else(|| ToolError::UnknownTool(call.tool.clone()))?;
        let bad = |problem: String| ToolError::Schema {
            tool: call.tool.clone(),
            problem,
        };
        for name in call.args.keys() {
            if !schema.params.iter().any(|p| &p.name == name) {
                return Err(bad(format!("unexpected argument `{name}`")));
            }
        }
        for p in &schema.params {
            match call.args.get(&p.name) {
                None if p.required => return Err(bad(format!("missing argument `{}`", p.name))),
                None => {}
                Some(v) if !p.kind.accepts(v) => {
                    return Err(bad(format!("argument `{}` must be {:?}", p.name, p.kind)))
                }
                Some(_) => {}
            }
        }
        Ok(schema)
    }
}

/// Per-episode tool state bound to a shared corpus.
#[derive(Debug, Clone)]
pub struct Sandbox<'c> {
    pub corpus: &'c Corpus,
    pub session: BrowseSession,
}

impl<'c> Sandbox<'c> {
    pub fn new(corpus: &'c Corpus) -> Self {
        Sandbox {
            corpus,
            session: BrowseSession::new(),
        }
    }

    /// Validates `call` against `registry`, then runs it.
    pub fn dispatch(&mut self, registry: &ToolRegistry, call: &ToolCall) -> Result<Json, ToolError> {
        let schema = registry.check(call)?;
        let s = |name: &str| call.args.get(name).and_then(Json::as_str).unwrap_or_default();
        let c = self.corpus;
        Ok(match schema.kind {
            ToolKind::Search => {
                let hits = search(s("query"), c);
                Json::Array(
                    hits.into_iter()
                        .map(|h| json!({"url": h.url, "title": h.title}))
                        .collect(),
                )
            }
            ToolKind::Visit => Json::String(self.session.visit(s("url"), c)?),
            ToolKind::PageUp => Json::String(self.session.page_up(c)?),
            ToolKind::PageDown => Json::String(self.session.page_down(c)?),
            ToolKind::Finder => Json::Array(
                self.session
                    .finder(s("keyword"), c)?
                    .into_iter()
                    .map(Json::String)
                    .collect(),
            ),
            ToolKind::Inspect => {
                let n = call.args.get("count").and_then(Json::as_u64).unwrap_or(1) as usize;
                Json::Array(
                    inspect(s("text"), s("focus"), n)
                        .into_iter()
                        .map(Json::String)
                        .collect(),
                )
            }
            ToolKind::Contains => Json::Bool(self.session.contains(s("probe"), c)?),
        })
    }

    /// Tool state summary used in error feedback.
    pub fn state_line(&self) -> String {
        match &self.session.current_doc {
            None => format!("no document open, scrolled {} times", self.session.scroll_count),
            Some(d) => format!(
                "{d} from paragraph {}, scrolled {} times",
                self.session.start, self.session.scroll_count
            ),
        }
    }
}

#[cfg(test)]
mod tests;

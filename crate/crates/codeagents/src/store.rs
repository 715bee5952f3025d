//! Newline-delimited record files: model transcripts, episode logs and
//! flat per-task records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use codeagents_core::gateway::{Exchange, TokenUsage, UsageSource};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("episode `{episode}`: call {expected} missing from transcript")]
    Gap { episode: String, expected: usize },
}

/// Raw HTTP bodies of one model call, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBodies {
    pub request: String,
    pub response: String,
}

/// One model call, keyed by `(episode, call)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub episode: String,
    pub call: usize,
    pub prompt: String,
    pub completion: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usage_source: UsageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_body: Option<String>,
}

impl TranscriptRecord {
    pub fn new(episode: &str, call: usize, x: &Exchange, bodies: Option<RawBodies>) -> Self {
        let (request_body, response_body) = match bodies {
            Some(b) => (Some(b.request), Some(b.response)),
            None => (None, None),
        };
        TranscriptRecord {
            episode: episode.to_string(),
            call,
            prompt: x.prompt.clone(),
            completion: x.completion.clone(),
            input_tokens: x.usage.input_tokens,
            output_tokens: x.usage.output_tokens,
            usage_source: x.usage_source,
            request_body,
            response_body,
        }
    }

    pub fn exchange(&self) -> Exchange {
        Exchange {
            prompt: self.prompt.clone(),
            completion: self.completion.clone(),
            usage: TokenUsage::new(self.input_tokens, self.output_tokens),
            usage_source: self.usage_source,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One JSON document per line.
pub fn to_ndjson<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| StoreError::Record {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Groups transcript records into per-episode exchange lists ordered by
/// call index. Call indices must run 0, 1, 2, ... without gaps.
pub fn exchanges_by_episode(records: &[TranscriptRecord]) -> Result<BTreeMap<String, Vec<Exchange>>, StoreError> {
    let mut grouped: BTreeMap<String, Vec<&TranscriptRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.episode.clone()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (episode, mut rs) in grouped {
        rs.sort_by_key(|r| r.call);
        for (i, r) in rs.iter().enumerate() {
            if r.call != i {
                return Err(StoreError::Gap { episode, expected: i });
            }
        }
        out.insert(episode, rs.iter().map(|r| r.exchange()).collect());
    }
    Ok(out)
}

//! Answer scoring and summary statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Lowercases, drops punctuation and the articles a/an/the, and collapses
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaScore {
    pub em: u8,
    pub f1: f64,
}

pub fn qa_score(prediction: &str, gold: &str) -> QaScore {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let em = u8::from(p == g);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    let f1 = if pt.is_empty() || gt.is_empty() {
        f64::from(em)
    } else {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &gt {
            *counts.entry(t).or_default() += 1;
        }
        let mut common = 0usize;
        for t in &pt {
            if let Some(c) = counts.get_mut(t) {
                if *c > 0 {
                    *c -= 1;
                    common += 1;
                }
            }
        }
        if common == 0 {
            0.0
        } else {
            let precision = common as f64 / pt.len() as f64;
            let recall = common as f64 / gt.len() as f64;
            2.0 * precision * recall / (precision + recall)
        }
    };
    QaScore { em, f1 }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    if xs.is_empty() {
        return Summary::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Summary {
        mean,
        std: libm::sqrt(var),
    }
}

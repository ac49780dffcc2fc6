//! Sentence-level BLEU, exact match, and token-F1 over synonym references,
//! plus grouped aggregation of per-sample scores.
//!
//! All metrics expect already-normalized strings (see [`crate::label`]) and
//! are maximized / clipped over the reference set, so adding a reference can
//! never lower a score.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Strategy;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("reference set is empty")]
    EmptyReferences,
    #[error("no score rows to aggregate")]
    EmptyRows,
    #[error("unknown group field '{0}'")]
    UnknownGroupField(String),
}

/// Per-sample metric values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub model: String,
    pub strategy: Strategy,
    pub tissue: String,
    pub dataset_id: String,
    pub prediction: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu_avg: f64,
    pub em: f64,
    pub f1: f64,
}

/// Arithmetic means of each metric over one group.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricMeans {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu_avg: f64,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub mean: MetricMeans,
}

/// Scored rows plus grouped means, recomputable from the rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ScoreRow>,
    pub groups: BTreeMap<String, GroupStats>,
}

/// Fields a report can group on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupField {
    Model,
    Strategy,
    Tissue,
    Dataset,
}

impl GroupField {
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s {
            "model" => Ok(GroupField::Model),
            "strategy" => Ok(GroupField::Strategy),
            "tissue" => Ok(GroupField::Tissue),
            "dataset" => Ok(GroupField::Dataset),
            other => Err(EvalError::UnknownGroupField(other.to_string())),
        }
    }

    fn name(self) -> &'static str {
        match self {
            GroupField::Model => "model",
            GroupField::Strategy => "strategy",
            GroupField::Tissue => "tissue",
            GroupField::Dataset => "dataset",
        }
    }

    fn value<'a>(self, row: &'a ScoreRow) -> &'a str {
        match self {
            GroupField::Model => &row.model,
            GroupField::Strategy => row.strategy.as_str(),
            GroupField::Tissue => &row.tissue,
            GroupField::Dataset => &row.dataset_id,
        }
    }
}

pub fn tokenize(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu_avg: f64,
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision with add-one smoothing on zero-match orders.
///
/// Returns `(matches + 1) / (total + 1)` when no n-gram matched, otherwise
/// the raw clipped ratio; a candidate shorter than `n` therefore scores 1.
fn modified_precision(candidate: &[&str], references: &[Vec<&str>], n: usize) -> f64 {
    let cand = ngram_counts(candidate, n);
    let total: usize = cand.values().sum();
    let mut matches = 0usize;
    for (gram, &count) in &cand {
        let best = references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matches += count.min(best);
    }
    if matches == 0 {
        (matches + 1) as f64 / (total + 1) as f64
    } else {
        matches as f64 / total as f64
    }
}

/// Brevity penalty against the reference length closest to the candidate
/// length (ties break toward the shorter reference).
fn brevity_penalty(cand_len: usize, references: &[Vec<&str>]) -> f64 {
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(cand_len), len))
        .unwrap_or(0);
    if cand_len >= r {
        1.0
    } else {
        (1.0 - r as f64 / cand_len as f64).exp()
    }
}

/// Multi-reference sentence BLEU-1, BLEU-2, and their geometric mean.
pub fn bleu(candidate: &[&str], references: &[Vec<&str>]) -> Result<BleuScores, EvalError> {
    if references.is_empty() {
        return Err(EvalError::EmptyReferences);
    }
    if candidate.is_empty() {
        return Ok(BleuScores {
            bleu1: 0.0,
            bleu2: 0.0,
            bleu_avg: 0.0,
        });
    }
    let p1 = modified_precision(candidate, references, 1);
    let p2 = modified_precision(candidate, references, 2);
    let bp = brevity_penalty(candidate.len(), references);
    let bleu1 = bp * p1;
    let bleu2 = bp * (p1 * p2).sqrt();
    Ok(BleuScores {
        bleu1,
        bleu2,
        bleu_avg: (bleu1 * bleu2).sqrt(),
    })
}

/// 1 iff the candidate string-equals any reference.
pub fn exact_match(candidate: &str, references: &[String]) -> bool {
    references.iter().any(|r| r == candidate)
}

/// Token-multiset F1, maximized over references.
pub fn token_f1(candidate: &str, references: &[String]) -> f64 {
    let cand = tokenize(candidate);
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in &cand {
        *cand_counts.entry(t).or_insert(0) += 1;
    }
    let mut best = 0.0f64;
    for r in references {
        let rt = tokenize(r);
        if cand.is_empty() && rt.is_empty() {
            best = best.max(1.0);
            continue;
        }
        if cand.is_empty() || rt.is_empty() {
            continue;
        }
        let mut ref_counts: HashMap<&str, usize> = HashMap::new();
        for t in &rt {
            *ref_counts.entry(t).or_insert(0) += 1;
        }
        let overlap: usize = cand_counts
            .iter()
            .map(|(t, &c)| c.min(ref_counts.get(t).copied().unwrap_or(0)))
            .sum();
        if overlap == 0 {
            continue;
        }
        let p = overlap as f64 / cand.len() as f64;
        let r = overlap as f64 / rt.len() as f64;
        best = best.max(2.0 * p * r / (p + r));
    }
    best
}

/// Score one normalized prediction against normalized references.
pub fn score_sample(prediction: &str, references: &[String]) -> Result<(BleuScores, f64, f64), EvalError> {
    let cand = tokenize(prediction);
    let refs: Vec<Vec<&str>> = references.iter().map(|r| tokenize(r)).collect();
    let b = bleu(&cand, &refs)?;
    let em = if exact_match(prediction, references) {
        1.0
    } else {
        0.0
    };
    let f1 = token_f1(prediction, references);
    Ok((b, em, f1))
}

fn group_key(fields: &[GroupField], row: &ScoreRow) -> String {
    if fields.is_empty() {
        return "all".to_string();
    }
    fields
        .iter()
        .map(|f| format!("{}={}", f.name(), f.value(row)))
        .collect::<Vec<_>>()
        .join("|")
}

/// Group rows and compute arithmetic metric means per group.
pub fn aggregate(rows: &[ScoreRow], group_by: &[GroupField]) -> Result<EvalReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyRows);
    }
    let mut acc: BTreeMap<String, (usize, [f64; 5])> = BTreeMap::new();
    for row in rows {
        let key = group_key(group_by, row);
        let slot = acc.entry(key).or_insert((0, [0.0; 5]));
        slot.0 += 1;
        for (s, v) in slot.1.iter_mut().zip([row.bleu1, row.bleu2, row.bleu_avg, row.em, row.f1]) {
            *s += v;
        }
    }
    let groups = acc
        .into_iter()
        .map(|(key, (n, sums))| {
            let d = n as f64;
            (
                key,
                GroupStats {
                    n,
                    mean: MetricMeans {
                        bleu1: sums[0] / d,
                        bleu2: sums[1] / d,
                        bleu_avg: sums[2] / d,
                        em: sums[3] / d,
                        f1: sums[4] / d,
                    },
                },
            )
        })
        .collect();
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (&a.sample_id, &a.model, a.strategy.as_str()).cmp(&(
            &b.sample_id,
            &b.model,
            b.strategy.as_str(),
        ))
    });
    Ok(EvalReport { rows, groups })
}

pub const METRIC_NAMES: [&str; 5] = ["bleu1", "bleu2", "bleu_avg", "em", "f1"];

impl MetricMeans {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "bleu1" => Some(self.bleu1),
            "bleu2" => Some(self.bleu2),
            "bleu_avg" => Some(self.bleu_avg),
            "em" => Some(self.em),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

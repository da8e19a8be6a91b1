//! Recognition metrics: normalized character edit distance, token BLEU, and
//! token precision/recall, plus macro-averaged reports.
//!
//! Edit distance works on Unicode scalar values. BLEU and precision/recall
//! work on lexer tokens with whitespace and comments removed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::tokenize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no prediction for sample `{0}`")]
    MissingPrediction(String),
    #[error("nothing to evaluate")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditDistance {
    pub raw: usize,
    /// `max(len(ref), len(hyp))`; zero only when both strings are empty.
    pub denominator: usize,
    pub normalized: f64,
}

/// Levenshtein distance with unit costs over characters.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn edit_distance(reference: &str, hypothesis: &str) -> EditDistance {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let raw = levenshtein(&r, &h);
    let denominator = r.len().max(h.len());
    let normalized = if denominator == 0 {
        0.0
    } else {
        raw as f64 / denominator as f64
    };
    EditDistance {
        raw,
        denominator,
        normalized,
    }
}

/// Non-whitespace, non-comment lexer tokens of `source`.
pub fn metric_tokens(source: &str) -> Vec<String> {
    tokenize(source)
        .tokens
        .into_iter()
        .filter(|t| t.kind.is_counted())
        .map(|t| t.text)
        .collect()
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU on a 0–100 scale.
///
/// Orders run from 1 to `min(max_n, |hyp|)`. A zero clipped precision is
/// floored at `1 / (2 * |hyp n-grams|)`. An empty hypothesis scores 0.
pub fn bleu<T: AsRef<str>>(reference: &[T], hypothesis: &[T], max_n: usize) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(hypothesis.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let total = hypothesis.len() + 1 - n;
        let clipped: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c = hypothesis.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * (log_sum / orders as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub matches: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Number of matched positions in the canonical alignment: minimal edit cost
/// first, then the most exact matches among minimal alignments.
pub fn aligned_matches<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    // Each cell holds (cost, -matches) and is minimized lexicographically.
    let m = hypothesis.len();
    let mut prev: Vec<(usize, isize)> = (0..=m).map(|j| (j, 0)).collect();
    let mut cur = vec![(0usize, 0isize); m + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = (i + 1, 0);
        for (j, h) in hypothesis.iter().enumerate() {
            let diag = if r == h {
                (prev[j].0, prev[j].1 - 1)
            } else {
                (prev[j].0 + 1, prev[j].1)
            };
            let delete = (prev[j + 1].0 + 1, prev[j + 1].1);
            let insert = (cur[j].0 + 1, cur[j].1);
            cur[j + 1] = diag.min(delete).min(insert);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (-prev[m].1) as usize
}

pub fn precision_recall<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> PrecisionRecall {
    if reference.is_empty() && hypothesis.is_empty() {
        return PrecisionRecall {
            matches: 0,
            precision: 100.0,
            recall: 100.0,
        };
    }
    let matches = aligned_matches(reference, hypothesis);
    let pct = |n: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * matches as f64 / n as f64
        }
    };
    PrecisionRecall {
        matches,
        precision: pct(hypothesis.len()),
        recall: pct(reference.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub edit_distance: f64,
    pub bleu: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn score_sample(reference: &str, hypothesis: &str) -> SampleMetrics {
    let r = metric_tokens(reference);
    let h = metric_tokens(hypothesis);
    let pr = precision_recall(&r, &h);
    SampleMetrics {
        edit_distance: edit_distance(reference, hypothesis).normalized,
        bleu: bleu(&r, &h, 4),
        precision: pr.precision,
        recall: pr.recall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub edit_distance: f64,
    pub bleu: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    /// Table row in the order Edit Dis. & BLEU & Precision & Recall.
    pub fn row(&self) -> String {
        format!(
            "{:.3} & {:.1} & {:.1} & {:.1}",
            self.edit_distance, self.bleu, self.precision, self.recall
        )
    }

    /// Aligned plain-text table with a header line.
    pub fn table(&self, label: &str) -> String {
        let width = label.len().max(5);
        format!(
            "{:<width$}  {:>9}  {:>6}  {:>9}  {:>6}  {:>7}\n{:<width$}  {:>9.3}  {:>6.1}  {:>9.1}  {:>6.1}  {:>7}\n",
            "Model", "Edit Dis.", "BLEU", "Precision", "Recall", "Samples",
            label, self.edit_distance, self.bleu, self.precision, self.recall, self.n_samples,
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.row())
    }
}

/// Macro-averages per-sample metrics. `truths` are `(sample_id, ground
/// truth)` pairs; every id must have a prediction.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    truths: &[(String, String)],
) -> Result<MetricsReport, MetricsError> {
    if truths.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    if let Some((id, _)) = truths.iter().find(|(id, _)| !predictions.contains_key(id)) {
        return Err(MetricsError::MissingPrediction(id.clone()));
    }
    let per_sample: Vec<SampleMetrics> = truths
        .par_iter()
        .map(|(id, truth)| score_sample(truth, &predictions[id]))
        .collect();
    let n = per_sample.len() as f64;
    let mut sum = SampleMetrics {
        edit_distance: 0.0,
        bleu: 0.0,
        precision: 0.0,
        recall: 0.0,
    };
    for m in &per_sample {
        sum.edit_distance += m.edit_distance;
        sum.bleu += m.bleu;
        sum.precision += m.precision;
        sum.recall += m.recall;
    }
    Ok(MetricsReport {
        edit_distance: sum.edit_distance / n,
        bleu: sum.bleu / n,
        precision: sum.precision / n,
        recall: sum.recall / n,
        n_samples: per_sample.len(),
    })
}

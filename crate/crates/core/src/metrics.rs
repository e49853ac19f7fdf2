//! Ranking accuracy, BLEU, ROUGE-L, answer length, and report tables.
//!
//! Text metrics tokenize with [`crate::textproc::tokenize`], so numbers are
//! not comparable with tools that tokenize differently.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::selector::RankedList;
use crate::textproc::tokenize;

/// Labels of one question's candidates in ranked order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEval {
    pub labels: Vec<Label>,
}

impl RankEval {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a ranked label list must not be empty".into()));
        }
        Ok(Self { labels })
    }

    pub fn from_ranked(list: &RankedList) -> Result<Self> {
        Self::new(list.entries.iter().map(|e| e.candidate.label).collect())
    }
}

pub fn hit_at_k(evals: &[RankEval], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if evals.is_empty() {
        return Err(Error::InvalidArgument("no questions to evaluate".into()));
    }
    let hits = evals
        .iter()
        .filter(|e| e.labels.iter().take(k).any(|l| l.is_correct()))
        .count();
    Ok(hits as f64 / evals.len() as f64)
}

/// Fraction of questions whose top-ranked candidate is correct.
pub fn precision_at_1(evals: &[RankEval]) -> Result<f64> {
    hit_at_k(evals, 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenEvalPair {
    pub hypothesis: String,
    pub references: Vec<String>,
}

impl GenEvalPair {
    pub fn new(hypothesis: impl Into<String>, references: Vec<String>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::InvalidArgument("a pair needs at least one reference".into()));
        }
        Ok(Self {
            hypothesis: hypothesis.into(),
            references,
        })
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights.
///
/// Hypothesis n-gram counts are clipped by their maximum count in any single
/// reference. The reference length is the one closest to the hypothesis
/// length (shorter on ties). An order with no matches uses
/// `(0 + 1) / (total + 1)`. An empty hypothesis side scores 0.
pub fn bleu(pairs: &[GenEvalPair], max_n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("BLEU needs a nonempty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for pair in pairs {
        if pair.references.is_empty() {
            return Err(Error::InvalidArgument("a pair needs at least one reference".into()));
        }
        let hyp = tokenize(&pair.hypothesis);
        let refs: Vec<Vec<String>> = pair.references.iter().map(|r| tokenize(r)).collect();
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
            .expect("nonempty references");
        for n in 1..=max_n {
            let hyp_counts = ngram_counts(&hyp, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &hyp_counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                matches[n - 1] += count.min(max_ref);
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..max_n)
        .map(|i| {
            let (m, t) = if matches[i] == 0 { (1, totals[i] + 1) } else { (matches[i], totals[i]) };
            (m as f64 / t as f64).ln()
        })
        .sum::<f64>()
        / max_n as f64;
    let bp = if hyp_len <= ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_precision.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_single(hyp: &[String], reference: &[String], beta: f64) -> RougeScore {
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    RougeScore {
        precision: p,
        recall: r,
        f: (1.0 + b2) * p * r / (r + b2 * p),
    }
}

/// ROUGE-L against the reference with the highest F (first on ties).
pub fn rouge_l(pair: &GenEvalPair, beta: f64) -> RougeScore {
    let hyp = tokenize(&pair.hypothesis);
    let mut best = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f: 0.0,
    };
    for (i, r) in pair.references.iter().enumerate() {
        let s = rouge_single(&hyp, &tokenize(r), beta);
        if i == 0 || s.f > best.f {
            best = s;
        }
    }
    best
}

/// Mean ROUGE-L F over a corpus.
pub fn corpus_rouge_l(pairs: &[GenEvalPair], beta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("ROUGE-L needs a nonempty corpus".into()));
    }
    Ok(pairs.iter().map(|p| rouge_l(p, beta).f).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
}

impl std::fmt::Display for LengthStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}±{:.1}", self.mean, self.std)
    }
}

/// Mean and population standard deviation of token counts.
pub fn length_stats<S: AsRef<str>>(answers: &[S]) -> Result<LengthStats> {
    if answers.is_empty() {
        return Err(Error::InvalidArgument("no answers to measure".into()));
    }
    let lens: Vec<f64> = answers.iter().map(|a| tokenize(a.as_ref()).len() as f64).collect();
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<f64>() / n;
    let var = lens.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(LengthStats { mean, std: var.sqrt() })
}

/// One row of the system comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub accuracy: Option<f64>,
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
}

/// One row of the selector-versus-generator table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub selector_accuracy: Option<f64>,
    pub selector_hit: Option<f64>,
    pub selector_length: Option<LengthStats>,
    pub genqa_accuracy: Option<f64>,
    pub genqa_length: Option<LengthStats>,
}

/// Everything a report shows; also its machine-readable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// System whose accuracy the others are compared against.
    pub baseline: Option<String>,
    pub systems: Vec<SystemRow>,
    /// The `k` of the selector's Hit@k column.
    pub hit_k: usize,
    pub datasets: Vec<DatasetRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.1}", 100.0 * x))
}

fn len_cell(v: Option<LengthStats>) -> String {
    v.map_or_else(|| "-".into(), |s| s.to_string())
}

fn render_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain(std::iter::once(header[c].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |out: &mut String, cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(out, header);
    let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        line(out, r);
    }
}

/// Accuracy (relative to the baseline when one is set), BLEU and ROUGE-L per
/// system, all in percent.
pub fn render_system_table(baseline: Option<&str>, systems: &[SystemRow]) -> String {
    let base_acc = baseline.and_then(|b| systems.iter().find(|s| s.system == b)).and_then(|s| s.accuracy);
    let header: Vec<String> = ["Model", "Accuracy", "Rel.", "BLEU", "ROUGE-L"].map(String::from).into();
    let rows: Vec<Vec<String>> = systems
        .iter()
        .map(|s| {
            let rel = if Some(s.system.as_str()) == baseline {
                "baseline".to_string()
            } else {
                match (s.accuracy, base_acc) {
                    (Some(a), Some(b)) if b > 0.0 => format!("{:+.1}%", 100.0 * (a - b) / b),
                    _ => "-".into(),
                }
            };
            vec![s.system.clone(), pct(s.accuracy), rel, pct(s.bleu), pct(s.rouge_l)]
        })
        .collect();
    let mut out = String::new();
    render_table(&mut out, &header, &rows);
    out
}

/// Selector accuracy, Hit@k and answer length beside generator accuracy and
/// length, one row per dataset.
pub fn render_dataset_table(hit_k: usize, datasets: &[DatasetRow]) -> String {
    let header: Vec<String> = vec![
        "Dataset".into(),
        "Sel. Acc.".into(),
        format!("Sel. Hit@{hit_k}"),
        "Sel. Length".into(),
        "GenQA Acc.".into(),
        "GenQA Length".into(),
    ];
    let rows: Vec<Vec<String>> = datasets
        .iter()
        .map(|d| {
            vec![
                d.dataset.clone(),
                pct(d.selector_accuracy),
                pct(d.selector_hit),
                len_cell(d.selector_length),
                pct(d.genqa_accuracy),
                len_cell(d.genqa_length),
            ]
        })
        .collect();
    let mut out = String::new();
    render_table(&mut out, &header, &rows);
    out
}

pub fn render_report(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Systems");
    out.push_str(&render_system_table(report.baseline.as_deref(), &report.systems));
    let _ = writeln!(out, "\nSelector vs. generator");
    out.push_str(&render_dataset_table(report.hit_k, &report.datasets));
    out
}

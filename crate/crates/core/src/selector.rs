//! Candidate scoring and ranking.
//!
//! A [`RankedList`] orders a question's candidates by descending score with
//! ties broken by original retrieval position; its first entry is the selected
//! answer and its prefixes are the top-k views consumed by answer generation.
//! Scores only need to be ordered, not calibrated.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Candidate, CandidateSet, Dataset, Question};
use crate::error::{Error, Result};
use crate::textproc::tokenize;

/// Inverse document frequencies over candidate sentences:
/// `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    num_docs: usize,
}

impl IdfTable {
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.weights
            .get(token)
            .copied()
            .unwrap_or_else(|| smooth_idf(self.num_docs, 0))
    }

    /// Table assigning weight 1 to every token.
    pub fn uniform() -> Self {
        Self {
            weights: HashMap::new(),
            num_docs: 0,
        }
    }
}

fn smooth_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn build_idf(dataset: &Dataset) -> Result<IdfTable> {
    let texts: Vec<&str> = dataset
        .entries
        .iter()
        .flat_map(|e| e.candidates.iter().map(|c| c.text.as_str()))
        .collect();
    if texts.is_empty() {
        return Err(Error::InvalidArgument("cannot build idf from an empty dataset".into()));
    }
    Ok(idf_from_texts(texts))
}

/// Document frequencies over arbitrary sentences, one document each.
pub fn idf_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> IdfTable {
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut n = 0;
    for text in texts {
        n += 1;
        let unique: HashSet<String> = tokenize(text).into_iter().collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    let weights = df.into_iter().map(|(t, d)| (t, smooth_idf(n, d))).collect();
    IdfTable { weights, num_docs: n }
}

fn weighted_counts(text: &str, idf: &IdfTable) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_default() += 1.0;
    }
    for (tok, v) in counts.iter_mut() {
        *v *= idf.idf(tok);
    }
    counts
}

/// Cosine similarity of idf-weighted token-count vectors, in `[0, 1]`.
pub fn score_lexical(q: &Question, c: &Candidate, idf: &IdfTable) -> f64 {
    cosine_text(&q.text, &c.text, idf)
}

pub fn cosine_text(a: &str, b: &str, idf: &IdfTable) -> f64 {
    let va = weighted_counts(a, idf);
    let vb = weighted_counts(b, idf);
    if va.is_empty() || vb.is_empty() {
        return 0.0;
    }
    let dot: f64 = va
        .iter()
        .filter_map(|(t, x)| vb.get(t).map(|y| x * y))
        .sum();
    let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Scores one candidate for one question. Implementations must be pure.
pub trait Scorer {
    fn score(&self, question: &Question, candidate: &Candidate) -> f64;
}

/// Idf-weighted cosine baseline.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    pub idf: IdfTable,
}

impl LexicalScorer {
    pub fn new(idf: IdfTable) -> Self {
        Self { idf }
    }
}

impl Scorer for LexicalScorer {
    fn score(&self, question: &Question, candidate: &Candidate) -> f64 {
        score_lexical(question, candidate, &self.idf)
    }
}

impl<F: Fn(&Question, &Candidate) -> f64> Scorer for F {
    fn score(&self, question: &Question, candidate: &Candidate) -> f64 {
        self(question, candidate)
    }
}

/// Where ranking scores come from.
#[derive(Clone, Copy)]
pub enum ScoreSource<'a> {
    Scorer(&'a dyn Scorer),
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub score: f64,
    /// Position in the retrieval-ordered candidate list.
    pub original_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub question: Question,
    pub entries: Vec<ScoredCandidate>,
}

impl RankedList {
    /// The argmax candidate.
    pub fn best(&self) -> Option<&Candidate> {
        self.entries.first().map(|e| &e.candidate)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn rank(q: &Question, cset: &CandidateSet, source: ScoreSource<'_>) -> Result<RankedList> {
    let mut entries = Vec::with_capacity(cset.candidates.len());
    for (i, c) in cset.candidates.iter().enumerate() {
        let score = match source {
            ScoreSource::Scorer(s) => s.score(q, c),
            ScoreSource::External => c.external_score.ok_or_else(|| {
                Error::Data(format!(
                    "question {:?}, candidate {:?}: missing external score",
                    q.id, c.id
                ))
            })?,
        };
        if !score.is_finite() {
            return Err(Error::Data(format!(
                "question {:?}, candidate {:?}: score {score} is not finite",
                q.id, c.id
            )));
        }
        entries.push(ScoredCandidate {
            candidate: c.clone(),
            score,
            original_index: i,
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.original_index.cmp(&b.original_index))
    });
    Ok(RankedList {
        question: q.clone(),
        entries,
    })
}

/// The first `min(k, n)` candidates of `ranked`.
pub fn top_k(ranked: &RankedList, k: usize) -> Result<Vec<Candidate>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(ranked
        .entries
        .iter()
        .take(k)
        .map(|e| e.candidate.clone())
        .collect())
}

/// Reads `qid<TAB>cid<TAB>score` rows and sets the matching candidates'
/// external scores.
pub fn import_scores(dataset: &Dataset, scorefile: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(scorefile)?;
    let mut out = dataset.clone();
    let index: HashMap<&str, usize> = dataset
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.question.id.as_str(), i))
        .collect();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let record_err = |line: usize, message: String| Error::Record {
        path: scorefile.to_path_buf(),
        line,
        message,
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [qid, cid, score] = fields[..] else {
            return Err(record_err(lineno, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| record_err(lineno, format!("bad score {score:?}: {e}")))?;
        if !score.is_finite() {
            return Err(record_err(lineno, format!("score for ({qid}, {cid}) is not finite")));
        }
        let entry = index
            .get(qid)
            .map(|&i| &mut out.entries[i])
            .ok_or_else(|| record_err(lineno, format!("unknown pair ({qid}, {cid}): no such question")))?;
        let cand = entry
            .candidates
            .iter_mut()
            .find(|c| c.id == cid)
            .ok_or_else(|| record_err(lineno, format!("unknown pair ({qid}, {cid}): no such candidate")))?;
        if !seen.insert((qid.to_string(), cid.to_string())) {
            return Err(record_err(lineno, format!("duplicate row for ({qid}, {cid})")));
        }
        cand.external_score = Some(score);
    }
    Ok(out)
}

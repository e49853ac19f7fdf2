//! Builds generator inputs and supervised examples from ranked candidates.
//!
//! A source text is the question on its first line followed by the top-k
//! candidates, one per line, in ranked order. For training, the target is the
//! human reference answer when there is one. Otherwise a correct candidate from
//! the top k is drawn at random, removed from the source, and the best-ranked
//! candidate below the top k takes its place.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::{CandidateSet, Dataset, Question};
use crate::error::{Error, Result};
use crate::selector::{build_idf, rank, LexicalScorer, RankedList, ScoreSource};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Reference,
    Candidate(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Reference => f.write_str("reference"),
            Provenance::Candidate(cid) => write!(f, "candidate:{cid}"),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.strip_prefix("candidate:") {
            Some(cid) => Ok(Provenance::Candidate(cid.to_string())),
            None if s == "reference" => Ok(Provenance::Reference),
            None => Err(serde::de::Error::custom(format!("unknown provenance {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    #[serde(rename = "qid")]
    pub question_id: String,
    #[serde(rename = "source")]
    pub source_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    #[serde(rename = "provenance")]
    pub target_provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenInput {
    pub question_id: String,
    pub source_text: String,
    /// Number of candidate lines in `source_text`.
    pub k_used: usize,
}

/// Newlines inside a sentence would be read as candidate boundaries.
fn one_line(text: &str) -> String {
    if text.contains('\n') {
        text.replace('\n', " ")
    } else {
        text.to_string()
    }
}

fn join_source<'a>(question: &str, lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut source = one_line(question);
    for line in lines {
        source.push('\n');
        source.push_str(&one_line(line));
    }
    source
}

pub fn build_inference_input(q: &Question, ranked: &RankedList, k: usize) -> Result<GenInput> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "question {:?}: ranked list is empty",
            q.id
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let top: Vec<&str> = ranked
        .entries
        .iter()
        .take(k)
        .map(|e| e.candidate.text.as_str())
        .collect();
    Ok(GenInput {
        question_id: q.id.clone(),
        k_used: top.len(),
        source_text: join_source(&q.text, top),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Built {
    Example(TrainingExample),
    Skip(SkipReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoCorrectInTopK,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoCorrectInTopK => f.write_str("no reference answer and no correct candidate in the top k"),
        }
    }
}

pub fn build_training_example<R: Rng + ?Sized>(
    cset: &CandidateSet,
    ranked: &RankedList,
    k: usize,
    rng: &mut R,
) -> Result<Built> {
    if let Some(reference) = &cset.reference_answer {
        let input = build_inference_input(&cset.question, ranked, k)?;
        return Ok(Built::Example(TrainingExample {
            question_id: cset.question.id.clone(),
            source_text: input.source_text,
            target_text: reference.clone(),
            target_provenance: Provenance::Reference,
        }));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }

    let top = &ranked.entries[..k.min(ranked.len())];
    let pool: Vec<usize> = (0..top.len())
        .filter(|&i| top[i].candidate.label.is_correct())
        .collect();
    if pool.is_empty() {
        return Ok(Built::Skip(SkipReason::NoCorrectInTopK));
    }
    let chosen = &top[pool[rng.random_range(0..pool.len())]].candidate;
    let target_line = one_line(&chosen.text);

    // Lines equal to the target are dropped too, so a duplicated sentence
    // cannot leak the answer back into the source.
    let lines: Vec<&str> = ranked
        .entries
        .iter()
        .map(|e| e.candidate.text.as_str())
        .filter(|text| one_line(text) != target_line)
        .take(k)
        .collect();

    Ok(Built::Example(TrainingExample {
        question_id: cset.question.id.clone(),
        source_text: join_source(&cset.question.text, lines),
        target_text: chosen.text.clone(),
        target_provenance: Provenance::Candidate(chosen.id.clone()),
    }))
}

/// Ranking used when building a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerConfig {
    Lexical,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub qid: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltCorpus {
    pub examples: Vec<TrainingExample>,
    pub skipped: Vec<Skipped>,
}

/// Seed for one entry's random draw, independent of processing order.
pub fn entry_rng(seed: u64, question_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(bytes)
}

/// Ranks every entry with `scorer` and returns the ranked lists in dataset
/// order.
pub fn rank_dataset(dataset: &Dataset, scorer: ScorerConfig) -> Result<Vec<RankedList>> {
    let lexical = match scorer {
        ScorerConfig::Lexical if !dataset.entries.is_empty() => Some(LexicalScorer::new(build_idf(dataset)?)),
        _ => None,
    };
    dataset
        .entries
        .iter()
        .map(|cset| {
            let source = match &lexical {
                Some(s) => ScoreSource::Scorer(s),
                None => ScoreSource::External,
            };
            rank(&cset.question, cset, source)
        })
        .collect()
}

pub fn build_corpus(dataset: &Dataset, scorer: ScorerConfig, k: usize, seed: u64) -> Result<BuiltCorpus> {
    let ranked = rank_dataset(dataset, scorer)?;
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (cset, ranked) in dataset.entries.iter().zip(&ranked) {
        let mut rng = entry_rng(seed, &cset.question.id);
        match build_training_example(cset, ranked, k, &mut rng)? {
            Built::Example(ex) => examples.push(ex),
            Built::Skip(reason) => skipped.push(Skipped {
                qid: cset.question.id.clone(),
                reason,
            }),
        }
    }
    Ok(BuiltCorpus { examples, skipped })
}

pub fn write_examples(examples: &[TrainingExample], path: &Path) -> Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let reader = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("malformed example: {e}"),
        })?);
    }
    Ok(out)
}

//! QA dataset model and the line-delimited AS2 record format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"qid": "...", "question": "...", "reference": null,
//!  "candidates": [{"cid": "...", "text": "...", "label": 1, "score": null}]}
//! ```
//!
//! Labels are `1` (correct), `0` (incorrect) and `-1` (unknown). Text is kept
//! exactly as read; normalization happens in [`crate::textproc`].

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Correct,
    Incorrect,
    Unknown,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Correct => 1,
            Label::Incorrect => 0,
            Label::Unknown => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Label::Correct),
            0 => Some(Label::Incorrect),
            -1 => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Label::from_i8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 1, 0 or -1, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "cid")]
    pub id: String,
    pub text: String,
    pub label: Label,
    #[serde(rename = "score")]
    pub external_score: Option<f64>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            external_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub question: Question,
    /// Retrieval order.
    pub candidates: Vec<Candidate>,
    /// Human-composed answer, when the dataset has one.
    pub reference_answer: Option<String>,
}

impl CandidateSet {
    pub fn has_correct(&self) -> bool {
        self.candidates.iter().any(|c| c.label.is_correct())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guesses the split from a file stem such as `wikiqa_dev`; defaults to
    /// `Test` when nothing matches.
    pub fn infer(stem: &str) -> Self {
        let stem = stem.to_lowercase();
        if stem.contains("train") {
            Split::Train
        } else if stem.contains("dev") || stem.contains("valid") {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub entries: Vec<CandidateSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    As2Jsonl,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    qid: String,
    question: String,
    reference: Option<String>,
    candidates: Vec<Candidate>,
}

impl From<&CandidateSet> for Record {
    fn from(c: &CandidateSet) -> Self {
        Record {
            qid: c.question.id.clone(),
            question: c.question.text.clone(),
            reference: c.reference_answer.clone(),
            candidates: c.candidates.clone(),
        }
    }
}

impl From<Record> for CandidateSet {
    fn from(r: Record) -> Self {
        CandidateSet {
            question: Question {
                id: r.qid,
                text: r.question,
            },
            candidates: r.candidates,
            reference_answer: r.reference,
        }
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let Format::As2Jsonl = format;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = io::BufReader::new(fs::File::open(path)?);
    let record_err = |line: usize, message: String| Error::Record {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| record_err(lineno, format!("malformed record: {e}")))?;
        if !seen.insert(record.qid.clone()) {
            return Err(record_err(lineno, format!("duplicate question id {:?}", record.qid)));
        }
        let cset = CandidateSet::from(record);
        if let Some(v) = entry_violations(&cset).into_iter().next() {
            return Err(record_err(lineno, v.message));
        }
        entries.push(cset);
    }
    Ok(Dataset {
        name: stem.clone(),
        split: Split::infer(&stem),
        entries,
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for entry in &dataset.entries {
        let line = serde_json::to_string(&Record::from(entry))
            .map_err(|e| Error::Data(format!("question {}: {e}", entry.question.id)))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub question_id: String,
    pub candidate_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.candidate_id {
            Some(cid) => write!(f, "question {:?}, candidate {cid:?}: {}", self.question_id, self.message),
            None => write!(f, "question {:?}: {}", self.question_id, self.message),
        }
    }
}

/// Invariant violations are errors; advisories flag entries that are valid
/// but limited in use.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub advisories: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const UNUSABLE_FOR_TARGETS: &str = "unusable for supervised target selection";

fn entry_violations(cset: &CandidateSet) -> Vec<Violation> {
    let qid = &cset.question.id;
    let mut out = Vec::new();
    let v = |cid: Option<&str>, message: &str| Violation {
        question_id: qid.clone(),
        candidate_id: cid.map(str::to_string),
        message: message.to_string(),
    };
    if cset.question.text.trim().is_empty() {
        out.push(v(None, "question text is empty"));
    }
    if cset.candidates.is_empty() {
        out.push(v(None, "candidate list is empty"));
    }
    let mut ids = HashSet::new();
    for c in &cset.candidates {
        if !ids.insert(c.id.as_str()) {
            out.push(v(Some(&c.id), "duplicate candidate id"));
        }
        if c.text.trim().is_empty() {
            out.push(v(Some(&c.id), "candidate text is empty"));
        }
        if c.external_score.is_some_and(|s| !s.is_finite()) {
            out.push(v(Some(&c.id), "external score is not finite"));
        }
    }
    out
}

pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut qids = HashSet::new();
    for cset in &dataset.entries {
        let qid = &cset.question.id;
        if !qids.insert(qid.as_str()) {
            report.violations.push(Violation {
                question_id: qid.clone(),
                candidate_id: None,
                message: "duplicate question id".into(),
            });
        }
        report.violations.extend(entry_violations(cset));
        let all_unknown = !cset.candidates.is_empty()
            && cset.candidates.iter().all(|c| c.label == Label::Unknown);
        if cset.reference_answer.is_none() && (all_unknown || !cset.has_correct()) {
            report.advisories.push(Violation {
                question_id: qid.clone(),
                candidate_id: None,
                message: UNUSABLE_FOR_TARGETS.into(),
            });
        }
    }
    report
}

//! Small built-in inputs used by tests, the CLI and the browser demo.

use crate::corpus::{Candidate, CandidateSet, Label, Question};

pub const WATER_PUMP_QUESTION: &str = "How a water pump works?";

/// Answer candidates for [`WATER_PUMP_QUESTION`], in ranked order.
pub const WATER_PUMP_CANDIDATES: [&str; 5] = [
    "A small, electrically powered pump.",
    "A large, electrically driven pump (electropump) for waterworks near the Hengsteysee, Germany.",
    "A pump is a device that moves fluids (liquids or gases), or sometimes slurries, by mechanical action.",
    "Pumps can be classified into three major groups according to the method they use to move the fluid: direct lift, displacement, and gravity pumps.",
    "Pumps operate by some mechanism (typically reciprocating or rotary), and consume energy to perform mechanical work by moving the fluid.",
];

/// A concise answer composed from the candidates above.
pub const WATER_PUMP_ANSWER: &str = "A water pump is a device that moves fluids by mechanical action.";

/// The water-pump question with unlabeled candidates whose external scores
/// reproduce the listed order.
pub fn water_pump() -> CandidateSet {
    CandidateSet {
        question: Question {
            id: "wp".into(),
            text: WATER_PUMP_QUESTION.into(),
        },
        candidates: WATER_PUMP_CANDIDATES
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate {
                id: format!("c{}", i + 1),
                text: (*t).into(),
                label: Label::Unknown,
                external_score: Some(1.0 - 0.1 * i as f64),
            })
            .collect(),
        reference_answer: None,
    }
}

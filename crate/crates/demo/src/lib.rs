//! Browser demo: candidate ranking, answer metrics and a beam search explorer.
//!
//! Each operation has a plain Rust function returning a serializable result
//! and a `#[wasm_bindgen]` wrapper returning JSON.

use genqa_core::corpus::{Candidate, CandidateSet, Label, Question};
use genqa_core::decode::{beam_search, greedy, log_softmax, DecodeConfig, Hypothesis};
use genqa_core::fixtures::{WATER_PUMP_CANDIDATES, WATER_PUMP_QUESTION};
use genqa_core::genbuild::build_inference_input;
use genqa_core::metrics::{bleu, rouge_l, GenEvalPair};
use genqa_core::selector::{idf_from_texts, rank, LexicalScorer, ScoreSource};
use genqa_core::seq2seq::{forward, init_model, ModelConfig, ModelParams};
use genqa_core::textproc::{TokenId, BOS, EOS};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const TOY_VOCAB: usize = 4;
pub const MAX_EXPLORER_LEN: usize = 6;

#[derive(Debug, Serialize)]
pub struct RankedCandidate {
    pub position: usize,
    pub original_index: usize,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct RankResult {
    pub ranking: Vec<RankedCandidate>,
    pub source_text: String,
    pub k_used: usize,
}

#[derive(Debug, Serialize)]
pub struct MetricResult {
    pub bleu: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub rouge_l_f: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Decoded {
    pub ids: Vec<TokenId>,
    pub log_score: f64,
}

#[derive(Debug, Serialize)]
pub struct ExploreResult {
    pub source: Vec<TokenId>,
    pub beam: Decoded,
    pub greedy: Decoded,
    pub exhaustive: Decoded,
    pub sequences_scored: usize,
    pub beam_is_exact: bool,
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Ranks newline-separated candidates against `question` by idf-weighted
/// cosine and builds the generator input from the top `k`. Empty inputs
/// fall back to the water-pump example.
pub fn rank_candidates(question: &str, candidates: &str, k: usize) -> Result<RankResult, String> {
    let question = match question.trim() {
        "" => WATER_PUMP_QUESTION.to_string(),
        q => q.to_string(),
    };
    let mut texts = lines(candidates);
    if texts.is_empty() {
        texts = WATER_PUMP_CANDIDATES.iter().map(|s| s.to_string()).collect();
    }
    let q = Question {
        id: "demo".into(),
        text: question,
    };
    let cset = CandidateSet {
        question: q.clone(),
        candidates: texts
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate {
                id: format!("c{}", i + 1),
                text: t.clone(),
                label: Label::Unknown,
                external_score: None,
            })
            .collect(),
        reference_answer: None,
    };
    let idf = idf_from_texts(texts.iter().map(String::as_str).chain([q.text.as_str()]));
    let scorer = LexicalScorer::new(idf);
    let ranked = rank(&q, &cset, ScoreSource::Scorer(&scorer)).map_err(|e| e.to_string())?;
    let input = build_inference_input(&q, &ranked, k).map_err(|e| e.to_string())?;
    Ok(RankResult {
        ranking: ranked
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| RankedCandidate {
                position: i + 1,
                original_index: e.original_index,
                score: e.score,
                text: e.candidate.text.clone(),
            })
            .collect(),
        source_text: input.source_text,
        k_used: input.k_used,
    })
}

/// Sentence BLEU-4 and ROUGE-L of `hypothesis` against newline-separated
/// references.
pub fn score_answer(hypothesis: &str, references: &str) -> Result<MetricResult, String> {
    let pair = GenEvalPair::new(hypothesis, lines(references)).map_err(|e| e.to_string())?;
    let b = bleu(std::slice::from_ref(&pair), 4).map_err(|e| e.to_string())?;
    let r = rouge_l(&pair, 1.0);
    Ok(MetricResult {
        bleu: b,
        rouge_l_precision: r.precision,
        rouge_l_recall: r.recall,
        rouge_l_f: r.f,
    })
}

/// Untrained four-token model with a sharpened output layer and a penalty
/// on the EOS logit.
pub fn toy_model(seed: u64, max_len: usize, sharpness: f64, eos_penalty: f64) -> Result<ModelParams, String> {
    let config = ModelConfig {
        vocab_size: TOY_VOCAB,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_source_len: 8,
        max_target_len: max_len.max(2),
        dropout: 0.0,
    };
    let mut params = init_model(&config, seed).map_err(|e| e.to_string())?;
    for t in &mut params.tensors {
        match t.name.as_str() {
            "out.w" => t.value.data.iter_mut().for_each(|x| *x *= sharpness),
            "out.b" => t.value.data[EOS as usize] -= eos_penalty,
            _ => {}
        }
    }
    Ok(params)
}

/// Best EOS-terminated sequence by enumeration, with the number of complete
/// sequences scored.
pub fn exhaustive_search(params: &ModelParams, source: &[TokenId], max_len: usize) -> Result<(Decoded, usize), String> {
    let v = params.config.vocab_size as TokenId;
    let mut best: Option<Decoded> = None;
    let mut scored = 0;
    let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for t in 0..v {
                let mut seq = prefix.clone();
                seq.push(t);
                if t != EOS {
                    next.push(seq);
                    continue;
                }
                let mut input = vec![BOS];
                input.extend(prefix);
                let logits = forward(params, source, &input).map_err(|e| e.to_string())?;
                let log_score: f64 = seq.iter().enumerate().map(|(i, &id)| log_softmax(logits.row(i))[id as usize]).sum();
                scored += 1;
                let better = match &best {
                    None => true,
                    Some(b) => log_score > b.log_score || (log_score == b.log_score && seq < b.ids),
                };
                if better {
                    best = Some(Decoded { ids: seq, log_score });
                }
            }
        }
        frontier = next;
    }
    best.map(|b| (b, scored)).ok_or_else(|| "max_len must be at least 1".to_string())
}

fn decoded(h: Hypothesis) -> Decoded {
    Decoded {
        ids: h.ids,
        log_score: h.log_score,
    }
}

/// Parses ids 0..=3 separated by spaces or commas.
pub fn parse_source(text: &str) -> Result<Vec<TokenId>, String> {
    let ids = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<TokenId>() {
            Ok(id) if (id as usize) < TOY_VOCAB => Ok(id),
            _ => Err(format!("source id {s:?} is not in 0..{TOY_VOCAB}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ids.is_empty() || ids.len() > 8 {
        return Err("source needs 1 to 8 ids".into());
    }
    Ok(ids)
}

/// Beam search, greedy decoding and exhaustive search on one toy model.
pub fn explore(
    seed: u64,
    source: &str,
    beam_size: usize,
    max_len: usize,
    sharpness: f64,
    eos_penalty: f64,
) -> Result<ExploreResult, String> {
    if !(1..=MAX_EXPLORER_LEN).contains(&max_len) {
        return Err(format!("max_len must be in 1..={MAX_EXPLORER_LEN}"));
    }
    let source = parse_source(source)?;
    let params = toy_model(seed, max_len, sharpness, eos_penalty)?;
    let cfg = DecodeConfig { beam_size, max_len };
    let beam = decoded(beam_search(&params, &source, &cfg).map_err(|e| e.to_string())?);
    let greedy = decoded(greedy(&params, &source, max_len).map_err(|e| e.to_string())?);
    let (exhaustive, sequences_scored) = exhaustive_search(&params, &source, max_len)?;
    Ok(ExploreResult {
        beam_is_exact: beam.ids == exhaustive.ids,
        source,
        beam,
        greedy,
        exhaustive,
        sequences_scored,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())))
}

#[wasm_bindgen(js_name = rankCandidates)]
pub fn rank_candidates_js(question: &str, candidates: &str, k: usize) -> Result<String, JsError> {
    to_js(rank_candidates(question, candidates, k))
}

#[wasm_bindgen(js_name = scoreAnswer)]
pub fn score_answer_js(hypothesis: &str, references: &str) -> Result<String, JsError> {
    to_js(score_answer(hypothesis, references))
}

#[wasm_bindgen(js_name = exploreBeam)]
pub fn explore_js(
    seed: u32,
    source: &str,
    beam_size: usize,
    max_len: usize,
    sharpness: f64,
    eos_penalty: f64,
) -> Result<String, JsError> {
    to_js(explore(seed as u64, source, beam_size, max_len, sharpness, eos_penalty))
}

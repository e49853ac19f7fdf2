//! Greedy and beam-search decoding.
//!
//! Scores are raw summed log-probabilities with no length normalization.
//! Hypotheses end at EOS or at `max_len` tokens; beam search returns the best
//! finished hypothesis, or the best unfinished one when none finished. Equal
//! scores are broken in favour of the lexicographically smaller id sequence.

use std::cmp::Ordering;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CandidateSet;
use crate::error::{Error, Result};
use crate::genbuild::build_inference_input;
use crate::selector::{rank, ScoreSource};
use crate::seq2seq::{Decoder, DecoderState, ModelParams};
use crate::textproc::{truncate, TokenId, Vocab, EOS, PAD};

pub const DEFAULT_BEAM_SIZE: usize = 4;
pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Next-token distributions of an autoregressive model.
pub trait StepModel {
    /// Everything the model needs to remember about a prefix.
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn eos(&self) -> TokenId {
        EOS
    }

    /// State for the empty generated prefix.
    fn start(&self) -> Self::State;

    /// Log-probabilities of every next token.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, including the final EOS when finished.
    pub ids: Vec<TokenId>,
    pub log_score: f64,
}

impl Hypothesis {
    pub fn is_finished(&self, eos: TokenId) -> bool {
        self.ids.last() == Some(&eos)
    }
}

/// Best-first order: higher score, then smaller id sequence.
pub fn hypothesis_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_score.total_cmp(&a.log_score).then_with(|| a.ids.cmp(&b.ids))
}

fn check_config(cfg: &DecodeConfig) -> Result<()> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidArgument("beam_size and max_len must be at least 1".into()));
    }
    Ok(())
}

pub fn beam_search_with<M: StepModel + ?Sized>(model: &M, cfg: &DecodeConfig) -> Result<Hypothesis> {
    check_config(cfg)?;
    let eos = model.eos();
    let mut alive = vec![(
        Hypothesis {
            ids: Vec::new(),
            log_score: 0.0,
        },
        model.start(),
    )];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        if alive.is_empty() {
            break;
        }
        // Scores only fall as hypotheses grow, so nothing alive can overtake
        // a finished hypothesis that already scores higher.
        let best_alive = alive.iter().map(|(h, _)| h.log_score).fold(f64::NEG_INFINITY, f64::max);
        if finished.iter().any(|f| f.log_score > best_alive) {
            break;
        }
        let mut expansions = Vec::with_capacity(alive.len() * model.vocab_size());
        for (parent, (h, state)) in alive.iter().enumerate() {
            for (t, l) in model.log_probs(state).into_iter().enumerate() {
                let mut ids = h.ids.clone();
                ids.push(t as TokenId);
                let hyp = Hypothesis {
                    ids,
                    log_score: h.log_score + l,
                };
                expansions.push((hyp, parent));
            }
        }
        expansions.sort_by(|a, b| hypothesis_order(&a.0, &b.0));
        expansions.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(expansions.len());
        for (h, parent) in expansions {
            if h.is_finished(eos) {
                finished.push(h);
            } else if h.ids.len() < cfg.max_len {
                let state = model.advance(&alive[parent].1, *h.ids.last().expect("nonempty"));
                next.push((h, state));
            } else {
                // Length limit reached: keep the hypothesis without a state.
                next.push((h, alive[parent].1.clone()));
            }
        }
        alive = next;
    }

    let pool = if finished.is_empty() {
        alive.into_iter().map(|(h, _)| h).collect()
    } else {
        finished
    };
    Ok(pool
        .into_iter()
        .min_by(hypothesis_order)
        .expect("beam search keeps at least one hypothesis"))
}

pub fn greedy_with<M: StepModel + ?Sized>(model: &M, max_len: usize) -> Result<Hypothesis> {
    check_config(&DecodeConfig { beam_size: 1, max_len })?;
    let eos = model.eos();
    let mut h = Hypothesis {
        ids: Vec::new(),
        log_score: 0.0,
    };
    let mut state = model.start();
    loop {
        let lp = model.log_probs(&state);
        // First maximum wins, i.e. the smallest id among ties.
        let (best, l) = lp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (t, &l)| if l > acc.1 { (t, l) } else { acc });
        h.ids.push(best as TokenId);
        h.log_score += l;
        if h.ids.len() >= max_len || h.is_finished(eos) {
            return Ok(h);
        }
        state = model.advance(&state, best as TokenId);
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl StepModel for Decoder<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn start(&self) -> DecoderState {
        Decoder::start(self)
    }

    fn log_probs(&self, state: &DecoderState) -> Vec<f64> {
        log_softmax(state.logits())
    }

    fn advance(&self, state: &DecoderState, token: TokenId) -> DecoderState {
        self.step(state, token)
    }
}

fn check_len(params: &ModelParams, max_len: usize) -> Result<()> {
    if max_len > params.config.max_target_len {
        return Err(Error::InvalidArgument(format!(
            "max_len {max_len} exceeds the model's target length {}",
            params.config.max_target_len
        )));
    }
    Ok(())
}

pub fn beam_search(params: &ModelParams, source: &[TokenId], cfg: &DecodeConfig) -> Result<Hypothesis> {
    check_len(params, cfg.max_len)?;
    beam_search_with(&Decoder::new(params, source)?, cfg)
}

pub fn greedy(params: &ModelParams, source: &[TokenId], max_len: usize) -> Result<Hypothesis> {
    check_len(params, max_len)?;
    greedy_with(&Decoder::new(params, source)?, max_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAnswer {
    pub question_id: String,
    pub ids: Vec<TokenId>,
    pub text: String,
    pub log_score: f64,
}

/// Encodes a source text for the model: tokenized, truncated to
/// `min(limit, max_source_len)`, never empty.
pub fn encode_source(params: &ModelParams, vocab: &Vocab, source_text: &str, limit: usize) -> Vec<TokenId> {
    let mut ids = truncate(&vocab.encode(source_text), limit.min(params.config.max_source_len));
    if ids.is_empty() {
        ids.push(PAD);
    }
    ids
}

/// Rank, keep the top `k`, build the source text, encode, truncate and
/// beam-search an answer.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocab,
    cset: &CandidateSet,
    scores: ScoreSource<'_>,
    k: usize,
    cfg: &DecodeConfig,
    source_limit: usize,
) -> Result<GeneratedAnswer> {
    if cset.candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "question {:?} has no candidates",
            cset.question.id
        )));
    }
    let ranked = rank(&cset.question, cset, scores)?;
    let input = build_inference_input(&cset.question, &ranked, k)?;
    let source = encode_source(params, vocab, &input.source_text, source_limit);
    let hyp = beam_search(params, &source, cfg)?;
    Ok(GeneratedAnswer {
        question_id: cset.question.id.clone(),
        text: vocab.decode(&hyp.ids),
        ids: hyp.ids,
        log_score: hyp.log_score,
    })
}

/// One system answer per line of an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub qid: String,
    pub answer: String,
    pub log_score: Option<f64>,
    pub system: String,
}

impl From<&GeneratedAnswer> for OutputRecord {
    fn from(a: &GeneratedAnswer) -> Self {
        Self {
            qid: a.question_id.clone(),
            answer: a.text.clone(),
            log_score: Some(a.log_score),
            system: "genqa".into(),
        }
    }
}

pub fn write_outputs(records: &[OutputRecord], path: &Path) -> Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_outputs(path: &Path) -> Result<Vec<OutputRecord>> {
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
            message: format!("malformed output record: {e}"),
        })?);
    }
    Ok(out)
}

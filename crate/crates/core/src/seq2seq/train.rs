//! Loss, gradients, SGD training and multi-dataset schedules.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{check_ids, teacher_gold, teacher_input, DropoutCtx, ModelConfig, ModelParams, Net};
use super::tensor::{Graph, Mat};
use crate::error::{Error, Result};
use crate::genbuild::TrainingExample;
use crate::textproc::{truncate, TokenId, Vocab, PAD};

/// Fine-tuning rate used with the T5-based generator.
pub const UQA_T5_LEARNING_RATE: f64 = 5e-5;
/// Fine-tuning rate used with the BART-based generator.
pub const BART_LEARNING_RATE: f64 = 5e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrPreset {
    UqaT5,
    Bart,
    Custom(f64),
}

impl LrPreset {
    pub fn rate(self) -> f64 {
        match self {
            LrPreset::UqaT5 => UQA_T5_LEARNING_RATE,
            LrPreset::Bart => BART_LEARNING_RATE,
            LrPreset::Custom(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: LrPreset,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.preset.rate()
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy over rows whose gold id is not PAD.
pub fn loss(logits: &Mat, gold: &[TokenId]) -> Result<f64> {
    if logits.rows != gold.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} gold ids",
            logits.rows,
            gold.len()
        )));
    }
    if let Some(&g) = gold.iter().find(|&&g| g as usize >= logits.cols) {
        return Err(Error::Shape(format!("gold id {g} outside {} logits", logits.cols)));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, &g) in gold.iter().enumerate() {
        if g == PAD {
            continue;
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[g as usize];
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One tokenized training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl EncodedExample {
    /// Encodes and truncates to the model limits: the source to
    /// `max_source_len`, the target so that target plus EOS fits the decoder.
    pub fn from_example(ex: &TrainingExample, vocab: &Vocab, config: &ModelConfig) -> Self {
        let mut source = truncate(&vocab.encode(&ex.source_text), config.max_source_len);
        if source.is_empty() {
            source.push(PAD);
        }
        let target = truncate(&vocab.encode(&ex.target_text), config.max_target_len - 1);
        Self { source, target }
    }
}

pub fn encode_examples(examples: &[TrainingExample], vocab: &Vocab, config: &ModelConfig) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|e| EncodedExample::from_example(e, vocab, config))
        .collect()
}

/// A mini-batch padded to the longest source and target it contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<TokenId>>,
    pub decoder_inputs: Vec<Vec<TokenId>>,
    pub golds: Vec<Vec<TokenId>>,
}

impl Batch {
    pub fn pad(examples: &[&EncodedExample]) -> Self {
        let src_len = examples.iter().map(|e| e.source.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.target.len() + 1).max().unwrap_or(0);
        let pad_to = |mut v: Vec<TokenId>, n: usize| {
            v.resize(n, PAD);
            v
        };
        Self {
            sources: examples.iter().map(|e| pad_to(e.source.clone(), src_len)).collect(),
            decoder_inputs: examples
                .iter()
                .map(|e| pad_to(teacher_input(&e.target), tgt_len))
                .collect(),
            golds: examples
                .iter()
                .map(|e| pad_to(teacher_gold(&e.target), tgt_len))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Gradients, one matrix per parameter tensor.
pub type Gradients = Vec<Mat>;

/// Mean batch loss over non-PAD gold positions and its gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, Gradients)> {
    loss_and_grad_with(params, batch, None)
}

fn loss_and_grad_with(params: &ModelParams, batch: &Batch, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let tokens: usize = batch
        .golds
        .iter()
        .map(|g| g.iter().filter(|&&t| t != PAD).count())
        .sum();
    let mut grads: Gradients = params
        .tensors
        .iter()
        .map(|t| Mat::zeros(t.value.rows, t.value.cols))
        .collect();
    if tokens == 0 {
        return Ok((0.0, grads));
    }
    let norm = 1.0 / tokens as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (src, input, gold) = (&batch.sources[i], &batch.decoder_inputs[i], &batch.golds[i]);
        check_ids(&params.config, src, input)?;
        let mut g = Graph::new();
        let dropout = dropout_rng.as_deref_mut().map(|rng| DropoutCtx {
            rate: params.config.dropout,
            rng,
        });
        let mut net = Net::new(&mut g, params, dropout);
        let memory = net.encode(src);
        let logits = net.decode(memory, src, input);
        let gold_idx: Vec<Option<usize>> = gold
            .iter()
            .map(|&t| (t != PAD).then_some(t as usize))
            .collect();
        let ce = g.cross_entropy(logits, &gold_idx);
        let scaled = g.scale(ce, norm);
        total += g.value(ce).data[0];
        for (index, grad) in g.backward(scaled) {
            grads[index].add_assign(&grad);
        }
    }
    Ok((total * norm, grads))
}

pub fn grad(params: &ModelParams, batch: &Batch) -> Result<Gradients> {
    Ok(loss_and_grad(params, batch)?.1)
}

pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for (t, g) in params.tensors.iter_mut().zip(grads) {
        for (p, d) in t.value.data.iter_mut().zip(&g.data) {
            *p -= lr * d;
        }
    }
}

/// Example indices of batch `batch_index` in an endless stream of
/// seed-shuffled epochs over `n` examples.
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epochs: BTreeMap<usize, Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            n,
            batch_size,
            seed,
            epochs: BTreeMap::new(),
        }
    }

    fn epoch(&mut self, e: usize) -> &[usize] {
        let (n, seed) = (self.n, self.seed);
        self.epochs.entry(e).or_insert_with(|| {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
            order
        })
    }

    pub fn batch(&mut self, batch_index: usize) -> Vec<usize> {
        let start = batch_index * self.batch_size;
        (start..start + self.batch_size)
            .map(|p| {
                let (e, off) = (p / self.n, p % self.n);
                self.epoch(e)[off]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Batch loss before each update.
    pub loss_curve: Vec<f64>,
}

fn dropout_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(step as u64 + 1)))
}

/// Runs `schedule` with plain SGD at each phase's fixed rate.
fn run_schedule(
    mut params: ModelParams,
    datasets: &BTreeMap<Tag, (&[EncodedExample], &TrainConfig)>,
    schedule: &[ScheduleItem],
) -> Result<TrainOutcome> {
    let mut streams: BTreeMap<Tag, BatchStream> = BTreeMap::new();
    let mut curve = Vec::with_capacity(schedule.len());
    for (step, item) in schedule.iter().enumerate() {
        let (examples, tconf) = datasets
            .get(&item.tag)
            .ok_or_else(|| Error::InvalidArgument(format!("no dataset for tag {:?}", item.tag)))?;
        let stream = streams
            .entry(item.tag)
            .or_insert_with(|| BatchStream::new(examples.len(), tconf.batch_size, tconf.seed));
        let members: Vec<&EncodedExample> = stream.batch(item.batch).into_iter().map(|i| &examples[i]).collect();
        let batch = Batch::pad(&members);
        let mut rng = dropout_rng(tconf.seed, step);
        let (l, grads) = loss_and_grad_with(&params, &batch, Some(&mut rng))?;
        sgd_step(&mut params, &grads, tconf.learning_rate());
        curve.push(l);
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

pub fn train_encoded(params: ModelParams, examples: &[EncodedExample], tconf: &TrainConfig) -> Result<TrainOutcome> {
    tconf.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let schedule = make_schedule(&StrategySpec::Single { tconf: tconf.clone() }, tconf.steps);
    let datasets = BTreeMap::from([(Tag::A, (examples, tconf))]);
    run_schedule(params, &datasets, &schedule)
}

pub fn train(params: ModelParams, examples: &[TrainingExample], vocab: &Vocab, tconf: &TrainConfig) -> Result<TrainOutcome> {
    let encoded = encode_examples(examples, vocab, &params.config);
    train_encoded(params, &encoded, tconf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleItem {
    pub tag: Tag,
    pub batch: usize,
}

/// How two training sets are combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategySpec {
    /// Dataset A only.
    Single { tconf: TrainConfig },
    /// Strictly alternating mini-batches A, B, A, B, ...
    Mixed { tconf: TrainConfig },
    /// All of A, then all of B starting from the phase-one parameters.
    Sequential { first: TrainConfig, second: TrainConfig },
}

impl StrategySpec {
    pub fn total_steps(&self) -> usize {
        match self {
            StrategySpec::Single { tconf } | StrategySpec::Mixed { tconf } => tconf.steps,
            StrategySpec::Sequential { first, second } => first.steps + second.steps,
        }
    }

    pub fn uses_b(&self) -> bool {
        !matches!(self, StrategySpec::Single { .. })
    }
}

/// Dataset tag and batch index for each of `steps` steps. For sequential
/// training the split is taken from the phase configs (`first.steps` steps of
/// A), and batch indices restart at zero in the second phase. Elsewhere the
/// batch index is the global step, so mixing a dataset with itself replays
/// single-dataset training.
pub fn make_schedule(strategy: &StrategySpec, steps: usize) -> Vec<ScheduleItem> {
    match strategy {
        StrategySpec::Single { .. } => (0..steps).map(|s| ScheduleItem { tag: Tag::A, batch: s }).collect(),
        StrategySpec::Mixed { .. } => (0..steps)
            .map(|s| ScheduleItem {
                tag: if s % 2 == 0 { Tag::A } else { Tag::B },
                batch: s,
            })
            .collect(),
        StrategySpec::Sequential { first, .. } => (0..steps)
            .map(|s| {
                if s < first.steps {
                    ScheduleItem { tag: Tag::A, batch: s }
                } else {
                    ScheduleItem {
                        tag: Tag::B,
                        batch: s - first.steps,
                    }
                }
            })
            .collect(),
    }
}

/// Trains a fresh model (initialized from `model_seed`) under `strategy`.
pub fn run_strategy(
    strategy: &StrategySpec,
    a: &[EncodedExample],
    b: Option<&[EncodedExample]>,
    config: &ModelConfig,
    model_seed: u64,
) -> Result<TrainOutcome> {
    let params = super::model::init_model(config, model_seed)?;
    let need = |d: Option<&[EncodedExample]>, name: &str| -> Result<()> {
        match d {
            Some(d) if !d.is_empty() => Ok(()),
            _ => Err(Error::InvalidArgument(format!("strategy needs a non-empty dataset {name}"))),
        }
    };
    need(Some(a), "A")?;
    let mut datasets: BTreeMap<Tag, (&[EncodedExample], &TrainConfig)> = BTreeMap::new();
    match strategy {
        StrategySpec::Single { tconf } => {
            tconf.validate()?;
            datasets.insert(Tag::A, (a, tconf));
        }
        StrategySpec::Mixed { tconf } => {
            tconf.validate()?;
            need(b, "B")?;
            datasets.insert(Tag::A, (a, tconf));
            datasets.insert(Tag::B, (b.unwrap_or_default(), tconf));
        }
        StrategySpec::Sequential { first, second } => {
            first.validate()?;
            second.validate()?;
            need(b, "B")?;
            datasets.insert(Tag::A, (a, first));
            datasets.insert(Tag::B, (b.unwrap_or_default(), second));
        }
    }
    let schedule = make_schedule(strategy, strategy.total_steps());
    run_schedule(params, &datasets, &schedule)
}

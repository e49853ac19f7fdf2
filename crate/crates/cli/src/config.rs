//! Run configuration: a JSON file whose keys are mirrored by flat flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use genqa_core::decode::DecodeConfig;
use genqa_core::seq2seq::{LrPreset, ModelConfig, StrategySpec, TrainConfig};
use genqa_core::textproc::DEFAULT_SOURCE_LIMIT;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Uqat5,
    Bart,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Single,
    Mixed,
    Sequential,
}

/// Effective settings of one invocation. Field names are the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub k: usize,
    pub beam: usize,
    pub max_len: usize,
    pub truncate: usize,
    pub hit_k: usize,

    pub lr_preset: PresetName,
    /// Rate for the `custom` preset.
    pub lr: Option<f64>,
    pub strategy: StrategyName,
    pub steps: usize,
    /// Second-phase steps of sequential training.
    pub steps_b: usize,
    pub batch_size: usize,

    pub vocab_size: usize,
    pub min_freq: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,

    pub dataset_a: Option<PathBuf>,
    pub dataset_b: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    /// External scores (`qid<TAB>cid<TAB>score`) for every ranked dataset.
    pub scores: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    pub examples_b: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub campaign_dir: Option<PathBuf>,
    pub campaign_id: String,
    pub out: Option<PathBuf>,
    pub port: u16,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            k: 5,
            beam: 4,
            max_len: 100,
            truncate: DEFAULT_SOURCE_LIMIT,
            hit_k: 5,
            lr_preset: PresetName::Uqat5,
            lr: None,
            strategy: StrategyName::Single,
            steps: 1000,
            steps_b: 0,
            batch_size: 8,
            vocab_size: 8000,
            min_freq: 1,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_source_len: 512,
            max_target_len: 100,
            dropout: 0.1,
            dataset_a: None,
            dataset_b: None,
            eval_dataset: None,
            scores: None,
            examples: None,
            examples_b: None,
            vocab: None,
            checkpoint: None,
            outputs: Vec::new(),
            annotations: None,
            campaign_dir: None,
            campaign_id: "campaign".into(),
            out: None,
            port: 8080,
        }
    }
}

/// Command-line overrides; each flag sets the config key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub truncate: Option<usize>,
    #[arg(long, global = true)]
    pub hit_k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub lr_preset: Option<PresetName>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub strategy: Option<StrategyName>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub steps_b: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub min_freq: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub n_layers: Option<usize>,
    #[arg(long, global = true)]
    pub n_heads: Option<usize>,
    #[arg(long, global = true)]
    pub d_ff: Option<usize>,
    #[arg(long, global = true)]
    pub max_source_len: Option<usize>,
    #[arg(long, global = true)]
    pub max_target_len: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub dataset_a: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset_b: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,
    #[arg(long, global = true)]
    pub examples: Option<PathBuf>,
    #[arg(long, global = true)]
    pub examples_b: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// System output file; repeat for several systems.
    #[arg(long = "outputs", global = true)]
    pub outputs: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub campaign_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub campaign_id: Option<String>,
    /// Output root; defaults to $GENQA_OUT_DIR, then `runs`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
}

/// A usage problem: bad flags, config keys or settings.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $o.$field.clone() { $cfg.$field = v; } )*
    };
}

macro_rules! apply_opt {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $( if $o.$field.is_some() { $cfg.$field = $o.$field.clone(); } )*
    };
}

impl Config {
    /// Reads a config file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.dataset_a,
            &mut cfg.dataset_b,
            &mut cfg.eval_dataset,
            &mut cfg.scores,
            &mut cfg.examples,
            &mut cfg.examples_b,
            &mut cfg.vocab,
            &mut cfg.checkpoint,
            &mut cfg.annotations,
            &mut cfg.campaign_dir,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        cfg.outputs.iter_mut().for_each(rebase);
        Ok(cfg)
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        apply!(cfg, o; seed, k, beam, max_len, truncate, hit_k, lr_preset, strategy, steps, steps_b,
            batch_size, vocab_size, min_freq, d_model, n_layers, n_heads, d_ff, max_source_len,
            max_target_len, dropout, campaign_id, port);
        apply_opt!(cfg, o; lr, dataset_a, dataset_b, eval_dataset, scores, examples, examples_b, vocab,
            checkpoint, annotations, campaign_dir, out);
        if !o.outputs.is_empty() {
            cfg.outputs = o.outputs.clone();
        }
        Ok(cfg)
    }

    /// Hash of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn preset(&self) -> Result<LrPreset> {
        match (self.lr_preset, self.lr) {
            (PresetName::Uqat5, None) => Ok(LrPreset::UqaT5),
            (PresetName::Bart, None) => Ok(LrPreset::Bart),
            (PresetName::Custom, Some(r)) => Ok(LrPreset::Custom(r)),
            (PresetName::Custom, None) => Err(usage("lr_preset custom needs lr")),
            (_, Some(_)) => Err(usage("lr is only used with lr_preset custom")),
        }
    }

    pub fn train_config(&self, steps: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            preset: self.preset()?,
            batch_size: self.batch_size,
            steps,
            seed: self.seed,
        })
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec> {
        let tconf = self.train_config(self.steps)?;
        Ok(match self.strategy {
            StrategyName::Single => StrategySpec::Single { tconf },
            StrategyName::Mixed => StrategySpec::Mixed { tconf },
            StrategyName::Sequential => StrategySpec::Sequential {
                second: self.train_config(self.steps_b)?,
                first: tconf,
            },
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
            dropout: self.dropout,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam,
            max_len: self.max_len,
        }
    }

    /// Checks settings every subcommand relies on.
    pub fn check(&self) -> Result<()> {
        if self.k == 0 || self.hit_k == 0 {
            bail!(usage("k and hit_k must be at least 1"));
        }
        if self.beam == 0 || self.max_len == 0 || self.truncate == 0 {
            bail!(usage("beam, max_len and truncate must be at least 1"));
        }
        self.preset()?;
        Ok(())
    }

    /// Reads an optional path key, failing with a usage error when unset.
    pub fn need<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| usage(format!("missing {key} (set --{} or the config key)", key.replace('_', "-"))))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

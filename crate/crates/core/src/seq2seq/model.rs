//! Pre-norm transformer encoder-decoder with learned positional embeddings.
//!
//! Token embeddings are shared by encoder and decoder. Each block is
//! `x + sublayer(norm(x))`; both stacks end with a final norm, and the decoder
//! output goes through a biased projection onto the vocabulary.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{AttnMask, Graph, Mat, NodeId};
use crate::error::{Error, Result};
use crate::textproc::{TokenId, BOS, EOS, PAD};

pub const DEFAULT_MAX_SOURCE_LEN: usize = 512;
pub const DEFAULT_MAX_TARGET_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_source_len < 2 || self.max_target_len < 2 {
            return Err(Error::Config("maximum lengths must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size <= EOS as usize {
            return Err(Error::Config("vocab_size must include PAD, BOS and EOS".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Mat,
}

/// Trainable state of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.value.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.is_finite())
    }
}

enum Init {
    Normal(f64),
    Const(f64),
}

/// Names, shapes and initializers of every tensor, in storage order.
fn layout(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let d = c.d_model;
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out = vec![
        ("tok_emb".to_string(), c.vocab_size, d, Init::Normal(1.0)),
        ("enc_pos".to_string(), c.max_source_len, d, Init::Normal(1.0)),
        ("dec_pos".to_string(), c.max_target_len, d, Init::Normal(1.0)),
    ];
    let norm = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.g"), 1, d, Init::Const(1.0)));
        out.push((format!("{p}.b"), 1, d, Init::Const(0.0)));
    };
    let attn = |out: &mut Vec<_>, p: &str| {
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.{w}"), d, d, lin(d)));
        }
    };
    let ffn = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.w1"), d, c.d_ff, lin(d)));
        out.push((format!("{p}.b1"), 1, c.d_ff, Init::Const(0.0)));
        out.push((format!("{p}.w2"), c.d_ff, d, lin(c.d_ff)));
        out.push((format!("{p}.b2"), 1, d, Init::Const(0.0)));
    };
    for l in 0..c.n_layers {
        let p = format!("enc.{l}");
        norm(&mut out, &format!("{p}.ln1"));
        attn(&mut out, &format!("{p}.self"));
        norm(&mut out, &format!("{p}.ln2"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "enc.ln_f");
    for l in 0..c.n_layers {
        let p = format!("dec.{l}");
        norm(&mut out, &format!("{p}.ln1"));
        attn(&mut out, &format!("{p}.self"));
        norm(&mut out, &format!("{p}.ln2"));
        attn(&mut out, &format!("{p}.cross"));
        norm(&mut out, &format!("{p}.ln3"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "dec.ln_f");
    out.push(("out.w".to_string(), d, c.vocab_size, lin(d)));
    out.push(("out.b".to_string(), 1, c.vocab_size, Init::Const(0.0)));
    out
}

/// Tensor names and shapes expected for `config`, in storage order.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    layout(config).into_iter().map(|(n, r, c, _)| (n, r, c)).collect()
}

pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout(config)
        .into_iter()
        .map(|(name, rows, cols, init)| {
            let data = match init {
                Init::Const(v) => vec![v; rows * cols],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..rows * cols).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            Tensor {
                name,
                value: Mat::from_vec(rows, cols, data),
            }
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        seed,
        tensors,
    })
}

/// Per-call dropout randomness; `None` disables dropout.
pub(crate) struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

/// Builds the network for one example inside a graph.
pub(crate) struct Net<'p, 'g, 'r> {
    pub g: &'g mut Graph<'p>,
    params: &'p ModelParams,
    nodes: HashMap<&'p str, NodeId>,
    dropout: Option<DropoutCtx<'r>>,
}

impl<'p, 'g, 'r> Net<'p, 'g, 'r> {
    pub fn new(g: &'g mut Graph<'p>, params: &'p ModelParams, dropout: Option<DropoutCtx<'r>>) -> Self {
        let dropout = dropout.filter(|d| d.rate > 0.0);
        Self {
            g,
            params,
            nodes: HashMap::new(),
            dropout,
        }
    }

    fn p(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.nodes.get(name) {
            return id;
        }
        let (index, tensor) = self
            .params
            .tensors
            .iter()
            .enumerate()
            .find(|(_, t)| t.name == name)
            .unwrap_or_else(|| panic!("missing tensor {name}"));
        let id = self.g.param(&tensor.value, index);
        self.nodes.insert(tensor.name.as_str(), id);
        id
    }

    fn drop(&mut self, x: NodeId) -> NodeId {
        let Some(ctx) = self.dropout.as_mut() else {
            return x;
        };
        let n = self.g.value(x).data.len();
        let scale = 1.0 / (1.0 - ctx.rate);
        let keep = (0..n)
            .map(|_| if ctx.rng.random::<f64>() < ctx.rate { 0.0 } else { scale })
            .collect();
        self.g.dropout(x, keep)
    }

    fn norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        let n = self.g.normalize(x);
        let n = self.g.mul_row(n, g);
        self.g.add_row(n, b)
    }

    fn attention(&mut self, query_in: NodeId, kv_in: NodeId, prefix: &str, mask: &AttnMask) -> NodeId {
        let cfg = &self.params.config;
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let wq = self.p(&format!("{prefix}.q"));
        let wk = self.p(&format!("{prefix}.k"));
        let wv = self.p(&format!("{prefix}.v"));
        let wo = self.p(&format!("{prefix}.o"));
        let q = self.g.matmul(query_in, wq);
        let k = self.g.matmul(kv_in, wk);
        let v = self.g.matmul(kv_in, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.g.slice_cols(q, h * dh, dh);
            let kh = self.g.slice_cols(k, h * dh, dh);
            let vh = self.g.slice_cols(v, h * dh, dh);
            let s = self.g.matmul_t(qh, kh);
            let s = self.g.scale(s, scale);
            let a = self.g.softmax(s, mask.clone());
            ctx.push(self.g.matmul(a, vh));
        }
        let cat = if heads == 1 { ctx[0] } else { self.g.concat_cols(&ctx) };
        self.g.matmul(cat, wo)
    }

    fn ffn(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let w1 = self.p(&format!("{prefix}.w1"));
        let b1 = self.p(&format!("{prefix}.b1"));
        let w2 = self.p(&format!("{prefix}.w2"));
        let b2 = self.p(&format!("{prefix}.b2"));
        let h = self.g.matmul(x, w1);
        let h = self.g.add_row(h, b1);
        let h = self.g.gelu(h);
        let h = self.g.matmul(h, w2);
        self.g.add_row(h, b2)
    }

    fn embed(&mut self, ids: &[TokenId], pos_table: &str) -> NodeId {
        let tok = self.p("tok_emb");
        let pos = self.p(pos_table);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let t = self.g.gather(tok, &idx);
        let p = self.g.gather(pos, &positions);
        let x = self.g.add(t, p);
        self.drop(x)
    }

    fn residual(&mut self, x: NodeId, sub: NodeId) -> NodeId {
        let sub = self.drop(sub);
        self.g.add(x, sub)
    }

    /// Encoder memory for `source` (PAD positions are invisible as keys).
    pub fn encode(&mut self, source: &[TokenId]) -> NodeId {
        let mask = source_mask(source);
        let mut x = self.embed(source, "enc_pos");
        for l in 0..self.params.config.n_layers {
            let p = format!("enc.{l}");
            let h = self.norm(x, &format!("{p}.ln1"));
            let a = self.attention(h, h, &format!("{p}.self"), &mask);
            x = self.residual(x, a);
            let h = self.norm(x, &format!("{p}.ln2"));
            let f = self.ffn(h, &format!("{p}.ffn"));
            x = self.residual(x, f);
        }
        self.norm(x, "enc.ln_f")
    }

    /// Next-token logits at every position of `prefix`.
    pub fn decode(&mut self, memory: NodeId, source: &[TokenId], prefix: &[TokenId]) -> NodeId {
        let mem_mask = source_mask(source);
        let mut y = self.embed(prefix, "dec_pos");
        for l in 0..self.params.config.n_layers {
            let p = format!("dec.{l}");
            let h = self.norm(y, &format!("{p}.ln1"));
            let a = self.attention(h, h, &format!("{p}.self"), &AttnMask::Causal);
            y = self.residual(y, a);
            let h = self.norm(y, &format!("{p}.ln2"));
            let c = self.attention(h, memory, &format!("{p}.cross"), &mem_mask);
            y = self.residual(y, c);
            let h = self.norm(y, &format!("{p}.ln3"));
            let f = self.ffn(h, &format!("{p}.ffn"));
            y = self.residual(y, f);
        }
        let y = self.norm(y, "dec.ln_f");
        let w = self.p("out.w");
        let b = self.p("out.b");
        let logits = self.g.matmul(y, w);
        self.g.add_row(logits, b)
    }
}

fn source_mask(source: &[TokenId]) -> AttnMask {
    AttnMask::Keys(source.iter().map(|&t| t != PAD).collect())
}

pub(crate) fn check_ids(config: &ModelConfig, source: &[TokenId], prefix: &[TokenId]) -> Result<()> {
    if source.is_empty() || source.len() > config.max_source_len {
        return Err(Error::InvalidArgument(format!(
            "source length {} outside 1..={}",
            source.len(),
            config.max_source_len
        )));
    }
    if prefix.is_empty() || prefix.len() > config.max_target_len {
        return Err(Error::InvalidArgument(format!(
            "target prefix length {} outside 1..={}",
            prefix.len(),
            config.max_target_len
        )));
    }
    if let Some(&bad) = source.iter().chain(prefix).find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} out of range for vocab size {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Teacher-forced logits: row `i` is the next-token distribution after
/// `target_prefix[..=i]`.
pub fn forward(params: &ModelParams, source: &[TokenId], target_prefix: &[TokenId]) -> Result<Mat> {
    check_ids(&params.config, source, target_prefix)?;
    let mut g = Graph::new();
    let mut net = Net::new(&mut g, params, None);
    let memory = net.encode(source);
    let logits = net.decode(memory, source, target_prefix);
    Ok(g.value(logits).clone())
}

/// [`forward`] over independent examples.
pub fn forward_batch(params: &ModelParams, batch: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Vec<Mat>> {
    batch.iter().map(|(s, t)| forward(params, s, t)).collect()
}

/// Decoder input for a target: BOS followed by the target ids.
pub fn teacher_input(target: &[TokenId]) -> Vec<TokenId> {
    std::iter::once(BOS).chain(target.iter().copied()).collect()
}

/// Gold ids for a target: the target ids followed by EOS.
pub fn teacher_gold(target: &[TokenId]) -> Vec<TokenId> {
    target.iter().copied().chain(std::iter::once(EOS)).collect()
}


#[cfg(test)]
pub(crate) use tests::tiny_config;

//! Step-by-step decoding with cached keys and values.
//!
//! Performs the same floating-point operations in the same order as the
//! teacher-forced graph, so step logits equal the matching [`super::forward`]
//! rows exactly.

use std::collections::HashMap;

use super::model::{check_ids, ModelConfig, ModelParams, Net};
use super::tensor::{gelu, normalize_row, softmax_row, Graph, Mat};
use crate::error::Result;
use crate::textproc::{TokenId, BOS, PAD};

/// Keys and values of one attention layer, one row per position.
#[derive(Debug, Clone)]
struct Kv {
    k: Vec<f64>,
    v: Vec<f64>,
}

/// Decoder state after consuming a prefix.
#[derive(Debug, Clone)]
pub struct DecoderState {
    len: usize,
    self_kv: Vec<Kv>,
    logits: Vec<f64>,
}

impl DecoderState {
    /// Prefix length consumed so far, BOS included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Next-token logits after the consumed prefix.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// A model conditioned on one encoded source.
pub struct Decoder<'p> {
    params: &'p ModelParams,
    w: HashMap<&'p str, &'p Mat>,
    mem_visible: Vec<bool>,
    cross: Vec<Kv>,
}

fn row_mat(data: Vec<f64>) -> Mat {
    Mat::from_vec(1, data.len(), data)
}

impl<'p> Decoder<'p> {
    pub fn new(params: &'p ModelParams, source: &[TokenId]) -> Result<Self> {
        check_ids(&params.config, source, &[BOS])?;
        let mut g = Graph::new();
        let mut net = Net::new(&mut g, params, None);
        let memory_id = net.encode(source);
        let memory = g.value(memory_id);
        let w: HashMap<&str, &Mat> = params.tensors.iter().map(|t| (t.name.as_str(), &t.value)).collect();
        let cross = (0..params.config.n_layers)
            .map(|l| Kv {
                k: memory.matmul(w[format!("dec.{l}.cross.k").as_str()]).data,
                v: memory.matmul(w[format!("dec.{l}.cross.v").as_str()]).data,
            })
            .collect();
        Ok(Self {
            params,
            w,
            mem_visible: source.iter().map(|&t| t != PAD).collect(),
            cross,
        })
    }

    pub fn config(&self) -> &'p ModelConfig {
        &self.params.config
    }

    fn t(&self, name: &str) -> &'p Mat {
        self.w[name]
    }

    fn norm(&self, x: &[f64], prefix: &str) -> Mat {
        let mut h = x.to_vec();
        normalize_row(&mut h);
        let g = self.t(&format!("{prefix}.g"));
        let b = self.t(&format!("{prefix}.b"));
        for ((x, gi), bi) in h.iter_mut().zip(&g.data).zip(&b.data) {
            *x *= gi;
            *x += bi;
        }
        row_mat(h)
    }

    /// One query row against `n` cached key/value rows.
    fn attend(&self, q: &[f64], kv: &Kv, n: usize, visible: impl Fn(usize) -> bool, wo: &Mat) -> Vec<f64> {
        let c = &self.params.config;
        let (d, dh) = (c.d_model, c.d_model / c.n_heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = vec![0.0; d];
        for h in 0..c.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = &q[cols.clone()];
            let mut s: Vec<f64> = (0..n)
                .map(|j| {
                    let kh = &kv.k[j * d..(j + 1) * d][cols.clone()];
                    qh.iter().zip(kh).map(|(x, y)| x * y).sum::<f64>() * scale
                })
                .collect();
            softmax_row(&mut s, &visible);
            let out = &mut cat[cols.clone()];
            for (j, &a) in s.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let vh = &kv.v[j * d..(j + 1) * d][cols.clone()];
                for (o, &y) in out.iter_mut().zip(vh) {
                    *o += a * y;
                }
            }
        }
        row_mat(cat).matmul(wo).data
    }

    fn add(x: &mut [f64], y: &[f64]) {
        for (a, b) in x.iter_mut().zip(y) {
            *a += b;
        }
    }

    /// State after consuming BOS.
    pub fn start(&self) -> DecoderState {
        let empty = DecoderState {
            len: 0,
            self_kv: vec![Kv { k: vec![], v: vec![] }; self.params.config.n_layers],
            logits: vec![],
        };
        self.step(&empty, BOS)
    }

    /// State after additionally consuming `token`.
    ///
    /// Panics if the prefix would exceed the model's target length or the id
    /// is out of range.
    pub fn step(&self, state: &DecoderState, token: TokenId) -> DecoderState {
        let c = &self.params.config;
        let pos = state.len;
        assert!(pos < c.max_target_len, "decoder prefix exceeds max_target_len");
        assert!((token as usize) < c.vocab_size, "token id out of range");
        let mut x = self.t("tok_emb").row(token as usize).to_vec();
        Self::add(&mut x, self.t("dec_pos").row(pos));
        let mut next = state.clone();
        next.len = pos + 1;
        for l in 0..c.n_layers {
            let p = format!("dec.{l}");
            let h = self.norm(&x, &format!("{p}.ln1"));
            let q = h.matmul(self.t(&format!("{p}.self.q")));
            let kv = &mut next.self_kv[l];
            kv.k.extend(h.matmul(self.t(&format!("{p}.self.k"))).data);
            kv.v.extend(h.matmul(self.t(&format!("{p}.self.v"))).data);
            let a = self.attend(&q.data, &next.self_kv[l], pos + 1, |_| true, self.t(&format!("{p}.self.o")));
            Self::add(&mut x, &a);

            let h = self.norm(&x, &format!("{p}.ln2"));
            let q = h.matmul(self.t(&format!("{p}.cross.q")));
            let a = self.attend(
                &q.data,
                &self.cross[l],
                self.mem_visible.len(),
                |j| self.mem_visible[j],
                self.t(&format!("{p}.cross.o")),
            );
            Self::add(&mut x, &a);

            let h = self.norm(&x, &format!("{p}.ln3"));
            let mut f = h.matmul(self.t(&format!("{p}.ffn.w1")));
            Self::add(&mut f.data, &self.t(&format!("{p}.ffn.b1")).data);
            f.data.iter_mut().for_each(|v| *v = gelu(*v));
            let mut f = f.matmul(self.t(&format!("{p}.ffn.w2")));
            Self::add(&mut f.data, &self.t(&format!("{p}.ffn.b2")).data);
            Self::add(&mut x, &f.data);
        }
        let y = self.norm(&x, "dec.ln_f");
        let mut logits = y.matmul(self.t("out.w")).data;
        Self::add(&mut logits, &self.t("out.b").data);
        next.logits = logits;
        next
    }
}

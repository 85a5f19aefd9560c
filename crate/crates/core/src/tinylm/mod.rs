//! A desk-scale language model with a frozen backbone and a low-rank adapter.
//!
//! The context at position `t` is a position-weighted sum of the embeddings
//! of the previous `k` tokens (PAD-extended on the left):
//!
//! ```text
//! c_t = sum_{i=1..k} w_i * E[x_{t-i}]
//! z_t = (W0 + A * B^T) * c_t
//! ```
//!
//! `E` and `W0` belong to the backbone, `A` (V x r) and `B` (d x r) to the
//! adapter. Everything is stored row-major in flat `Vec<f64>`s.

mod checkpoint;
mod generate;
mod train;

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};
use crate::metrics::tokenize;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use generate::{generate, generate_until, GenerationConfig, Generation};
pub use train::{
    adapter_loss_and_grad, backbone_loss_and_grad, corpus_cross_entropy, pretrain_backbone,
    pretrain_backbone_with_vocab, train_adapter, train_adapter_with_stats, PretrainConfig, TrainConfig,
    TrainOutcome, TrainSeq,
};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Reserved tokens first, then the sorted distinct tokens of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            words.extend(tokenize(text));
        }
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens are distinct")
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let texts: Vec<String> = data
            .examples
            .iter()
            .flat_map(|e| [e.prompt_text(), e.response.clone()])
            .collect();
        Self::build(texts.iter().map(String::as_str))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED.iter()).any(|(a, b)| a != b)
        {
            return Err(Error::invalid("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `token`; unknown tokens map to PAD.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(PAD)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn decode_text(&self, ids: &[u32]) -> String {
        self.decode(ids).join(" ")
    }

    /// `BOS instruction SEP response EOS`: the training serialization.
    pub fn serialize_example(&self, example: &Example) -> Vec<u32> {
        let mut seq = vec![BOS];
        seq.extend(self.encode(&example.prompt_text()));
        seq.push(SEP);
        seq.extend(self.encode(&example.response));
        seq.push(EOS);
        seq
    }

    /// `BOS instruction SEP`: what the model is prompted with to answer.
    pub fn instruction_prompt(&self, instruction: &str) -> Vec<u32> {
        let mut seq = vec![BOS];
        seq.extend(self.encode(instruction));
        seq.push(SEP);
        seq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub dim: usize,
    pub window: usize,
    pub rank: usize,
    pub position_decay: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            dim: 32,
            window: 16,
            rank: 16,
            position_decay: 0.85,
        }
    }
}

impl ModelDims {
    pub fn position_weights(&self) -> Vec<f64> {
        (1..=self.window)
            .map(|i| self.position_decay.powi(i as i32))
            .collect()
    }
}

/// Frozen backbone: embeddings `E` (V x d), output projection `W0` (V x d)
/// and position weights `w_1..w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub position_weights: Vec<f64>,
    pub embed: Vec<f64>,
    pub out: Vec<f64>,
}

impl BackboneParams {
    pub fn zeros(vocab_size: usize, dim: usize, position_weights: Vec<f64>) -> Self {
        BackboneParams {
            vocab_size,
            dim,
            position_weights,
            embed: vec![0.0; vocab_size * dim],
            out: vec![0.0; vocab_size * dim],
        }
    }

    pub fn random<R: Rng>(vocab_size: usize, dims: &ModelDims, rng: &mut R) -> Self {
        let embed_dist = Normal::new(0.0, 1.0 / (dims.dim as f64).sqrt()).unwrap();
        let out_dist = Normal::new(0.0, 0.1).unwrap();
        let n = vocab_size * dims.dim;
        let embed = (0..n).map(|_| embed_dist.sample(rng)).collect();
        let out = (0..n).map(|_| out_dist.sample(rng)).collect();
        BackboneParams {
            vocab_size,
            dim: dims.dim,
            position_weights: dims.position_weights(),
            embed,
            out,
        }
    }

    pub fn window(&self) -> usize {
        self.position_weights.len()
    }

    fn embedding(&self, id: u32) -> &[f64] {
        let d = self.dim;
        &self.embed[id as usize * d..(id as usize + 1) * d]
    }

    /// Writes the context vector for predicting the token after `history`.
    pub fn context_into(&self, history: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        let n = history.len();
        for (i, &w) in self.position_weights.iter().enumerate() {
            let id = if i < n { history[n - 1 - i] } else { PAD };
            for (o, e) in out.iter_mut().zip(self.embedding(id)) {
                *o += w * e;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterShape {
    pub vocab_size: usize,
    pub dim: usize,
    pub rank: usize,
}

impl AdapterShape {
    pub fn len(&self) -> usize {
        self.vocab_size * self.rank + self.dim * self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Low-rank adapter: the weight delta is `A * B^T` with `A` (V x r) and
/// `B` (d x r).
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub rank: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AdapterParams {
    pub fn zeros(shape: AdapterShape) -> Self {
        AdapterParams {
            vocab_size: shape.vocab_size,
            dim: shape.dim,
            rank: shape.rank,
            a: vec![0.0; shape.vocab_size * shape.rank],
            b: vec![0.0; shape.dim * shape.rank],
        }
    }

    /// LoRA-style initialization: `A = 0`, `B ~ N(0, scale^2)`, so the
    /// initial delta is zero while gradients w.r.t. `A` are not.
    pub fn init<R: Rng>(shape: AdapterShape, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        if scale > 0.0 {
            let dist = Normal::new(0.0, scale).unwrap();
            p.b.iter_mut().for_each(|x| *x = dist.sample(rng));
        }
        p
    }

    pub fn shape(&self) -> AdapterShape {
        AdapterShape {
            vocab_size: self.vocab_size,
            dim: self.dim,
            rank: self.rank,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.a.len() + self.b.len());
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v
    }

    pub fn unflatten(values: &[f64], shape: AdapterShape) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                actual: values.len(),
            });
        }
        let split = shape.vocab_size * shape.rank;
        Ok(AdapterParams {
            vocab_size: shape.vocab_size,
            dim: shape.dim,
            rank: shape.rank,
            a: values[..split].to_vec(),
            b: values[split..].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).all(|x| x.is_finite())
    }

    /// Little-endian bytes of the flattened parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.flatten().iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

/// Backbone plus one adapter, with the vocabulary for text conversion.
#[derive(Debug, Clone, Copy)]
pub struct LanguageModel<'a> {
    pub vocab: &'a Vocab,
    pub backbone: &'a BackboneParams,
    pub adapter: &'a AdapterParams,
}

/// Scratch buffers for repeated forward passes.
pub(crate) struct Workspace {
    pub context: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Workspace {
    pub fn new(vocab_size: usize, dim: usize, rank: usize) -> Self {
        Workspace {
            context: vec![0.0; dim],
            hidden: vec![0.0; rank],
            logits: vec![0.0; vocab_size],
        }
    }
}

impl<'a> LanguageModel<'a> {
    pub fn new(vocab: &'a Vocab, backbone: &'a BackboneParams, adapter: &'a AdapterParams) -> Self {
        debug_assert_eq!(vocab.len(), backbone.vocab_size);
        debug_assert_eq!(adapter.vocab_size, backbone.vocab_size);
        debug_assert_eq!(adapter.dim, backbone.dim);
        LanguageModel {
            vocab,
            backbone,
            adapter,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.backbone.vocab_size
    }

    pub(crate) fn workspace(&self) -> Workspace {
        Workspace::new(self.backbone.vocab_size, self.backbone.dim, self.adapter.rank)
    }

    pub(crate) fn logits_into(&self, history: &[u32], ws: &mut Workspace) {
        logits_into(self.backbone, self.adapter, history, ws);
    }

    /// Next-token logits given `context` (only the last `k` tokens matter).
    pub fn forward_logits(&self, context: &[u32]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.logits_into(context, &mut ws);
        ws.logits
    }

    /// Teacher-forced log-probability of `seq` following `condition_prefix`.
    /// Returns `(total log-prob, mean cross-entropy per token)`.
    pub fn sequence_logprob(&self, seq: &[u32], condition_prefix: &[u32]) -> (f64, f64) {
        assert!(!seq.is_empty(), "sequence_logprob: empty sequence");
        let mut history = condition_prefix.to_vec();
        history.reserve(seq.len());
        let mut ws = self.workspace();
        let mut total = 0.0;
        for &tok in seq {
            self.logits_into(&history, &mut ws);
            total += log_softmax_at(&ws.logits, tok as usize);
            history.push(tok);
        }
        (total, -total / seq.len() as f64)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.vocab.encode(text)
    }
}

/// Fills `ws.logits` for the token following `history`; `ws.context` and
/// `ws.hidden` (`B^T c`) are left holding the intermediate values.
pub(crate) fn logits_into(
    backbone: &BackboneParams,
    adapter: &AdapterParams,
    history: &[u32],
    ws: &mut Workspace,
) {
    let (d, r) = (backbone.dim, adapter.rank);
    backbone.context_into(history, &mut ws.context);
    let c = &ws.context;
    ws.hidden.fill(0.0);
    for (j, &cj) in c.iter().enumerate() {
        if cj != 0.0 {
            let row = &adapter.b[j * r..(j + 1) * r];
            for (h, &bv) in ws.hidden.iter_mut().zip(row) {
                *h += cj * bv;
            }
        }
    }
    for (v, z) in ws.logits.iter_mut().enumerate() {
        let w_row = &backbone.out[v * d..(v + 1) * d];
        let a_row = &adapter.a[v * r..(v + 1) * r];
        let base: f64 = w_row.iter().zip(c).map(|(w, x)| w * x).sum();
        let delta: f64 = a_row.iter().zip(&ws.hidden).map(|(a, h)| a * h).sum();
        *z = base + delta;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

//! Closed-form gradients and plain SGD for the adapter and the backbone.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    logits_into, softmax_in_place, AdapterParams, BackboneParams, LanguageModel, ModelDims, Vocab,
    Workspace, SEP,
};
use crate::corpus::Dataset;
use crate::rng;

/// A serialized example and the first position whose token is predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSeq {
    pub tokens: Vec<u32>,
    pub start: usize,
}

impl TrainSeq {
    /// All positions after BOS, or only the response and EOS.
    pub fn from_tokens(tokens: Vec<u32>, response_only: bool) -> Self {
        let start = if response_only {
            tokens.iter().position(|&t| t == SEP).map_or(1, |p| p + 1)
        } else {
            1
        };
        TrainSeq { tokens, start }
    }

    fn predicted(&self) -> usize {
        self.tokens.len().saturating_sub(self.start)
    }
}

fn encode_dataset(vocab: &Vocab, data: &Dataset, response_only: bool) -> Vec<TrainSeq> {
    data.examples
        .iter()
        .map(|e| TrainSeq::from_tokens(vocab.serialize_example(e), response_only))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Restrict the loss to response tokens (and EOS).
    #[serde(default)]
    pub response_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            lr: 2e-3,
            batch_size: 16,
            response_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub adapter: AdapterParams,
    /// Mean pre-step batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean next-token cross-entropy over `seqs` and its gradient w.r.t. the
/// adapter factors.
///
/// With `g = softmax(z) - onehot(y)` and `h = B^T c`:
/// `dL/dA = g h^T` and `dL/dB = c (A^T g)^T`.
pub fn adapter_loss_and_grad(
    backbone: &BackboneParams,
    adapter: &AdapterParams,
    seqs: &[TrainSeq],
) -> (f64, AdapterParams) {
    let (v, d, r) = (backbone.vocab_size, backbone.dim, adapter.rank);
    let mut grad = AdapterParams::zeros(adapter.shape());
    let mut ws = Workspace::new(v, d, r);
    let mut u = vec![0.0; r];
    let mut loss = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        for t in seq.start..seq.tokens.len() {
            let target = seq.tokens[t] as usize;
            logits_into(backbone, adapter, &seq.tokens[..t], &mut ws);
            softmax_in_place(&mut ws.logits);
            loss -= ws.logits[target].max(f64::MIN_POSITIVE).ln();
            ws.logits[target] -= 1.0;
            count += 1;
            let g = &ws.logits;
            u.fill(0.0);
            for (tok, &gv) in g.iter().enumerate() {
                let a_row = &adapter.a[tok * r..(tok + 1) * r];
                let ga_row = &mut grad.a[tok * r..(tok + 1) * r];
                for k in 0..r {
                    ga_row[k] += gv * ws.hidden[k];
                    u[k] += a_row[k] * gv;
                }
            }
            for (j, &cj) in ws.context.iter().enumerate() {
                let gb_row = &mut grad.b[j * r..(j + 1) * r];
                for k in 0..r {
                    gb_row[k] += cj * u[k];
                }
            }
        }
    }
    if count > 0 {
        let scale = 1.0 / count as f64;
        grad.a.iter_mut().chain(grad.b.iter_mut()).for_each(|x| *x *= scale);
        loss *= scale;
    }
    (loss, grad)
}

/// Mini-batch SGD on the adapter factors only; the backbone stays frozen.
pub fn train_adapter_with_stats<R: Rng>(
    backbone: &BackboneParams,
    adapter: &AdapterParams,
    vocab: &Vocab,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> TrainOutcome {
    let seqs = encode_dataset(vocab, data, cfg.response_only);
    let mut params = adapter.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(batch) {
            let batch_seqs: Vec<TrainSeq> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let n: usize = batch_seqs.iter().map(TrainSeq::predicted).sum();
            let (loss, grad) = adapter_loss_and_grad(backbone, &params, &batch_seqs);
            weighted += loss * n as f64;
            tokens += n;
            if cfg.lr != 0.0 {
                for (p, g) in params.a.iter_mut().zip(&grad.a) {
                    *p -= cfg.lr * g;
                }
                for (p, g) in params.b.iter_mut().zip(&grad.b) {
                    *p -= cfg.lr * g;
                }
            }
        }
        epoch_losses.push(if tokens > 0 { weighted / tokens as f64 } else { 0.0 });
    }
    TrainOutcome {
        adapter: params,
        epoch_losses,
    }
}

pub fn train_adapter<R: Rng>(
    backbone: &BackboneParams,
    adapter: &AdapterParams,
    vocab: &Vocab,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> AdapterParams {
    train_adapter_with_stats(backbone, adapter, vocab, data, cfg, rng).adapter
}

/// Mean next-token cross-entropy of `data` under backbone + adapter.
pub fn corpus_cross_entropy(
    backbone: &BackboneParams,
    adapter: &AdapterParams,
    vocab: &Vocab,
    data: &Dataset,
    response_only: bool,
) -> f64 {
    let model = LanguageModel::new(vocab, backbone, adapter);
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in encode_dataset(vocab, data, response_only) {
        if seq.predicted() == 0 {
            continue;
        }
        let (lp, _) = model.sequence_logprob(&seq.tokens[seq.start..], &seq.tokens[..seq.start]);
        total -= lp;
        count += seq.predicted();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Mean cross-entropy of `seqs` under the backbone alone, and its gradient
/// w.r.t. `E` and `W0` (returned as a `BackboneParams` of gradients).
pub fn backbone_loss_and_grad(backbone: &BackboneParams, seqs: &[TrainSeq]) -> (f64, BackboneParams) {
    let (v, d) = (backbone.vocab_size, backbone.dim);
    let mut grad = BackboneParams::zeros(v, d, backbone.position_weights.clone());
    let mut c = vec![0.0; d];
    let mut z = vec![0.0; v];
    let mut dc = vec![0.0; d];
    let mut loss = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        for t in seq.start..seq.tokens.len() {
            let history = &seq.tokens[..t];
            let target = seq.tokens[t] as usize;
            backbone.context_into(history, &mut c);
            for (tok, zv) in z.iter_mut().enumerate() {
                *zv = backbone.out[tok * d..(tok + 1) * d]
                    .iter()
                    .zip(&c)
                    .map(|(w, x)| w * x)
                    .sum();
            }
            softmax_in_place(&mut z);
            loss -= z[target].max(f64::MIN_POSITIVE).ln();
            z[target] -= 1.0;
            count += 1;
            dc.fill(0.0);
            for (tok, &g) in z.iter().enumerate() {
                let w_row = &backbone.out[tok * d..(tok + 1) * d];
                let gw_row = &mut grad.out[tok * d..(tok + 1) * d];
                for j in 0..d {
                    gw_row[j] += g * c[j];
                    dc[j] += g * w_row[j];
                }
            }
            let n = history.len();
            for (i, &w) in backbone.position_weights.iter().enumerate() {
                let id = if i < n { history[n - 1 - i] } else { super::PAD } as usize;
                for (ge, &x) in grad.embed[id * d..(id + 1) * d].iter_mut().zip(&dc) {
                    *ge += w * x;
                }
            }
        }
    }
    if count > 0 {
        let scale = 1.0 / count as f64;
        grad.out.iter_mut().chain(grad.embed.iter_mut()).for_each(|x| *x *= scale);
        loss *= scale;
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            lr: 0.5,
            batch_size: 8,
        }
    }
}

/// Builds the vocabulary from `corpus` and fits `E` and `W0` by SGD on
/// next-token cross-entropy over randomly drawn mini-batches.
pub fn pretrain_backbone(
    corpus: &Dataset,
    dims: &ModelDims,
    cfg: &PretrainConfig,
    seed: u64,
) -> (Vocab, BackboneParams) {
    pretrain_backbone_with_vocab(Vocab::from_dataset(corpus), corpus, dims, cfg, seed)
}

/// As [`pretrain_backbone`], with a vocabulary that may be larger than
/// the corpus's own.
pub fn pretrain_backbone_with_vocab(
    vocab: Vocab,
    corpus: &Dataset,
    dims: &ModelDims,
    cfg: &PretrainConfig,
    seed: u64,
) -> (Vocab, BackboneParams) {
    assert!(!corpus.is_empty(), "pretrain_backbone: empty corpus");
    assert!(dims.dim >= 1 && dims.window >= 1);
    let mut init_rng = rng::stream(seed, "backbone-init", 0, rng::NO_CLIENT);
    let mut backbone = BackboneParams::random(vocab.len(), dims, &mut init_rng);
    let seqs = encode_dataset(&vocab, corpus, false);
    let mut rng = rng::stream(seed, "pretrain", 0, rng::NO_CLIENT);
    for _ in 0..cfg.steps {
        let batch: Vec<TrainSeq> = (0..cfg.batch_size.max(1))
            .map(|_| seqs[rng.random_range(0..seqs.len())].clone())
            .collect();
        let (_, grad) = backbone_loss_and_grad(&backbone, &batch);
        for (p, g) in backbone.embed.iter_mut().zip(&grad.embed) {
            *p -= cfg.lr * g;
        }
        for (p, g) in backbone.out.iter_mut().zip(&grad.out) {
            *p -= cfg.lr * g;
        }
    }
    (vocab, backbone)
}

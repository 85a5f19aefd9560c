//! Discoverable-memorization attack on shared adapters: prompt with a
//! known prefix of a training sequence, regenerate the suffix, and score
//! it against the true one with BLEU and Rouge-L.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::fedcore::SharedAdapter;
use crate::metrics::{bleu, rouge_l};
use crate::rng::{self, StreamRng};
use crate::tinylm::{generate_until, BackboneParams, GenerationConfig, LanguageModel, Vocab};

pub const STREAM_SAMPLE: &str = "attack-set";
pub const STREAM_DECODE: &str = "attack-decode";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub per_client: usize,
    pub prefix_len: usize,
    /// Start of the prefix block within the serialized example.
    pub prefix_offset: usize,
    pub suffix_cap: usize,
    /// 0 is greedy decoding.
    pub temperature: f64,
    /// Attack every client's upload instead of the aggregate.
    pub per_client_uploads: bool,
    /// Run the attack after every round rather than only the last.
    pub every_round: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            per_client: 20,
            prefix_len: 10,
            prefix_offset: 0,
            suffix_cap: 64,
            temperature: 0.0,
            per_client_uploads: false,
            every_round: true,
        }
    }
}

/// A training example targeted by the attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTarget {
    pub client: usize,
    /// Index into the client's local data.
    pub index: usize,
    pub example: Example,
}

/// `per_client` local examples of every client, drawn without replacement
/// (all of them when a client has fewer).
pub fn build_attack_set(locals: &[Dataset], per_client: usize, seed: u64) -> Vec<AttackTarget> {
    let mut out = Vec::new();
    for (client, data) in locals.iter().enumerate() {
        let mut r = rng::stream(seed, STREAM_SAMPLE, 0, client);
        let n = per_client.min(data.len());
        let mut picked = index::sample(&mut r, data.len(), n).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|index| AttackTarget {
            client,
            index,
            example: data.examples[index].clone(),
        }));
    }
    out
}

/// Prefix block and true suffix of the training serialization of
/// `example`; `None` when the sequence is too short to leave a suffix.
pub fn split_prefix_suffix(
    vocab: &Vocab,
    example: &Example,
    prefix_len: usize,
    offset: usize,
    suffix_cap: usize,
) -> Option<(Vec<u32>, Vec<u32>)> {
    let seq = vocab.serialize_example(example);
    let cut = offset + prefix_len;
    if seq.len() <= cut {
        return None;
    }
    let end = seq.len().min(cut + suffix_cap);
    Some((seq[offset..cut].to_vec(), seq[cut..end].to_vec()))
}

/// Generates exactly `min(suffix_len, cap)` tokens after `prefix` with no
/// repetition penalty and no stop token.
pub fn extract(
    model: &LanguageModel<'_>,
    prefix: &[u32],
    suffix_len: usize,
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Vec<u32> {
    let gen = GenerationConfig {
        max_tokens: suffix_len.min(cfg.suffix_cap),
        temperature: cfg.temperature,
        repetition_penalty: 1.0,
    };
    generate_until(model, prefix, &gen, &[], rng).tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCase {
    pub client: usize,
    pub index: usize,
    pub prefix_offset: usize,
    pub prefix: Vec<u32>,
    pub true_suffix: Vec<u32>,
    pub generated_suffix: Vec<u32>,
    pub bleu: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub round: usize,
    pub cases: Vec<AttackCase>,
    /// Targets too short for the configured prefix.
    pub skipped: usize,
    pub mean_bleu: f64,
    pub mean_rouge_l: f64,
}

impl AttackReport {
    pub fn from_cases(round: usize, cases: Vec<AttackCase>, skipped: usize) -> Self {
        let n = cases.len();
        let mean = |f: fn(&AttackCase) -> f64| {
            if n == 0 {
                0.0
            } else {
                cases.iter().map(f).sum::<f64>() / n as f64
            }
        };
        AttackReport {
            round,
            mean_bleu: mean(|c| c.bleu),
            mean_rouge_l: mean(|c| c.rouge_l),
            cases,
            skipped,
        }
    }
}

/// Attacks one shared adapter with every target.
pub fn attack_round(
    vocab: &Vocab,
    backbone: &BackboneParams,
    shared: &SharedAdapter,
    targets: &[AttackTarget],
    cfg: &AttackConfig,
    round: usize,
    seed: u64,
) -> AttackReport {
    let model = LanguageModel::new(vocab, backbone, shared.params());
    let results: Vec<Option<AttackCase>> = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let Some((prefix, suffix)) =
                split_prefix_suffix(vocab, &t.example, cfg.prefix_len, cfg.prefix_offset, cfg.suffix_cap)
            else {
                log::info!(
                    "attack: client {} example {} shorter than the prefix, skipped",
                    t.client,
                    t.index
                );
                return None;
            };
            let mut r = rng::stream(seed, STREAM_DECODE, round, i);
            let generated = extract(&model, &prefix, suffix.len(), cfg, &mut r);
            Some(AttackCase {
                client: t.client,
                index: t.index,
                prefix_offset: cfg.prefix_offset,
                bleu: bleu(&generated, &suffix, 4),
                rouge_l: rouge_l(&generated, &suffix),
                prefix,
                true_suffix: suffix,
                generated_suffix: generated,
            })
        })
        .collect();
    let skipped = results.iter().filter(|c| c.is_none()).count();
    AttackReport::from_cases(round, results.into_iter().flatten().collect(), skipped)
}

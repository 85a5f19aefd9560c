//! Utility evaluation: a pluggable pairwise judge and the dual-sided
//! protocol that judges every pair in both presentation orders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{bleu_with, rouge_l, tokenize, Smoothing};
use crate::rng;
use crate::tinylm::{generate, GenerationConfig, LanguageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Tie,
    Loss,
}

impl Outcome {
    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Win => "win",
            Outcome::Tie => "tie",
            Outcome::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Respects {
    pub helpfulness: f64,
    pub relevance: f64,
    pub correctness: f64,
    pub coherence: f64,
}

impl Respects {
    pub fn uniform(score: f64) -> Self {
        Respects {
            helpfulness: score,
            relevance: score,
            correctness: score,
            coherence: score,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.helpfulness + self.relevance + self.correctness + self.coherence) / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score_a: f64,
    pub score_b: f64,
    pub respects_a: Respects,
    pub respects_b: Respects,
    /// From side A's point of view.
    pub outcome: Outcome,
}

/// Compares two outputs for the same instruction against a reference.
/// Scores are in [0, 100].
pub trait Judge: Sync {
    fn judge_pair(&self, output_a: &str, output_b: &str, reference: &str) -> JudgeVerdict;
}

pub fn outcome_with_margin(score_a: f64, score_b: f64, margin: f64) -> Outcome {
    if score_a > score_b + margin {
        Outcome::Win
    } else if score_b > score_a + margin {
        Outcome::Loss
    } else {
        Outcome::Tie
    }
}

/// Scores each side by `100 * (rouge_l + bleu) / 2` against the reference.
/// All four respects carry that one similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSimilarityJudge {
    pub tie_margin: f64,
    pub smoothing: Smoothing,
}

impl Default for ReferenceSimilarityJudge {
    fn default() -> Self {
        ReferenceSimilarityJudge {
            tie_margin: 1.0,
            smoothing: Smoothing::AddOne,
        }
    }
}

impl ReferenceSimilarityJudge {
    pub fn similarity(&self, output: &str, reference: &str) -> f64 {
        let (o, r) = (tokenize(output), tokenize(reference));
        100.0 * (0.5 * rouge_l(&o, &r) + 0.5 * bleu_with(&o, &r, 4, self.smoothing))
    }
}

impl Judge for ReferenceSimilarityJudge {
    fn judge_pair(&self, output_a: &str, output_b: &str, reference: &str) -> JudgeVerdict {
        let score_a = self.similarity(output_a, reference);
        let score_b = self.similarity(output_b, reference);
        JudgeVerdict {
            score_a,
            score_b,
            respects_a: Respects::uniform(score_a),
            respects_b: Respects::uniform(score_b),
            outcome: outcome_with_margin(score_a, score_b, self.tie_margin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_tokens: usize,
    pub repetition_penalty: f64,
    pub tie_margin: f64,
    pub smoothing: Smoothing,
    /// Evaluate after every round rather than only the last.
    pub every_round: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_tokens: 32,
            repetition_penalty: 1.0,
            tie_margin: 1.0,
            smoothing: Smoothing::AddOne,
            every_round: true,
        }
    }
}

impl EvalConfig {
    pub fn judge(&self) -> ReferenceSimilarityJudge {
        ReferenceSimilarityJudge {
            tie_margin: self.tie_margin,
            smoothing: self.smoothing,
        }
    }

    fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            max_tokens: self.max_tokens,
            temperature: 0.0,
            repetition_penalty: self.repetition_penalty,
        }
    }
}

/// 64-bit FNV-1a of the instruction text, as 16 hex digits.
pub fn instruction_key(instruction: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in instruction.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Greedy answer to `instruction`.
pub fn respond(model: &LanguageModel<'_>, instruction: &str, cfg: &EvalConfig) -> String {
    let prompt = model.vocab.instruction_prompt(instruction);
    let g = generate(model, &prompt, &cfg.generation(), &mut rng::seeded(0));
    model.vocab.decode_text(&g.tokens)
}

/// Baseline answers keyed by [`instruction_key`].
pub type BaselineOutputs = BTreeMap<String, String>;

pub fn baseline_outputs(model: &LanguageModel<'_>, testset: &Dataset, cfg: &EvalConfig) -> BaselineOutputs {
    testset
        .examples
        .par_iter()
        .map(|e| {
            let text = e.prompt_text();
            (instruction_key(&text), respond(model, &text, cfg))
        })
        .collect()
}

pub fn save_baseline_outputs(path: impl AsRef<Path>, outputs: &BaselineOutputs) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(outputs).expect("string map serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_baseline_outputs(path: impl AsRef<Path>) -> Result<BaselineOutputs> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub key: String,
    pub instruction: String,
    pub reference: String,
    pub output: String,
    pub baseline_output: String,
    /// The model's score averaged over both orders.
    pub score: f64,
    pub baseline_score: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_score: f64,
    pub mean_baseline_score: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// Test instructions without a baseline output.
    pub skipped: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>, skipped: usize) -> Self {
        let n = records.len();
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let mean = |f: fn(&EvalRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        EvalReport {
            mean_score: mean(|r| r.score),
            mean_baseline_score: mean(|r| r.baseline_score),
            wins: count(Outcome::Win),
            ties: count(Outcome::Tie),
            losses: count(Outcome::Loss),
            skipped,
            records,
        }
    }
}

/// Win only if won in both orders, loss only if lost in both.
pub fn combine_orders(first: &JudgeVerdict, swapped: &JudgeVerdict) -> Outcome {
    match (first.outcome, swapped.outcome.flipped()) {
        (Outcome::Win, Outcome::Win) => Outcome::Win,
        (Outcome::Loss, Outcome::Loss) => Outcome::Loss,
        _ => Outcome::Tie,
    }
}

/// Judges the model's greedy answers against the baseline answers, twice
/// per instruction with the sides swapped.
pub fn dual_sided_evaluate(
    model: &LanguageModel<'_>,
    baseline: &BaselineOutputs,
    testset: &Dataset,
    judge: &dyn Judge,
    cfg: &EvalConfig,
) -> EvalReport {
    let results: Vec<Option<EvalRecord>> = testset
        .examples
        .par_iter()
        .map(|e| {
            let text = e.prompt_text();
            let key = instruction_key(&text);
            let Some(base) = baseline.get(&key) else {
                log::warn!("eval: no baseline output for {key} ({text}), skipped");
                return None;
            };
            let output = respond(model, &text, cfg);
            let first = judge.judge_pair(&output, base, &e.response);
            let swapped = judge.judge_pair(base, &output, &e.response);
            Some(EvalRecord {
                score: (first.score_a + swapped.score_b) / 2.0,
                baseline_score: (first.score_b + swapped.score_a) / 2.0,
                outcome: combine_orders(&first, &swapped),
                key,
                instruction: text,
                reference: e.response.clone(),
                output,
                baseline_output: base.clone(),
            })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    EvalReport::from_records(results.into_iter().flatten().collect(), skipped)
}

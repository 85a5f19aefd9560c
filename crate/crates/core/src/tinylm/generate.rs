use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, LanguageModel, BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_tokens: usize,
    /// 0 selects greedy decoding.
    pub temperature: f64,
    /// Divides positive (multiplies negative) logits of tokens already
    /// generated in the current continuation. 1 disables the penalty.
    pub repetition_penalty: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_tokens: 32,
            temperature: 0.0,
            repetition_penalty: 1.3,
        }
    }
}

impl GenerationConfig {
    pub fn greedy(max_tokens: usize) -> Self {
        GenerationConfig {
            max_tokens,
            temperature: 0.0,
            repetition_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Generated tokens, without the stop token.
    pub tokens: Vec<u32>,
    /// True when generation ended on a stop token rather than `max_tokens`.
    pub stopped: bool,
}

impl Generation {
    pub fn truncated(&self) -> bool {
        !self.stopped
    }
}

/// Greedy pick with lowest-id tie-break.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Autoregressive decoding until a token in `stop` or `max_tokens`.
/// PAD and BOS are never emitted.
pub fn generate_until<R: Rng>(
    model: &LanguageModel<'_>,
    prompt: &[u32],
    cfg: &GenerationConfig,
    stop: &[u32],
    rng: &mut R,
) -> Generation {
    let mut history = prompt.to_vec();
    let mut out = Vec::new();
    let mut seen = vec![false; model.vocab_size()];
    let mut ws = model.workspace();
    for _ in 0..cfg.max_tokens {
        model.logits_into(&history, &mut ws);
        let z = &mut ws.logits;
        z[PAD as usize] = f64::NEG_INFINITY;
        z[BOS as usize] = f64::NEG_INFINITY;
        if cfg.repetition_penalty != 1.0 {
            for (v, zv) in z.iter_mut().enumerate() {
                if seen[v] && zv.is_finite() {
                    if *zv > 0.0 {
                        *zv /= cfg.repetition_penalty;
                    } else {
                        *zv *= cfg.repetition_penalty;
                    }
                }
            }
        }
        let next = if cfg.temperature <= 0.0 {
            argmax(z) as u32
        } else {
            z.iter_mut().for_each(|x| *x /= cfg.temperature);
            softmax_in_place(z);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = z.len() - 1;
            for (i, &p) in z.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            // u may land past the accumulated mass through rounding; walk
            // back to the last token that can actually be sampled.
            while z[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick as u32
        };
        if stop.contains(&next) {
            return Generation {
                tokens: out,
                stopped: true,
            };
        }
        seen[next as usize] = true;
        out.push(next);
        history.push(next);
    }
    Generation {
        tokens: out,
        stopped: false,
    }
}

/// Decodes until EOS or `max_tokens`.
pub fn generate<R: Rng>(
    model: &LanguageModel<'_>,
    prompt: &[u32],
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Generation {
    generate_until(model, prompt, cfg, &[EOS], rng)
}

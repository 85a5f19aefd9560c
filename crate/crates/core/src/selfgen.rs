//! Self-generation of synthetic instruction data.
//!
//! 1. The shared model writes new instructions from sampled local
//!    demonstrations; near-duplicates (Rouge-L above the threshold against
//!    the local instructions and already accepted candidates) are dropped.
//! 2. The shared model answers each surviving instruction, prompted with a
//!    preamble and demonstration pairs, under a repetition penalty.
//! 3. The private model scores each pair by instruction-following
//!    difficulty (IFD) and the top `keep` are returned.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Provenance};
use crate::error::{Error, Result};
use crate::metrics::{rouge_l, rouge_l_scores, tokenize, RougeVariant, TokenSeq};
use crate::tinylm::{generate_until, GenerationConfig, LanguageModel, BOS, EOS, SEP};

pub const PROVENANCE_SOURCE: &str = "selfgen";

/// Which end of the IFD ranking is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfdOrder {
    #[default]
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfGenConfig {
    pub num_demonstrations: usize,
    /// Instruction candidates requested per call (2M).
    pub candidates: usize,
    /// Synthetic examples kept after IFD ranking (M).
    pub keep: usize,
    pub rouge_threshold: f64,
    pub rouge_variant: RougeVariant,
    pub instruction_generation: GenerationConfig,
    pub response_generation: GenerationConfig,
    /// Responses longer than this are rejected.
    pub max_response_tokens: usize,
    /// Sampling attempts per requested candidate before giving up.
    pub retry_factor: usize,
    pub ifd_order: IfdOrder,
    pub preamble: String,
}

impl Default for SelfGenConfig {
    fn default() -> Self {
        SelfGenConfig {
            num_demonstrations: 8,
            candidates: 32,
            keep: 16,
            rouge_threshold: 0.7,
            rouge_variant: RougeVariant::F1,
            instruction_generation: GenerationConfig {
                max_tokens: 20,
                temperature: 1.0,
                repetition_penalty: 1.3,
            },
            response_generation: GenerationConfig {
                max_tokens: 24,
                temperature: 0.7,
                repetition_penalty: 1.3,
            },
            max_response_tokens: 24,
            retry_factor: 3,
            ifd_order: IfdOrder::Descending,
            preamble: "you are a helpful , respectful and honest assistant .".to_string(),
        }
    }
}

impl SelfGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep > self.candidates {
            return Err(Error::invalid(format!(
                "selfgen.keep ({}) exceeds selfgen.candidates ({})",
                self.keep, self.candidates
            )));
        }
        if !(self.rouge_threshold > 0.0 && self.rouge_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "selfgen.rouge_threshold must be in (0, 1], got {}",
                self.rouge_threshold
            )));
        }
        if self.num_demonstrations == 0 {
            return Err(Error::invalid("selfgen.num_demonstrations must be at least 1"));
        }
        Ok(())
    }
}

/// Round and client a pipeline run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfGenTag {
    pub round: usize,
    pub client: usize,
}

/// `n` demonstrations without replacement, or with replacement when the
/// local data has fewer than `n` examples.
pub fn sample_demonstrations<R: Rng>(local: &Dataset, n: usize, rng: &mut R) -> Vec<Example> {
    assert!(!local.is_empty(), "sample_demonstrations: empty local data");
    if local.len() >= n {
        local.examples.choose_multiple(rng, n).cloned().collect()
    } else {
        (0..n)
            .map(|_| local.examples.choose(rng).unwrap().clone())
            .collect()
    }
}

/// `BOS d1 SEP BOS d2 SEP ... BOS`: demonstration instructions followed by
/// the cue for a new one.
pub fn instruction_prompt(model: &LanguageModel<'_>, demos: &[Example]) -> Vec<u32> {
    let mut prompt = Vec::new();
    for d in demos {
        prompt.push(BOS);
        prompt.extend(model.encode(&d.prompt_text()));
        prompt.push(SEP);
    }
    prompt.push(BOS);
    prompt
}

/// Samples up to `count` non-empty instructions, retrying empty
/// continuations within a budget of `count * retry_factor` attempts.
pub fn generate_instruction_candidates<R: Rng>(
    model_g: &LanguageModel<'_>,
    demos: &[Example],
    count: usize,
    cfg: &SelfGenConfig,
    tag: SelfGenTag,
    rng: &mut R,
) -> Result<Vec<String>> {
    assert!(!demos.is_empty(), "generate_instruction_candidates: no demonstrations");
    let prompt = instruction_prompt(model_g, demos);
    let budget = count.saturating_mul(cfg.retry_factor.max(1));
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < budget {
        attempts += 1;
        let g = generate_until(model_g, &prompt, &cfg.instruction_generation, &[SEP, EOS], rng);
        if !g.tokens.is_empty() {
            out.push(model_g.vocab.decode_text(&g.tokens));
        }
    }
    if out.is_empty() && count > 0 {
        return Err(Error::SelfGen {
            round: tag.round,
            client: tag.client,
            reason: format!("no non-empty instruction in {attempts} attempts"),
        });
    }
    Ok(out)
}

/// Keeps a candidate iff its Rouge-L against every pool entry (including
/// previously accepted candidates) is at most `threshold`. Order-preserving.
pub fn filter_instructions(
    candidates: &[String],
    pool: &[String],
    threshold: f64,
    variant: RougeVariant,
) -> Vec<String> {
    let mut pool_tokens: Vec<TokenSeq> = pool.iter().map(|p| tokenize(p)).collect();
    let mut kept = Vec::new();
    for cand in candidates {
        let toks = tokenize(cand);
        let max = pool_tokens
            .iter()
            .map(|p| rouge_l_scores(&toks, p).get(variant))
            .fold(0.0, f64::max);
        if max <= threshold {
            kept.push(cand.clone());
            pool_tokens.push(toks);
        }
    }
    kept
}

/// Preamble, demonstration pairs, then `BOS instruction SEP`.
pub fn response_prompt(
    model: &LanguageModel<'_>,
    preamble: &str,
    demos: &[Example],
    instruction: &str,
) -> Vec<u32> {
    let mut prompt = model.encode(preamble);
    for d in demos {
        prompt.extend(model.vocab.serialize_example(d));
    }
    prompt.extend(model.vocab.instruction_prompt(instruction));
    prompt
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedResponse {
    pub text: String,
    /// Generation hit `max_tokens` before EOS.
    pub truncated: bool,
}

/// Answers `instruction` with the shared model. `None` when the heuristic
/// failure filter rejects the output (empty or over-length).
pub fn generate_response<R: Rng>(
    model_g: &LanguageModel<'_>,
    instruction: &str,
    demos: &[Example],
    cfg: &SelfGenConfig,
    rng: &mut R,
) -> Option<GeneratedResponse> {
    let prompt = response_prompt(model_g, &cfg.preamble, demos, instruction);
    let g = generate_until(model_g, &prompt, &cfg.response_generation, &[EOS, SEP], rng);
    if g.tokens.is_empty() || g.tokens.len() > cfg.max_response_tokens {
        return None;
    }
    Some(GeneratedResponse {
        text: model_g.vocab.decode_text(&g.tokens),
        truncated: g.truncated(),
    })
}

/// Ratio of the response's mean cross-entropy given the instruction to its
/// mean cross-entropy given an empty instruction, both under `model_l`.
pub fn ifd_score(model_l: &LanguageModel<'_>, instruction: &str, response: &str) -> f64 {
    let mut target = model_l.encode(response);
    assert!(!target.is_empty(), "ifd_score: empty response");
    target.push(EOS);
    let conditioned = model_l.vocab.instruction_prompt(instruction);
    let unconditioned = [BOS, SEP];
    let (_, ce_cond) = model_l.sequence_logprob(&target, &conditioned);
    let (_, ce_free) = model_l.sequence_logprob(&target, &unconditioned);
    ce_cond / ce_free.max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub instruction: String,
    pub response: String,
    pub ifd: f64,
    pub truncated: bool,
    pub category: String,
    /// Position in generation order.
    pub order: usize,
}

/// Indices of the `keep` best candidates by IFD; ties go to earlier
/// generation order.
pub fn select_top(candidates: &[Candidate], keep: usize, order: IfdOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (candidates[a].ifd, candidates[b].ifd);
        let by_score = match order {
            IfdOrder::Descending => y.total_cmp(&x),
            IfdOrder::Ascending => x.total_cmp(&y),
        };
        by_score.then(candidates[a].order.cmp(&candidates[b].order))
    });
    idx.truncate(keep);
    idx
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfGenStats {
    pub generated: usize,
    pub passed_filter: usize,
    pub failed_responses: usize,
    pub scored: usize,
    pub selected: usize,
    /// Selected responses identical (as tokens) to some local response.
    pub verbatim_collisions: usize,
}

impl SelfGenStats {
    pub fn collision_rate(&self) -> f64 {
        if self.selected == 0 {
            0.0
        } else {
            self.verbatim_collisions as f64 / self.selected as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfGenOutput {
    pub dataset: Dataset,
    /// Every scored candidate, in generation order.
    pub candidates: Vec<Candidate>,
    pub stats: SelfGenStats,
}

fn nearest_category(instruction: &str, demos: &[Example]) -> String {
    let toks = tokenize(instruction);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, d) in demos.iter().enumerate() {
        let s = rouge_l(&toks, &tokenize(&d.instruction));
        if s > best.0 {
            best = (s, i);
        }
    }
    demos[best.1].category.clone()
}

/// The full pipeline. An empty result (all candidates filtered or failed)
/// is not an error; only a generator that produces nothing at all is.
pub fn self_generate<R: Rng>(
    model_g: &LanguageModel<'_>,
    model_l: &LanguageModel<'_>,
    local: &Dataset,
    cfg: &SelfGenConfig,
    tag: SelfGenTag,
    rng: &mut R,
) -> Result<SelfGenOutput> {
    cfg.validate()?;
    if local.is_empty() {
        return Err(Error::invalid("self_generate: empty local data"));
    }
    let demos = sample_demonstrations(local, cfg.num_demonstrations, rng);
    let raw = match generate_instruction_candidates(model_g, &demos, cfg.candidates, cfg, tag, rng) {
        Ok(raw) => raw,
        Err(e @ Error::SelfGen { .. }) => {
            log::warn!("{e}; continuing without synthetic data");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let pool = local.instructions();
    let accepted = filter_instructions(&raw, &pool, cfg.rouge_threshold, cfg.rouge_variant);

    let mut stats = SelfGenStats {
        generated: raw.len(),
        passed_filter: accepted.len(),
        ..Default::default()
    };
    let mut candidates = Vec::new();
    for instruction in accepted {
        let Some(resp) = generate_response(model_g, &instruction, &demos, cfg, rng) else {
            stats.failed_responses += 1;
            continue;
        };
        let ifd = ifd_score(model_l, &instruction, &resp.text);
        candidates.push(Candidate {
            category: nearest_category(&instruction, &demos),
            instruction,
            response: resp.text,
            ifd,
            truncated: resp.truncated,
            order: candidates.len(),
        });
    }
    stats.scored = candidates.len();

    let local_responses: Vec<TokenSeq> =
        local.examples.iter().map(|e| tokenize(&e.response)).collect();
    let mut examples = Vec::new();
    for i in select_top(&candidates, cfg.keep, cfg.ifd_order) {
        let c = &candidates[i];
        if local_responses.contains(&tokenize(&c.response)) {
            stats.verbatim_collisions += 1;
        }
        let mut ex = Example::new(c.instruction.clone(), c.response.clone(), c.category.clone());
        ex.provenance = Some(Provenance {
            source: PROVENANCE_SOURCE.to_string(),
            round: tag.round,
            client: tag.client,
            ifd: c.ifd,
            truncated: c.truncated,
        });
        examples.push(ex);
    }
    stats.selected = examples.len();
    if examples.is_empty() {
        log::warn!(
            "round {} client {}: self-generation produced no usable examples",
            tag.round,
            tag.client
        );
    }
    Ok(SelfGenOutput {
        dataset: Dataset::new(format!("synthetic_r{}_c{}", tag.round, tag.client), examples),
        candidates,
        stats,
    })
}

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_round, build_attack_set, AttackReport, AttackTarget};
use crate::corpus::{
    dirichlet_partition, generate_toy_corpus, load_dataset, save_dataset, split_train_test, Dataset, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::evaljudge::{baseline_outputs, dual_sided_evaluate, save_baseline_outputs, BaselineOutputs, EvalReport};
use crate::fedcore::{
    Algorithm, BaselineOutput, ClientState, ClientStep, Federation, RoundOutput, ServerState, SharedAdapter,
    Substitution,
};
use crate::metrics::{distinct_n, tokenize};
use crate::rng;
use crate::tinylm::{
    load_checkpoint, pretrain_backbone_with_vocab, save_checkpoint, AdapterParams, BackboneParams, Checkpoint,
    LanguageModel, Vocab,
};

use super::config::{Manifest, RunConfig, Variant};

/// Everything that does not depend on the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Base {
    pub vocab: Vocab,
    pub backbone: BackboneParams,
    pub public: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

fn category_set(d: &Dataset) -> HashSet<String> {
    d.examples.iter().map(|e| e.category.clone()).collect()
}

pub fn private_corpus(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.corpus.dataset_path {
        Some(p) => load_dataset(p),
        None => Ok(generate_toy_corpus(
            cfg.corpus.num_categories,
            cfg.corpus.examples_per_category,
            rng::stream_seed(cfg.seed, "private-corpus", 0, rng::NO_CLIENT),
        )),
    }
}

/// Toy tasks over every template, minus any instruction that also occurs
/// in the private data.
fn fresh_toy(cfg: &RunConfig, label: &str, per_category: usize, private: &Dataset) -> Dataset {
    let seen: HashSet<String> = private.instructions().into_iter().collect();
    let mut d = generate_toy_corpus(
        cfg.corpus.public_categories,
        per_category,
        rng::stream_seed(cfg.seed, label, 0, rng::NO_CLIENT),
    );
    d.examples.retain(|e| !seen.contains(&e.instruction));
    d.name = label.to_string();
    d
}

/// The public corpus the backbone is pretrained on.
pub fn public_corpus(cfg: &RunConfig, private: &Dataset) -> Dataset {
    let mut d = fresh_toy(cfg, "public-corpus", cfg.corpus.public_per_category, private);
    if !cfg.corpus.public_includes_private_tasks {
        let tasks = category_set(private);
        d.examples.retain(|e| !tasks.contains(&e.category));
    }
    d
}

/// Pretrains (or loads) the backbone and splits the private data.
pub fn prepare_base(cfg: &RunConfig) -> Result<Base> {
    cfg.validate()?;
    let private = private_corpus(cfg)?;
    let public = public_corpus(cfg, &private);
    if public.is_empty() && cfg.model.backbone_path.is_none() {
        return Err(Error::Config {
            key: "corpus.public_categories".into(),
            reason: "the public corpus has no task outside the private data; raise it or set \
                     corpus.public_includes_private_tasks=true"
                .into(),
        });
    }
    let (vocab, backbone) = match &cfg.model.backbone_path {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.backbone.dim != cfg.model.dim || ck.backbone.window() != cfg.model.window {
                return Err(Error::Config {
                    key: "model.backbone_path".into(),
                    reason: format!(
                        "{p}: backbone has dim {} and window {}, config asks for {} and {}",
                        ck.backbone.dim,
                        ck.backbone.window(),
                        cfg.model.dim,
                        cfg.model.window
                    ),
                });
            }
            (ck.vocab, ck.backbone)
        }
        None => {
            let texts: Vec<String> = public
                .examples
                .iter()
                .chain(&private.examples)
                .flat_map(|e| [e.prompt_text(), e.response.clone()])
                .collect();
            let vocab = Vocab::build(texts.iter().map(String::as_str));
            pretrain_backbone_with_vocab(
                vocab,
                &public,
                &cfg.model.dims(),
                &cfg.model.pretrain(),
                rng::stream_seed(cfg.seed, "backbone", 0, rng::NO_CLIENT),
            )
        }
    };
    let (train, test) = split_train_test(
        &private,
        cfg.corpus.test_fraction,
        rng::stream_seed(cfg.seed, "split", 0, rng::NO_CLIENT),
    )?;
    Ok(Base {
        vocab,
        backbone,
        public,
        train,
        test,
    })
}

pub fn partition(cfg: &RunConfig, base: &Base) -> Result<Vec<Dataset>> {
    let spec = PartitionSpec {
        alpha: cfg.fed.alpha,
        num_clients: cfg.fed.num_clients,
        seed: rng::stream_seed(cfg.seed, "partition", 0, rng::NO_CLIENT),
    };
    let shards = dirichlet_partition(&base.train, &spec)?;
    if let Some(k) = shards.iter().position(Dataset::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "client {k} received no training data at alpha {}; use more data or a larger alpha",
            cfg.fed.alpha
        )));
    }
    Ok(shards)
}

/// Per-client pools that replace self-generated data.
pub fn injected_pools(cfg: &RunConfig, base: &Base, shards: &[Dataset], sub: Substitution) -> Option<Vec<Dataset>> {
    let private: HashSet<String> = category_set(&base.train);
    let all = base.train.union(&base.test);
    let fresh = fresh_toy(cfg, "injected-corpus", cfg.corpus.examples_per_category, &all);
    let pool = |keep: &dyn Fn(&str) -> bool, name: &str| {
        let ex = fresh.examples.iter().filter(|e| keep(&e.category)).cloned().collect();
        Dataset::new(name, ex)
    };
    match sub {
        Substitution::None => None,
        Substitution::Ood => Some(vec![pool(&|c| !private.contains(c), "ood")]),
        Substitution::Simd => Some(vec![pool(&|c| private.contains(c), "simd")]),
        Substitution::Ideal => {
            // One fresh example per local example, of the same category.
            let mut by_cat: BTreeMap<&str, Vec<_>> = BTreeMap::new();
            for e in &fresh.examples {
                by_cat.entry(e.category.as_str()).or_default().push(e.clone());
            }
            let pools = shards
                .iter()
                .enumerate()
                .map(|(k, shard)| {
                    let mut next: BTreeMap<&str, usize> = BTreeMap::new();
                    let ex = shard
                        .examples
                        .iter()
                        .filter_map(|e| {
                            let list = by_cat.get(e.category.as_str())?;
                            let i = next.entry(e.category.as_str()).or_insert(k);
                            *i += 1;
                            Some(list[*i % list.len()].clone())
                        })
                        .collect();
                    Dataset::new(format!("ideal_c{k}"), ex)
                })
                .collect();
            Some(pools)
        }
    }
}

/// What an observer sees after each federated round.
pub struct RoundEvent<'a> {
    pub variant: &'a Variant,
    pub federation: &'a Federation<'a>,
    pub server_before: &'a ServerState,
    pub output: &'a RoundOutput,
    pub clients: &'a [ClientState],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    /// Client id, or `all` for the aggregate row.
    pub client: String,
    pub local_size: usize,
    pub synthetic_size: usize,
    pub generated: Option<usize>,
    pub passed_filter: Option<usize>,
    pub selected: Option<usize>,
    pub collision_rate: Option<f64>,
    pub weight: f64,
    pub train_ce: f64,
    pub eval_score: Option<f64>,
    pub attack_bleu: Option<f64>,
    pub attack_rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub round: usize,
    /// `server` or `upload_<client>`.
    pub target: String,
    /// `case` or `summary`.
    pub kind: String,
    pub client: Option<usize>,
    pub index: Option<usize>,
    pub prefix_offset: usize,
    pub cases: usize,
    pub bleu: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub round: usize,
    pub model: String,
    /// `case` or `summary`.
    pub kind: String,
    pub key: String,
    pub outcome: String,
    pub score: f64,
    pub baseline_score: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub eval_score: Option<f64>,
    pub attack_bleu: Option<f64>,
    pub attack_rouge_l: Option<f64>,
    pub train_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub algorithm: String,
    pub rounds: usize,
    pub final_score: f64,
    pub final_baseline_score: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub first_attack_bleu: Option<f64>,
    pub first_attack_rouge_l: Option<f64>,
    pub final_attack_bleu: Option<f64>,
    pub final_attack_rouge_l: Option<f64>,
    /// Distinct bigram ratio of the final synthetic instructions.
    pub synthetic_distinct_2: Option<f64>,
    pub final_train_ce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub summary: VariantSummary,
    pub per_round: Vec<RoundMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub variants: Vec<VariantResult>,
}

impl ExperimentResult {
    pub fn get(&self, variant: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.summary.variant == variant)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    base: &'a Base,
    shards: &'a [Dataset],
    baseline: &'a BaselineOutputs,
    targets: &'a [AttackTarget],
}

struct Collected {
    rounds: Vec<RoundRow>,
    attacks: Vec<AttackRow>,
    evals: Vec<EvalRow>,
    metrics: Vec<RoundMetrics>,
    last_eval: Option<(f64, f64, usize, usize, usize)>,
}

impl<'a> Ctx<'a> {
    fn checkpoint(&self, adapter: &AdapterParams) -> Checkpoint {
        Checkpoint {
            vocab: self.base.vocab.clone(),
            backbone: self.base.backbone.clone(),
            adapter: Some(adapter.clone()),
        }
    }

    /// Evaluates every model and returns per-model reports.
    fn evaluate(&self, models: &[(String, &AdapterParams)]) -> Vec<(String, EvalReport)> {
        let judge = self.cfg.eval.judge();
        models
            .iter()
            .map(|(name, adapter)| {
                let m = LanguageModel::new(&self.base.vocab, &self.base.backbone, adapter);
                (name.clone(), dual_sided_evaluate(&m, self.baseline, &self.base.test, &judge, &self.cfg.eval))
            })
            .collect()
    }

    fn attack(&self, targets: &[(String, SharedAdapter)], round: usize) -> Vec<(String, AttackReport)> {
        targets
            .iter()
            .map(|(name, shared)| {
                let rep = attack_round(
                    &self.base.vocab,
                    &self.base.backbone,
                    shared,
                    self.targets,
                    &self.cfg.attack,
                    round,
                    rng::stream_seed(self.cfg.seed, "attack", 0, rng::NO_CLIENT),
                );
                (name.clone(), rep)
            })
            .collect()
    }

    /// Rows and metrics for one round.
    fn record(
        &self,
        out: &mut Collected,
        round: usize,
        steps: &[ClientStep],
        evals: &[(String, EvalReport)],
        attacks: &[(String, AttackReport)],
    ) {
        let client_score = |k: usize| {
            evals
                .iter()
                .find(|(n, _)| *n == format!("client_{k}"))
                .map(|(_, r)| r.mean_score)
        };
        let client_attack = |k: usize| attacks.iter().find(|(n, _)| *n == format!("upload_{k}")).map(|(_, r)| r);
        for s in steps {
            let sg = s.selfgen.as_ref();
            out.rounds.push(RoundRow {
                round,
                client: s.client.to_string(),
                local_size: s.local_size,
                synthetic_size: s.synthetic.len(),
                generated: sg.map(|x| x.generated),
                passed_filter: sg.map(|x| x.passed_filter),
                selected: sg.map(|x| x.selected),
                collision_rate: sg.map(|x| x.collision_rate()),
                weight: s.weight,
                train_ce: s.train_ce,
                eval_score: client_score(s.client),
                attack_bleu: client_attack(s.client).map(|r| r.mean_bleu),
                attack_rouge_l: client_attack(s.client).map(|r| r.mean_rouge_l),
            });
        }
        let n_eval = evals.len().max(1) as f64;
        let eval_score = (!evals.is_empty()).then(|| evals.iter().map(|(_, r)| r.mean_score).sum::<f64>() / n_eval);
        let base_score = evals.iter().map(|(_, r)| r.mean_baseline_score).sum::<f64>() / n_eval;
        let n_att = attacks.len().max(1) as f64;
        let attack_bleu = (!attacks.is_empty()).then(|| attacks.iter().map(|(_, r)| r.mean_bleu).sum::<f64>() / n_att);
        let attack_rouge =
            (!attacks.is_empty()).then(|| attacks.iter().map(|(_, r)| r.mean_rouge_l).sum::<f64>() / n_att);
        let total_local: usize = steps.iter().map(|s| s.local_size).sum();
        let train_ce = if total_local == 0 {
            0.0
        } else {
            steps.iter().map(|s| s.train_ce * s.local_size as f64).sum::<f64>() / total_local as f64
        };
        out.rounds.push(RoundRow {
            round,
            client: "all".into(),
            local_size: total_local,
            synthetic_size: steps.iter().map(|s| s.synthetic.len()).sum(),
            generated: None,
            passed_filter: None,
            selected: None,
            collision_rate: None,
            weight: steps.iter().map(|s| s.weight).sum(),
            train_ce,
            eval_score,
            attack_bleu,
            attack_rouge_l: attack_rouge,
        });
        for (name, rep) in evals {
            for r in &rep.records {
                out.evals.push(EvalRow {
                    round,
                    model: name.clone(),
                    kind: "case".into(),
                    key: r.key.clone(),
                    outcome: r.outcome.as_str().into(),
                    score: r.score,
                    baseline_score: r.baseline_score,
                    wins: 0,
                    ties: 0,
                    losses: 0,
                });
            }
            out.evals.push(EvalRow {
                round,
                model: name.clone(),
                kind: "summary".into(),
                key: String::new(),
                outcome: String::new(),
                score: rep.mean_score,
                baseline_score: rep.mean_baseline_score,
                wins: rep.wins,
                ties: rep.ties,
                losses: rep.losses,
            });
        }
        for (name, rep) in attacks {
            for c in &rep.cases {
                out.attacks.push(AttackRow {
                    round,
                    target: name.clone(),
                    kind: "case".into(),
                    client: Some(c.client),
                    index: Some(c.index),
                    prefix_offset: c.prefix_offset,
                    cases: 1,
                    bleu: c.bleu,
                    rouge_l: c.rouge_l,
                });
            }
            out.attacks.push(AttackRow {
                round,
                target: name.clone(),
                kind: "summary".into(),
                client: None,
                index: None,
                prefix_offset: self.cfg.attack.prefix_offset,
                cases: rep.cases.len(),
                bleu: rep.mean_bleu,
                rouge_l: rep.mean_rouge_l,
            });
        }
        if let Some(score) = eval_score {
            let sum = |f: fn(&EvalReport) -> usize| evals.iter().map(|(_, r)| f(r)).sum();
            out.last_eval = Some((score, base_score, sum(|r| r.wins), sum(|r| r.ties), sum(|r| r.losses)));
        }
        out.metrics.push(RoundMetrics {
            round,
            eval_score,
            attack_bleu,
            attack_rouge_l: attack_rouge,
            train_ce,
        });
    }

    fn attack_targets(&self, server: &SharedAdapter, steps: &[ClientStep]) -> Vec<(String, SharedAdapter)> {
        if self.cfg.attack.per_client_uploads {
            steps
                .iter()
                .filter_map(|s| {
                    s.upload
                        .as_ref()
                        .map(|u| (format!("upload_{}", s.client), SharedAdapter::from_server(u.clone())))
                })
                .collect()
        } else {
            vec![("server".to_string(), server.clone())]
        }
    }

    fn save_synthetic(&self, dir: &Path, round: usize, steps: &[ClientStep]) -> Result<()> {
        for s in steps {
            save_dataset(dir.join(format!("synthetic/round_{round}_client_{}.json", s.client)), &s.synthetic)?;
        }
        Ok(())
    }

    fn run_variant(
        &self,
        variant: &Variant,
        dir: &Path,
        observer: &mut dyn FnMut(&RoundEvent<'_>),
    ) -> Result<VariantResult> {
        create_dir(&dir.join("checkpoints"))?;
        let pools = injected_pools(self.cfg, self.base, self.shards, variant.substitution);
        let fed = Federation {
            vocab: &self.base.vocab,
            backbone: &self.base.backbone,
            cfg: &self.cfg.fed,
            selfgen: &self.cfg.selfgen,
            rank: self.cfg.model.rank,
            seed: self.cfg.seed,
            injected: pools.as_deref(),
        };
        let mut clients = fed.init_clients(self.shards.to_vec());
        let mut out = Collected {
            rounds: Vec::new(),
            attacks: Vec::new(),
            evals: Vec::new(),
            metrics: Vec::new(),
            last_eval: None,
        };
        let algo = variant.algorithm;
        let mut final_synthetic: Vec<Dataset> = Vec::new();
        if algo.is_federated() {
            if algo == Algorithm::Fedpit {
                create_dir(&dir.join("synthetic"))?;
            }
            let mut server = fed.init_server();
            save_checkpoint(dir.join("checkpoints/round_0.ckpt"), &self.checkpoint(server.w_g.params()))?;
            let rounds = self.cfg.fed.rounds;
            for r in 1..=rounds {
                let res = match algo {
                    Algorithm::Fedpit => fed.fedpit_round(&server, &mut clients)?,
                    _ => fed.fedit_round(&server, &mut clients)?,
                };
                observer(&RoundEvent {
                    variant,
                    federation: &fed,
                    server_before: &server,
                    output: &res,
                    clients: &clients,
                });
                let last = r == rounds;
                if algo == Algorithm::Fedpit {
                    self.save_synthetic(dir, r, &res.steps)?;
                }
                save_checkpoint(dir.join(format!("checkpoints/round_{r}.ckpt")), &self.checkpoint(res.server.w_g.params()))?;
                let evals = if self.cfg.eval.every_round || last {
                    let models: Vec<(String, &AdapterParams)> = match algo {
                        Algorithm::Fedpit => clients
                            .iter()
                            .filter_map(|c| c.w_l.as_ref().map(|w| (format!("client_{}", c.id), w)))
                            .collect(),
                        _ => vec![("server".into(), res.server.w_g.params())],
                    };
                    self.evaluate(&models)
                } else {
                    Vec::new()
                };
                let attacks = if self.cfg.attack.every_round || last {
                    self.attack(&self.attack_targets(&res.server.w_g, &res.steps), r)
                } else {
                    Vec::new()
                };
                self.record(&mut out, r, &res.steps, &evals, &attacks);
                if last {
                    final_synthetic = res.steps.iter().map(|s| s.synthetic.clone()).collect();
                    if algo == Algorithm::Fedpit {
                        for c in &clients {
                            if let Some(w) = &c.w_l {
                                save_checkpoint(
                                    dir.join(format!("checkpoints/round_{r}_client_{}.ckpt", c.id)),
                                    &self.checkpoint(w),
                                )?;
                            }
                        }
                    }
                }
                server = res.server;
            }
        } else {
            let res: BaselineOutput = match algo {
                Algorithm::Locit => fed.locit(&clients),
                Algorithm::LocitSg => fed.locit_sg(&clients)?,
                _ => fed.cenit(&clients),
            };
            if algo == Algorithm::LocitSg {
                create_dir(&dir.join("synthetic"))?;
                self.save_synthetic(dir, 1, &res.steps)?;
                final_synthetic = res.steps.iter().map(|s| s.synthetic.clone()).collect();
            }
            let models: Vec<(String, &AdapterParams)> = match &res.shared {
                Some(shared) => vec![("server".into(), shared.params())],
                None => res
                    .steps
                    .iter()
                    .filter_map(|s| s.w_l.as_ref().map(|w| (format!("client_{}", s.client), w)))
                    .collect(),
            };
            for (name, w) in &models {
                let file = if name == "server" { "round_1.ckpt".to_string() } else { format!("round_1_{name}.ckpt") };
                save_checkpoint(dir.join("checkpoints").join(file), &self.checkpoint(w))?;
            }
            let evals = self.evaluate(&models);
            let attacks = match &res.shared {
                Some(shared) => self.attack(&[("server".into(), shared.clone())], 1),
                None => Vec::new(),
            };
            self.record(&mut out, 1, &res.steps, &evals, &attacks);
        }
        write_rows(&dir.join("rounds.csv"), &out.rounds)?;
        write_rows(&dir.join("attack.csv"), &out.attacks)?;
        write_rows(&dir.join("eval.csv"), &out.evals)?;

        let attacked: Vec<&RoundMetrics> = out.metrics.iter().filter(|m| m.attack_rouge_l.is_some()).collect();
        let instr: Vec<Vec<String>> = final_synthetic
            .iter()
            .flat_map(|d| d.examples.iter().map(|e| tokenize(&e.instruction)))
            .collect();
        let (score, base_score, wins, ties, losses) = out.last_eval.unwrap_or((0.0, 0.0, 0, 0, 0));
        let summary = VariantSummary {
            variant: variant.name(),
            algorithm: algo.name().into(),
            rounds: out.metrics.len(),
            final_score: score,
            final_baseline_score: base_score,
            wins,
            ties,
            losses,
            first_attack_bleu: attacked.first().and_then(|m| m.attack_bleu),
            first_attack_rouge_l: attacked.first().and_then(|m| m.attack_rouge_l),
            final_attack_bleu: attacked.last().and_then(|m| m.attack_bleu),
            final_attack_rouge_l: attacked.last().and_then(|m| m.attack_rouge_l),
            synthetic_distinct_2: (!instr.is_empty()).then(|| distinct_n(&instr, 2)),
            final_train_ce: out.metrics.last().map_or(0.0, |m| m.train_ce),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(VariantResult {
            summary,
            per_round: out.metrics,
        })
    }
}

/// Writes the data files shared by all variants of a run.
fn write_data(dir: &Path, base: &Base, shards: &[Dataset]) -> Result<()> {
    let data = dir.join("data");
    create_dir(&data)?;
    save_dataset(data.join("train.json"), &base.train)?;
    save_dataset(data.join("test.json"), &base.test)?;
    for (k, s) in shards.iter().enumerate() {
        save_dataset(data.join(format!("client_{k}.json")), s)?;
    }
    Ok(())
}

/// Runs every configured variant into `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, &mut |_| {})
}

/// As [`run_experiment`], calling `observer` after every federated round.
pub fn run_experiment_with(cfg: &RunConfig, observer: &mut dyn FnMut(&RoundEvent<'_>)) -> Result<ExperimentResult> {
    cfg.validate()?;
    let base = prepare_base(cfg)?;
    run_prepared(cfg, &base, observer)
}

/// Runs with an already prepared base (the sweep reuses one backbone).
pub fn run_prepared(
    cfg: &RunConfig,
    base: &Base,
    observer: &mut dyn FnMut(&RoundEvent<'_>),
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output_dir);
    create_dir(&dir)?;
    write_json(&dir.join("manifest.json"), &Manifest::new(cfg))?;
    let shards = partition(cfg, base)?;
    write_data(&dir, base, &shards)?;

    let zero = AdapterParams::zeros(crate::tinylm::AdapterShape {
        vocab_size: base.vocab.len(),
        dim: base.backbone.dim,
        rank: cfg.model.rank,
    });
    let backbone_only = LanguageModel::new(&base.vocab, &base.backbone, &zero);
    let baseline = baseline_outputs(&backbone_only, &base.test, &cfg.eval);
    save_baseline_outputs(dir.join("baseline_outputs.json"), &baseline)?;
    let targets = build_attack_set(
        &shards,
        cfg.attack.per_client,
        rng::stream_seed(cfg.seed, "attack-set", 0, rng::NO_CLIENT),
    );
    let ctx = Ctx {
        cfg,
        base,
        shards: &shards,
        baseline: &baseline,
        targets: &targets,
    };

    let mut results = Vec::new();
    let mut timing = BTreeMap::new();
    for v in cfg.variants()? {
        let started = Instant::now();
        log::info!("running {}", v.name());
        let res = ctx.run_variant(&v, &dir.join(v.name()), observer)?;
        timing.insert(v.name(), started.elapsed().as_secs_f64());
        log::info!(
            "{}: score {:.2}, attack rouge-l {:?}",
            v.name(),
            res.summary.final_score,
            res.summary.final_attack_rouge_l
        );
        results.push(res);
    }
    let summaries: Vec<&VariantSummary> = results.iter().map(|r| &r.summary).collect();
    write_rows(&dir.join("summary.csv"), &summaries)?;
    // Wall-clock lives apart from the CSVs so those stay reproducible.
    write_json(&dir.join("timing.json"), &timing)?;
    Ok(ExperimentResult { dir, variants: results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub variant: String,
    pub final_score: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub final_attack_bleu: Option<f64>,
    pub final_attack_rouge_l: Option<f64>,
    pub synthetic_distinct_2: Option<f64>,
}

impl SweepRow {
    fn new(alpha: f64, v: &VariantSummary) -> Self {
        SweepRow {
            alpha,
            variant: v.variant.clone(),
            final_score: v.final_score,
            wins: v.wins,
            ties: v.ties,
            losses: v.losses,
            final_attack_bleu: v.final_attack_bleu,
            final_attack_rouge_l: v.final_attack_rouge_l,
            synthetic_distinct_2: v.synthetic_distinct_2,
        }
    }
}

/// One run per alpha under `cfg.output_dir/alpha_<a>`, plus a combined
/// `sweep_summary.csv`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<(f64, ExperimentResult)>> {
    cfg.validate()?;
    let base = prepare_base(cfg)?;
    let root = PathBuf::from(&cfg.output_dir);
    create_dir(&root)?;
    write_json(&root.join("manifest.json"), &Manifest::new(cfg))?;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for &alpha in &cfg.sweep.alphas {
        let mut c = cfg.clone();
        c.fed.alpha = alpha;
        c.output_dir = root.join(format!("alpha_{alpha}")).to_string_lossy().into_owned();
        let res = run_prepared(&c, &base, &mut |_| {})?;
        rows.extend(res.variants.iter().map(|v| SweepRow::new(alpha, &v.summary)));
        out.push((alpha, res));
    }
    let path = root.join("sweep_summary.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

/// Markdown comparison table from the `summary.csv` of each run directory.
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut s = String::from("| run | variant | rounds | score | wins/ties/losses | attack BLEU | attack Rouge-L |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for d in dirs {
        let path = d.join("summary.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no summary.csv (is this a run directory?)"),
            ),
            _ => Error::Csv(e),
        })?;
        for row in r.deserialize::<VariantSummary>() {
            let v = row?;
            s.push_str(&format!(
                "| {} | {} | {} | {:.2} | {}/{}/{} | {} | {} |\n",
                d.display(),
                v.variant,
                v.rounds,
                v.final_score,
                v.wins,
                v.ties,
                v.losses,
                fmt(v.final_attack_bleu),
                fmt(v.final_attack_rouge_l)
            ));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(dir: &Path) -> RunConfig {
        RunConfig::default()
            .with_overrides(&[
                "corpus.num_categories=2",
                "corpus.examples_per_category=12",
                "corpus.public_per_category=10",
                "model.dim=8",
                "model.window=6",
                "model.rank=2",
                "model.pretrain_steps=20",
                "fed.rounds=2",
                "fed.num_clients=2",
                "fed.clients_per_round=2",
                "fed.alpha=5",
                "selfgen.candidates=6",
                "selfgen.keep=3",
                "attack.per_client=3",
                "algorithms=fedit,fedpit,locit,locit_sg,cenit,fedpit+ood,fedpit+ideal",
                &format!("output_dir={}", dir.display()),
            ])
            .unwrap()
    }

    #[test]
    fn layout_and_determinism() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&tmp.path().join("a"));
        let res = run_experiment(&cfg).unwrap();
        let d = &res.dir;
        for f in ["manifest.json", "summary.csv", "baseline_outputs.json", "data/test.json", "data/client_1.json"] {
            assert!(d.join(f).exists(), "{f}");
        }
        for r in 1..=2 {
            for k in 0..2 {
                assert!(d.join(format!("fedpit/synthetic/round_{r}_client_{k}.json")).exists());
            }
            assert!(d.join(format!("fedit/checkpoints/round_{r}.ckpt")).exists());
        }
        assert!(d.join("cenit/checkpoints/round_1.ckpt").exists());
        assert!(d.join("locit/checkpoints/round_1_client_0.ckpt").exists());

        let again = RunConfig { output_dir: tmp.path().join("b").to_string_lossy().into(), ..cfg.clone() };
        run_experiment(&again).unwrap();
        for v in ["fedit", "fedpit", "cenit", "fedpit+ideal"] {
            for f in ["rounds.csv", "attack.csv", "eval.csv"] {
                let a = fs::read(tmp.path().join("a").join(v).join(f)).unwrap();
                let b = fs::read(tmp.path().join("b").join(v).join(f)).unwrap();
                assert_eq!(a, b, "{v}/{f}");
            }
        }
        let table = report(std::slice::from_ref(d)).unwrap();
        assert!(table.contains("fedpit+ood"));
    }

    #[test]
    fn empty_partition_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path())
            .with_overrides(&["fed.num_clients=30", "fed.clients_per_round=30", "fed.alpha=0.01"])
            .unwrap();
        let base = prepare_base(&cfg).unwrap();
        let err = partition(&cfg, &base).unwrap_err();
        assert!(err.to_string().contains("no training data"));
    }
}

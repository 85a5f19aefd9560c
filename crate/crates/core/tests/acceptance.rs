//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use fedpit_core::attack::{attack_round, build_attack_set, AttackConfig};
use fedpit_core::corpus::Dataset;
use fedpit_core::fedcore::{aggregate, SharedAdapter};
use fedpit_core::metrics::{bleu_with, lcs_length, rouge_l, tokenize, Smoothing};
use fedpit_core::rng;
use fedpit_core::runner::{self, load_config, preset, RunConfig, PRESETS};
use fedpit_core::tinylm::{
    adapter_loss_and_grad, corpus_cross_entropy, train_adapter, AdapterParams, AdapterShape, BackboneParams,
    ModelDims, TrainConfig, TrainSeq, Vocab,
};

const CANONICAL_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

#[derive(Deserialize)]
struct Pilot {
    attack_rouge_l_margin: f64,
    attack_bleu_margin: f64,
    utility_margin: f64,
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed.as_secs_f64() < limit_s as f64
}

// ---------------------------------------------------------------------------
// 1. Metric oracles
// ---------------------------------------------------------------------------

fn is_subsequence(sub: &[u8], seq: &[u8]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let n = mask.count_ones() as usize;
        if n <= best {
            continue;
        }
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = n;
        }
    }
    best
}

fn random_seq(r: &mut ChaCha8Rng, alphabet: u8) -> Vec<u8> {
    let n = r.random_range(0..=12);
    (0..n).map(|_| r.random_range(0..alphabet)).collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..500 {
        let alphabet = r.random_range(2..=6);
        let (a, b) = (random_seq(&mut r, alphabet), random_seq(&mut r, alphabet));
        let l = lcs_brute(&a, &b);
        let expect = if a.is_empty() || b.is_empty() {
            0.0
        } else {
            2.0 * l as f64 / (a.len() + b.len()) as f64
        };
        if lcs_length(&a, &b) != l || rouge_l(&a, &b) != expect {
            mismatches += 1;
        }
    }
    let mut bleu_errors = 0;
    let mut identical = 0;
    for i in 0..500 {
        let alphabet = r.random_range(2..=6);
        let a = random_seq(&mut r, alphabet);
        let b = match i % 3 {
            0 => a.clone(),
            1 => {
                // One edit away, when possible.
                let mut b = a.clone();
                if let Some(x) = b.first_mut() {
                    *x = (*x + 1) % alphabet;
                }
                b
            }
            _ => random_seq(&mut r, alphabet),
        };
        let same = a == b && !a.is_empty();
        identical += usize::from(same);
        if (bleu_with(&a, &b, 4, Smoothing::None) == 1.0) != same {
            bleu_errors += 1;
        }
    }
    let t = started.elapsed();
    outcome(
        mismatches == 0 && bleu_errors == 0 && within(t, 10),
        format!(
            "lcs/rouge-l mismatches {mismatches}/500, bleu==1 iff equal violations {bleu_errors}/500 \
             ({identical} identical pairs), {:.2}s",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let instances = 24;
    for _ in 0..instances {
        let v = r.random_range(6..=16);
        let d = r.random_range(1..=4);
        let rank = r.random_range(1..=2);
        let dims = ModelDims { dim: d, window: r.random_range(2..=5), rank, position_decay: 0.85 };
        let backbone = BackboneParams::random(v, &dims, &mut rng::seeded(r.random()));
        let shape = AdapterShape { vocab_size: v, dim: d, rank };
        let theta: Vec<f64> = (0..shape.len()).map(|_| r.random_range(-0.8..0.8)).collect();
        let adapter = AdapterParams::unflatten(&theta, shape).unwrap();
        let seqs: Vec<TrainSeq> = (0..3)
            .map(|_| {
                let n = r.random_range(3..=7);
                let toks = (0..n).map(|_| r.random_range(0..v as u32)).collect();
                TrainSeq::from_tokens(toks, false)
            })
            .collect();
        let (_, grad) = adapter_loss_and_grad(&backbone, &adapter, &seqs);
        let analytic = grad.flatten();
        let h = 1e-5;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = adapter_loss_and_grad(&backbone, &AdapterParams::unflatten(&plus, shape).unwrap(), &seqs).0;
            let lm = adapter_loss_and_grad(&backbone, &AdapterParams::unflatten(&minus, shape).unwrap(), &seqs).0;
            let fd = (lp - lm) / (2.0 * h);
            diff2 += (fd - analytic[i]).powi(2);
            norm2 += fd.powi(2).max(analytic[i].powi(2));
        }
        worst = worst.max(diff2.sqrt() / norm2.sqrt().max(1e-12));
    }
    let t = started.elapsed();
    outcome(
        worst < 1e-4 && within(t, 30),
        format!("{instances} instances, worst relative error {worst:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 3. Aggregation identities
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut idem_fail = 0;
    let mut hull_fail = 0;
    for _ in 0..100 {
        let dim = r.random_range(1..=40);
        let k = r.random_range(1..=6);
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-10.0..10.0)).collect();
        let same: Vec<(Vec<f64>, f64)> = (0..k).map(|_| (v.clone(), r.random_range(0.1..50.0))).collect();
        if aggregate(&same).unwrap() != v {
            idem_fail += 1;
        }
        let updates: Vec<(Vec<f64>, f64)> = (0..k)
            .map(|_| {
                let u = (0..dim).map(|_| r.random_range(-1e3..1e3)).collect();
                (u, r.random_range(0.1..50.0))
            })
            .collect();
        let avg = aggregate(&updates).unwrap();
        for (j, &x) in avg.iter().enumerate() {
            let lo = updates.iter().map(|u| u.0[j]).fold(f64::INFINITY, f64::min);
            let hi = updates.iter().map(|u| u.0[j]).fold(f64::NEG_INFINITY, f64::max);
            if !(lo <= x && x <= hi) {
                hull_fail += 1;
            }
        }
    }
    outcome(
        idem_fail == 0 && hull_fail == 0,
        format!("idempotence failures {idem_fail}/100, hull violations {hull_fail}"),
    )
}

// ---------------------------------------------------------------------------
// Canonical run (shared by 4-7)
// ---------------------------------------------------------------------------

struct Canonical {
    result: runner::ExperimentResult,
    filter_checked: usize,
    filter_violations: usize,
    uploads_checked: usize,
    upload_mismatches: usize,
    elapsed: Duration,
}

fn canonical_config(seed: u64, dir: &Path, algorithms: &str) -> RunConfig {
    preset("fig3-utility")
        .unwrap()
        .with_overrides(&[
            format!("seed={seed}"),
            format!("algorithms={algorithms}"),
            format!("output_dir={}", dir.display()),
        ])
        .unwrap()
}

fn canonical_run(dir: &Path) -> Canonical {
    let cfg = canonical_config(42, dir, "locit,fedit,fedpit,cenit");
    let threshold = cfg.selfgen.rouge_threshold;
    let (mut filter_checked, mut filter_violations) = (0, 0);
    let (mut uploads_checked, mut upload_mismatches) = (0, 0);
    let started = Instant::now();
    let result = runner::run_experiment_with(&cfg, &mut |ev| {
        if ev.variant.name() != "fedpit" {
            return;
        }
        for step in &ev.output.steps {
            let local: Vec<Vec<String>> =
                ev.clients[step.client].local.examples.iter().map(|e| tokenize(&e.instruction)).collect();
            let emitted: Vec<Vec<String>> = step.synthetic.examples.iter().map(|e| tokenize(&e.instruction)).collect();
            for (i, s) in emitted.iter().enumerate() {
                filter_checked += 1;
                let worst = local
                    .iter()
                    .chain(&emitted[..i])
                    .map(|p| rouge_l(s, p))
                    .fold(0.0, f64::max);
                if worst > threshold {
                    filter_violations += 1;
                }
            }
            if let Some(upload) = &step.upload {
                uploads_checked += 1;
                let again = ev.federation.recompute_upload(
                    &ev.server_before.w_g,
                    &step.synthetic,
                    ev.output.round,
                    step.client,
                );
                if again.to_bytes() != upload.to_bytes() {
                    upload_mismatches += 1;
                }
            }
        }
    })
    .expect("canonical run");
    Canonical {
        result,
        filter_checked,
        filter_violations,
        uploads_checked,
        upload_mismatches,
        elapsed: started.elapsed(),
    }
}

fn criterion_4(c: &Canonical) -> Outcome {
    outcome(
        c.filter_checked > 0 && c.filter_violations == 0,
        format!("{} emitted instructions checked, {} above 0.7", c.filter_checked, c.filter_violations),
    )
}

fn criterion_5(c: &Canonical) -> Outcome {
    outcome(
        c.uploads_checked > 0 && c.upload_mismatches == 0,
        format!("{} uploads recomputed, {} byte mismatches", c.uploads_checked, c.upload_mismatches),
    )
}

fn criterion_6(c: &Canonical, pilot: &Pilot) -> Outcome {
    let fedit = c.result.get("fedit").unwrap();
    let fedpit = c.result.get("fedpit").unwrap();
    let first = &fedit.per_round[0];
    let last_it = fedit.per_round.last().unwrap();
    let last_pit = fedpit.per_round.last().unwrap();
    let (it_r1, it_r10) = (first.attack_rouge_l.unwrap(), last_it.attack_rouge_l.unwrap());
    let (it_b10, pit_r10, pit_b10) =
        (last_it.attack_bleu.unwrap(), last_pit.attack_rouge_l.unwrap(), last_pit.attack_bleu.unwrap());
    let grows = it_r10 > it_r1;
    let rouge_gap = it_r10 - pit_r10;
    let bleu_gap = it_b10 - pit_b10;
    let pass = grows
        && rouge_gap >= pilot.attack_rouge_l_margin
        && bleu_gap >= pilot.attack_bleu_margin
        && within(c.elapsed, 300);
    outcome(
        pass,
        format!(
            "FedIT rouge-l r1 {it_r1:.4} -> r{} {it_r10:.4}; FedPIT rouge-l {pit_r10:.4} (gap {rouge_gap:.4}, need \
             >= {}), bleu FedIT {it_b10:.4} FedPIT {pit_b10:.4} (gap {bleu_gap:.4}, need >= {}); run {:.1}s",
            last_it.round,
            pilot.attack_rouge_l_margin,
            pilot.attack_bleu_margin,
            c.elapsed.as_secs_f64()
        ),
    )
}

fn final_score(res: &runner::ExperimentResult, v: &str) -> f64 {
    res.get(v).unwrap().summary.final_score
}

fn criterion_7(c: &Canonical, pilot: &Pilot, scratch: &Path) -> Outcome {
    let s = |v| final_score(&c.result, v);
    let (cen, pit, it, loc) = (s("cenit"), s("fedpit"), s("fedit"), s("locit"));
    let ordered = cen >= pit && pit >= it && it >= loc;
    let primary = ordered && pit - it >= pilot.utility_margin;
    let mut detail = format!(
        "seed 42: CenIT {cen:.2} FedPIT {pit:.2} FedIT {it:.2} LocIT {loc:.2} (order {}, FedPIT-FedIT {:.2}, need >= {})",
        if ordered { "holds" } else { "broken" },
        pit - it,
        pilot.utility_margin
    );
    if primary {
        return outcome(true, detail);
    }
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in CANONICAL_SEEDS {
        let res = if seed == 42 {
            None
        } else {
            Some(runner::run_experiment(&canonical_config(seed, &scratch.join(format!("s{seed}")), "fedit,fedpit")).unwrap())
        };
        let (p, f) = match &res {
            Some(r) => (final_score(r, "fedpit"), final_score(r, "fedit")),
            None => (pit, it),
        };
        wins += usize::from(p >= f);
        per_seed.push(format!("{seed}: {p:.2} vs {f:.2}"));
    }
    detail.push_str(&format!(
        "; fallback FedPIT >= FedIT on {wins}/5 seeds, need 4 [{}]",
        per_seed.join(", ")
    ));
    outcome(wins >= 4, detail)
}

// ---------------------------------------------------------------------------
// 8. Non-IID sweep
// ---------------------------------------------------------------------------

fn criterion_8(scratch: &Path) -> Outcome {
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for seed in CANONICAL_SEEDS {
        let cfg = preset("fig5-noniid")
            .unwrap()
            .with_overrides(&[format!("seed={seed}"), format!("output_dir={}", scratch.join(format!("s{seed}")).display())])
            .unwrap();
        for (alpha, res) in runner::run_sweep(&cfg).unwrap() {
            let (p, f) = (final_score(&res, "fedpit"), final_score(&res, "fedit"));
            cells.push(format!("a{alpha}/s{seed} {p:.2}:{f:.2}"));
            if p < f {
                failures.push(format!("alpha {alpha} seed {seed}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "FedPIT < FedIT in {}/{} (alpha, seed) cells [FedPIT:FedIT {}]",
            failures.len(),
            cells.len(),
            cells.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism
// ---------------------------------------------------------------------------

fn criterion_9(scratch: &Path) -> Outcome {
    let mut compared = 0;
    let mut differing = Vec::new();
    for name in PRESETS {
        let first_dir = scratch.join(format!("{name}-a"));
        let cfg = preset(name)
            .unwrap()
            .with_overrides(&[format!("output_dir={}", first_dir.display())])
            .unwrap();
        let first = runner::run_experiment(&cfg).unwrap();
        let mut again = load_config(first_dir.join("manifest.json")).unwrap();
        again.output_dir = scratch.join(format!("{name}-b")).to_string_lossy().into_owned();
        let second = runner::run_experiment(&again).unwrap();
        for v in &first.variants {
            for f in ["rounds.csv", "attack.csv", "eval.csv"] {
                let a = fs::read(first.dir.join(&v.summary.variant).join(f)).unwrap();
                let b = fs::read(second.dir.join(&v.summary.variant).join(f)).unwrap();
                compared += 1;
                if a != b {
                    differing.push(format!("{name}/{}/{f}", v.summary.variant));
                }
            }
        }
    }
    outcome(
        compared > 0 && differing.is_empty(),
        format!("{compared} files compared across {} presets, differing: {differing:?}", PRESETS.len()),
    )
}

// ---------------------------------------------------------------------------
// 10. Overfit extraction
// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let cfg = RunConfig::default();
    let base = runner::prepare_base(&cfg).unwrap();
    let attack = AttackConfig::default();
    let vocab: &Vocab = &base.vocab;
    let example = base
        .train
        .examples
        .iter()
        .find(|e| vocab.serialize_example(e).len() > attack.prefix_len + 4)
        .unwrap()
        .clone();
    let one = Dataset::new("one", vec![example]);
    let shape = AdapterShape { vocab_size: vocab.len(), dim: base.backbone.dim, rank: cfg.model.rank };
    let mut adapter = AdapterParams::init(shape, cfg.fed.init_scale, &mut rng::seeded(10));
    let train = TrainConfig { epochs: 50, lr: cfg.fed.lr, batch_size: 1, response_only: false };
    let mut ce = f64::INFINITY;
    for _ in 0..40 {
        adapter = train_adapter(&base.backbone, &adapter, vocab, &one, &train, &mut rng::seeded(11));
        ce = corpus_cross_entropy(&base.backbone, &adapter, vocab, &one, false);
        if ce < 0.01 {
            break;
        }
    }
    let targets = build_attack_set(&[one], 1, 0);
    let rep = attack_round(vocab, &base.backbone, &SharedAdapter::from_server(adapter), &targets, &attack, 1, 0);
    let r = rep.cases.first().map_or(0.0, |c| c.rouge_l);
    outcome(r == 1.0, format!("train CE {ce:.4}, extraction rouge-l {r:.4}"))
}

fn main() {
    // Ignore the libtest-style flags cargo passes.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let pilot: Pilot = serde_json::from_str(include_str!("data/pilot.json")).expect("pilot.json");
    let scratch = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {:<28} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "metric oracles", criterion_1());
    report(2, "gradient correctness", criterion_2());
    report(3, "aggregation identities", criterion_3());
    let canonical = canonical_run(&scratch.path().join("canonical"));
    report(4, "filter soundness", criterion_4(&canonical));
    report(5, "privacy by construction", criterion_5(&canonical));
    report(6, "directional privacy", criterion_6(&canonical, &pilot));
    report(7, "directional utility", criterion_7(&canonical, &pilot, &scratch.path().join("seeds")));
    report(8, "non-iid robustness", criterion_8(&scratch.path().join("sweep")));
    report(9, "determinism", criterion_9(&scratch.path().join("det")));
    report(10, "overfit extraction", criterion_10());

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!("\nacceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}


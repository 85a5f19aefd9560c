use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fedpit_core::attack::{attack_round, build_attack_set};
use fedpit_core::corpus::{load_dataset, save_dataset, Dataset};
use fedpit_core::evaljudge::{dual_sided_evaluate, load_baseline_outputs};
use fedpit_core::fedcore::SharedAdapter;
use fedpit_core::rng;
use fedpit_core::runner::{self, load_config, preset, Manifest, RunConfig};
use fedpit_core::tinylm::{load_checkpoint, save_checkpoint, Checkpoint, LanguageModel};

#[derive(Parser)]
#[command(name = "fedpit", version, about = "Federated instruction tuning with self-generated data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config (a run's manifest.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; see `fedpit presets`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override a config value, e.g. `--set fed.rounds=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(p), _) => load_config(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => RunConfig::default(),
        };
        let cfg = base.with_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// Run directory written by `fedpit run`.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint holding the adapter to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the backbone and save it as a checkpoint.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split and partition the data into `<output_dir>/data`.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every configured algorithm.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extraction attack against a saved adapter.
    Attack(CheckpointArgs),
    /// Dual-sided evaluation of a saved adapter.
    Eval(CheckpointArgs),
    /// Repeat the run for each `sweep.alphas` value.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Tabulate the summaries of finished runs.
    Report { dirs: Vec<PathBuf> },
    /// List the preset names.
    Presets,
}

fn run_config(dir: &Path) -> anyhow::Result<RunConfig> {
    load_config(dir.join("manifest.json")).with_context(|| format!("{} is not a run directory", dir.display()))
}

fn client_shards(dir: &Path, n: usize) -> anyhow::Result<Vec<Dataset>> {
    (0..n)
        .map(|k| Ok(load_dataset(dir.join(format!("data/client_{k}.json")))?))
        .collect()
}

fn loaded_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.adapter.is_none() {
        bail!("{} holds no adapter", path.display());
    }
    Ok(ck)
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pretrain { config, out } => {
            let cfg = config.resolve()?;
            let base = runner::prepare_base(&cfg)?;
            let ck = Checkpoint { vocab: base.vocab, backbone: base.backbone, adapter: None };
            save_checkpoint(&out, &ck)?;
            println!("backbone written to {}", out.display());
        }
        Command::Partition { config } => {
            let cfg = config.resolve()?;
            let base = runner::prepare_base(&cfg)?;
            let shards = runner::partition(&cfg, &base)?;
            let dir = PathBuf::from(&cfg.output_dir).join("data");
            std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            save_dataset(dir.join("train.json"), &base.train)?;
            save_dataset(dir.join("test.json"), &base.test)?;
            for (k, s) in shards.iter().enumerate() {
                save_dataset(dir.join(format!("client_{k}.json")), s)?;
                println!("client {k}: {} examples, categories {:?}", s.len(), s.categories());
            }
            let manifest = serde_json::to_string_pretty(&Manifest::new(&cfg))?;
            std::fs::write(PathBuf::from(&cfg.output_dir).join("manifest.json"), manifest)?;
        }
        Command::Run { config } => {
            let cfg = config.resolve()?;
            let res = runner::run_experiment(&cfg)?;
            print!("{}", runner::report(&[res.dir])?);
        }
        Command::Attack(a) => {
            let cfg = run_config(&a.run)?;
            let ck = loaded_checkpoint(&a.checkpoint)?;
            let shards = client_shards(&a.run, cfg.fed.num_clients)?;
            let targets = build_attack_set(
                &shards,
                cfg.attack.per_client,
                rng::stream_seed(cfg.seed, "attack-set", 0, rng::NO_CLIENT),
            );
            let shared = SharedAdapter::from_server(ck.adapter.expect("checked"));
            let rep = attack_round(
                &ck.vocab,
                &ck.backbone,
                &shared,
                &targets,
                &cfg.attack,
                0,
                rng::stream_seed(cfg.seed, "attack", 0, rng::NO_CLIENT),
            );
            println!(
                "cases {} skipped {} bleu {:.4} rouge-l {:.4}",
                rep.cases.len(),
                rep.skipped,
                rep.mean_bleu,
                rep.mean_rouge_l
            );
        }
        Command::Eval(a) => {
            let cfg = run_config(&a.run)?;
            let ck = loaded_checkpoint(&a.checkpoint)?;
            let test = load_dataset(a.run.join("data/test.json"))?;
            let baseline = load_baseline_outputs(a.run.join("baseline_outputs.json"))?;
            let adapter = ck.adapter.as_ref().expect("checked");
            let model = LanguageModel::new(&ck.vocab, &ck.backbone, adapter);
            let rep = dual_sided_evaluate(&model, &baseline, &test, &cfg.eval.judge(), &cfg.eval);
            println!(
                "score {:.2} baseline {:.2} wins {} ties {} losses {} skipped {}",
                rep.mean_score, rep.mean_baseline_score, rep.wins, rep.ties, rep.losses, rep.skipped
            );
        }
        Command::Sweep { config } => {
            let cfg = config.resolve()?;
            let runs = runner::run_sweep(&cfg)?;
            let dirs: Vec<PathBuf> = runs.into_iter().map(|(_, r)| r.dir).collect();
            print!("{}", runner::report(&dirs)?);
        }
        Command::Report { dirs } => {
            if dirs.is_empty() {
                bail!("give at least one run directory");
            }
            print!("{}", runner::report(&dirs)?);
        }
        Command::Presets => {
            for p in runner::PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Configuration, presets and the experiment driver behind the CLI.

mod config;
mod experiment;

pub use config::{
    apply_override, load_config, preset, CorpusConfig, Manifest, ModelConfig, RunConfig, SweepConfig, Variant,
    PRESETS,
};
pub use experiment::{
    injected_pools, partition, prepare_base, private_corpus, public_corpus, report, run_experiment,
    run_experiment_with, run_prepared, run_sweep, AttackRow, Base, EvalRow, ExperimentResult, RoundEvent,
    RoundMetrics, RoundRow, SweepRow, VariantResult, VariantSummary,
};

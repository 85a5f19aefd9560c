use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::evaljudge::EvalConfig;
use crate::fedcore::{Algorithm, FedConfig, Substitution};
use crate::selfgen::SelfGenConfig;
use crate::tinylm::{ModelDims, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub num_categories: usize,
    pub examples_per_category: usize,
    pub test_fraction: f64,
    /// Instruction data to use instead of the toy corpus.
    pub dataset_path: Option<String>,
    /// Size of the public corpus the backbone is pretrained on.
    pub public_categories: usize,
    pub public_per_category: usize,
    /// Keep public examples of the private task categories; by default the
    /// backbone never sees those tasks.
    pub public_includes_private_tasks: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_categories: 4,
            examples_per_category: 50,
            test_fraction: 0.2,
            dataset_path: None,
            public_categories: 8,
            public_per_category: 40,
            public_includes_private_tasks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub window: usize,
    pub rank: usize,
    pub position_decay: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
    /// Load the backbone from this checkpoint instead of pretraining.
    pub backbone_path: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        let pre = PretrainConfig::default();
        ModelConfig {
            dim: dims.dim,
            window: dims.window,
            rank: dims.rank,
            position_decay: dims.position_decay,
            pretrain_steps: pre.steps,
            pretrain_lr: pre.lr,
            pretrain_batch_size: pre.batch_size,
            backbone_path: None,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            dim: self.dim,
            window: self.window,
            rank: self.rank,
            position_decay: self.position_decay,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            batch_size: self.pretrain_batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![10.0, 1.0, 0.1],
        }
    }
}

/// One entry of `algorithms`: an algorithm, optionally with its synthetic
/// data replaced (`fedpit+ood`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub substitution: Substitution,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        let (algo, sub) = match s.split_once('+') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let algorithm = Algorithm::parse(algo).ok_or_else(|| Error::Config {
            key: "algorithms".into(),
            reason: format!(
                "unknown algorithm `{algo}` (expected one of {})",
                Algorithm::ALL.map(|a| a.name()).join(", ")
            ),
        })?;
        let substitution = match sub {
            None => Substitution::None,
            Some(x) => Substitution::parse(x)
                .filter(|s| *s != Substitution::None)
                .ok_or_else(|| Error::Config {
                    key: "algorithms".into(),
                    reason: format!("unknown substitution `{x}` (expected ood, simd or ideal)"),
                })?,
        };
        if substitution != Substitution::None && algorithm != Algorithm::Fedpit {
            return Err(Error::Config {
                key: "algorithms".into(),
                reason: format!("`{s}`: only fedpit takes a substitution"),
            });
        }
        Ok(Variant { algorithm, substitution })
    }

    pub fn name(&self) -> String {
        match self.substitution {
            Substitution::None => self.algorithm.name().to_string(),
            s => format!("{}+{}", self.algorithm.name(), s.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub algorithms: Vec<String>,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub fed: FedConfig,
    pub selfgen: SelfGenConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            algorithms: vec!["fedit".into(), "fedpit".into()],
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            fed: FedConfig::default(),
            selfgen: SelfGenConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: "runs/default".into(),
        }
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.algorithms.iter().map(|s| Variant::parse(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let variants = self.variants()?;
        if variants.is_empty() {
            return Err(config_err("algorithms", "at least one algorithm is required"));
        }
        for (i, v) in variants.iter().enumerate() {
            if variants[..i].contains(v) {
                return Err(config_err("algorithms", format!("`{}` listed twice", v.name())));
            }
        }
        let c = &self.corpus;
        if c.dataset_path.is_none() && (c.num_categories < 2 || c.examples_per_category < 10) {
            return Err(config_err(
                "corpus",
                "the toy corpus needs at least 2 categories and 10 examples per category",
            ));
        }
        if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
            return Err(config_err("corpus.test_fraction", format!("must be in (0, 1), got {}", c.test_fraction)));
        }
        if c.public_categories < 2 || c.public_per_category < 10 {
            return Err(config_err("corpus.public_per_category", "public corpus too small"));
        }
        let m = &self.model;
        if m.dim < 8 {
            return Err(config_err("model.dim", format!("must be at least 8, got {}", m.dim)));
        }
        if m.window == 0 || m.rank == 0 {
            return Err(config_err("model", "window and rank must be at least 1"));
        }
        self.fed.validate()?;
        self.selfgen.validate().map_err(|e| config_err("selfgen", e.to_string()))?;
        if self.attack.prefix_len == 0 || self.attack.suffix_cap == 0 {
            return Err(config_err("attack", "prefix_len and suffix_cap must be at least 1"));
        }
        if self.eval.max_tokens == 0 {
            return Err(config_err("eval.max_tokens", "must be at least 1"));
        }
        if self.sweep.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(config_err("sweep.alphas", "every alpha must be positive"));
        }
        Ok(())
    }

    /// Applies `key=value` overrides to this config.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<RunConfig> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(o, "expected key=value"))?;
            apply_override(&mut value, key.trim(), raw.trim())?;
        }
        serde_json::from_value(value).map_err(|e| config_err("<overrides>", e.to_string()))
    }
}

/// Sets the dotted `key` of `root` from `raw`, parsed according to the
/// type of the value already there.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| config_err(key, "unknown key"))?,
            _ => return Err(config_err(key, "unknown key")),
        };
    }
    let parsed = match slot {
        Value::Bool(_) => raw
            .parse::<bool>()
            .map(Value::Bool)
            .map_err(|_| config_err(key, format!("expected true or false, got `{raw}`")))?,
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| config_err(key, format!("expected a non-negative integer, got `{raw}`")))?,
        Value::Number(_) => {
            let x = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| config_err(key, format!("expected a number, got `{raw}`")))?;
            Value::from(x)
        }
        Value::String(_) => Value::String(raw.to_string()),
        // Optional paths are null until set.
        Value::Null => {
            if raw == "null" {
                Value::Null
            } else {
                Value::String(raw.to_string())
            }
        }
        Value::Array(items) => {
            let parts = raw.split(',').map(str::trim).filter(|s| !s.is_empty());
            if items.first().is_some_and(Value::is_number) {
                parts
                    .map(|p| {
                        p.parse::<f64>()
                            .map(Value::from)
                            .map_err(|_| config_err(key, format!("expected numbers, got `{p}`")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Value::Array)?
            } else {
                Value::Array(parts.map(|p| Value::String(p.to_string())).collect())
            }
        }
        Value::Object(_) => return Err(config_err(key, "cannot assign a whole section")),
    };
    *slot = parsed;
    Ok(())
}

pub const PRESETS: &[&str] = &[
    "fig3-utility",
    "fig4-privacy",
    "table1-substitution",
    "table2-fl-contribution",
    "fig5-noniid",
];

pub fn preset(name: &str) -> Result<RunConfig> {
    let algos = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let base = RunConfig {
        output_dir: format!("runs/{name}"),
        ..RunConfig::default()
    };
    let cfg = match name {
        "fig3-utility" => RunConfig {
            algorithms: algos(&["locit", "locit_sg", "fedit", "fedpit", "cenit"]),
            ..base
        },
        "fig4-privacy" => RunConfig {
            algorithms: algos(&["fedit", "fedpit", "cenit"]),
            ..base
        },
        "table1-substitution" => RunConfig {
            algorithms: algos(&["fedit", "fedpit", "fedpit+ood", "fedpit+simd", "fedpit+ideal", "cenit"]),
            ..base
        },
        "table2-fl-contribution" => RunConfig {
            algorithms: algos(&["locit", "locit_sg", "fedit", "fedpit", "cenit"]),
            ..base
        },
        "fig5-noniid" => RunConfig {
            algorithms: algos(&["fedit", "fedpit"]),
            ..base
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// What a run directory's `manifest.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// Reads a config file; a run manifest is accepted in place of a config.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    let value: Value = serde_json::from_str(&text).map_err(json_err)?;
    let is_manifest = value.get("config").is_some() && value.get("version").is_some();
    if is_manifest {
        Ok(serde_json::from_value::<Manifest>(value).map_err(json_err)?.config)
    } else {
        serde_json::from_value(value).map_err(json_err)
    }
}

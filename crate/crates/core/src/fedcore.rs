//! Federated orchestration: client sampling, FedAvg, the parameter-isolated
//! FedPIT round, and the FedIT / LocIT / LocIT+SG / CenIT baselines.
//!
//! Every random draw comes from a stream keyed by `(seed, label, round,
//! client)` (see [`streams`]), so results do not depend on the order in
//! which clients are executed.

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::selfgen::{self_generate, SelfGenConfig, SelfGenStats, SelfGenTag};
use crate::tinylm::{
    corpus_cross_entropy, train_adapter, AdapterParams, AdapterShape, BackboneParams, LanguageModel,
    TrainConfig, Vocab,
};

/// Labels of the random streams used by the federation.
pub mod streams {
    pub const ADAPTER_INIT: &str = "adapter-init";
    pub const CLIENT_SAMPLE: &str = "client-sample";
    /// Round-1 initialization of a client's private adapter.
    pub const INIT: &str = "init";
    pub const SELFGEN: &str = "selfgen";
    pub const SUBSTITUTE: &str = "substitute";
    /// Private-adapter update on local plus synthetic data.
    pub const LOCAL: &str = "local";
    /// Shared-adapter update on synthetic data only (what gets uploaded).
    pub const GLOBAL: &str = "global";
    pub const FEDIT: &str = "fedit";
    pub const BASELINE: &str = "baseline";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedpit,
    Fedit,
    Locit,
    LocitSg,
    Cenit,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Fedpit,
        Algorithm::Fedit,
        Algorithm::Locit,
        Algorithm::LocitSg,
        Algorithm::Cenit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fedpit => "fedpit",
            Algorithm::Fedit => "fedit",
            Algorithm::Locit => "locit",
            Algorithm::LocitSg => "locit_sg",
            Algorithm::Cenit => "cenit",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Runs round by round with aggregation (as opposed to one training block).
    pub fn is_federated(self) -> bool {
        matches!(self, Algorithm::Fedpit | Algorithm::Fedit)
    }

    /// Produces a model that leaves the client (and can be attacked).
    pub fn has_shared_model(self) -> bool {
        matches!(self, Algorithm::Fedpit | Algorithm::Fedit | Algorithm::Cenit)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    /// Each round's synthetic set replaces the previous one.
    #[default]
    Replace,
    /// Synthetic sets accumulate across rounds.
    Cumulative,
}

/// Starting point of the private-adapter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStart {
    /// The aggregate issued by the server for this round.
    #[default]
    Server,
    /// The client's own upload from the previous round, when it has one.
    Retained,
}

/// Replaces self-generated data with an injected dataset of the same size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    #[default]
    None,
    /// Tasks from categories no client holds.
    Ood,
    /// Fresh tasks from the same categories.
    Simd,
    /// Fresh tasks matching each client's own category mix.
    Ideal,
}

impl Substitution {
    pub fn name(self) -> &'static str {
        match self {
            Substitution::None => "none",
            Substitution::Ood => "ood",
            Substitution::Simd => "simd",
            Substitution::Ideal => "ideal",
        }
    }

    pub fn parse(s: &str) -> Option<Substitution> {
        [Substitution::None, Substitution::Ood, Substitution::Simd, Substitution::Ideal]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    /// Dirichlet concentration of the client partition.
    pub alpha: f64,
    pub num_clients: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    /// Epochs of the single training block of LocIT, LocIT+SG and CenIT.
    pub baseline_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Standard deviation of the initial `B` factor (`A` starts at zero).
    pub init_scale: f64,
    pub response_only: bool,
    pub synthetic_mode: SyntheticMode,
    pub local_start: LocalStart,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            alpha: 1.0,
            num_clients: 3,
            rounds: 10,
            clients_per_round: 3,
            local_epochs: 1,
            baseline_epochs: 10,
            lr: 0.5,
            batch_size: 16,
            init_scale: 0.1,
            response_only: false,
            synthetic_mode: SyntheticMode::Replace,
            local_start: LocalStart::Server,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::Config { key: format!("fed.{key}"), reason });
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("must be positive and finite, got {}", self.alpha));
        }
        if self.num_clients == 0 {
            return bad("num_clients", "must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return bad(
                "clients_per_round",
                format!("must be in 1..={}, got {}", self.num_clients, self.clients_per_round),
            );
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be non-negative and finite, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale", format!("must be non-negative, got {}", self.init_scale));
        }
        Ok(())
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            response_only: self.response_only,
        }
    }
}

/// FedAvg: the weighted arithmetic mean of equally long vectors.
pub fn aggregate(updates: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::invalid("aggregate: no updates"));
    };
    let n = first.len();
    for (v, w) in updates {
        if v.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: v.len() });
        }
        if !(*w > 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("aggregate: weight {w} is not positive")));
        }
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    let mut out = vec![0.0; n];
    for (v, w) in updates {
        let p = w / total;
        for (o, x) in out.iter_mut().zip(v) {
            *o += p * x;
        }
    }
    // Keep rounding error from leaving the per-coordinate hull.
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = updates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(v[j]), hi.max(v[j])));
        *o = o.clamp(lo, hi);
    }
    Ok(out)
}

/// Adapter parameters that are shared with the server.
///
/// The attack harness only accepts this type, so private adapters cannot
/// be handed to it by accident.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedAdapter(AdapterParams);

impl SharedAdapter {
    pub fn from_server(params: AdapterParams) -> Self {
        SharedAdapter(params)
    }

    pub fn params(&self) -> &AdapterParams {
        &self.0
    }

    pub fn into_inner(self) -> AdapterParams {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub local: Dataset,
    pub synthetic: Dataset,
    /// Private adapter; never leaves the client.
    pub w_l: Option<AdapterParams>,
    /// This client's most recent upload.
    pub last_upload: Option<AdapterParams>,
}

impl ClientState {
    pub fn new(id: usize, local: Dataset) -> Self {
        ClientState {
            id,
            synthetic: Dataset::new(format!("synthetic_c{id}"), Vec::new()),
            local,
            w_l: None,
            last_upload: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w_g: SharedAdapter,
    /// Number of aggregations performed so far.
    pub round: usize,
}

/// What one client did in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStep {
    pub client: usize,
    pub local_size: usize,
    /// Synthetic (or injected) data the upload was trained on.
    pub synthetic: Dataset,
    pub selfgen: Option<SelfGenStats>,
    /// `None` when the client had nothing to train the shared adapter on.
    pub upload: Option<AdapterParams>,
    pub weight: f64,
    /// Private adapter after the round (FedPIT and local baselines).
    pub w_l: Option<AdapterParams>,
    /// Cross-entropy on the client's local data of the adapter the client
    /// ends the round with (private for FedPIT, uploaded for FedIT).
    pub train_ce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub round: usize,
    pub server: ServerState,
    /// Steps of the sampled clients, by ascending client id.
    pub steps: Vec<ClientStep>,
}

/// Result of a single-block baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    /// Set for CenIT only.
    pub shared: Option<SharedAdapter>,
    pub steps: Vec<ClientStep>,
}

/// The fixed context of a federated experiment.
#[derive(Debug, Clone, Copy)]
pub struct Federation<'a> {
    pub vocab: &'a Vocab,
    pub backbone: &'a BackboneParams,
    pub cfg: &'a FedConfig,
    pub selfgen: &'a SelfGenConfig,
    pub rank: usize,
    pub seed: u64,
    /// Per-client pools for the substitution ablation.
    pub injected: Option<&'a [Dataset]>,
}

impl<'a> Federation<'a> {
    pub fn shape(&self) -> AdapterShape {
        AdapterShape {
            vocab_size: self.backbone.vocab_size,
            dim: self.backbone.dim,
            rank: self.rank,
        }
    }

    fn model(&self, adapter: &'a AdapterParams) -> LanguageModel<'a> {
        LanguageModel::new(self.vocab, self.backbone, adapter)
    }

    /// `W_g` of round 0.
    pub fn init_server(&self) -> ServerState {
        let mut r = rng::stream(self.seed, streams::ADAPTER_INIT, 0, rng::NO_CLIENT);
        ServerState {
            w_g: SharedAdapter(AdapterParams::init(self.shape(), self.cfg.init_scale, &mut r)),
            round: 0,
        }
    }

    pub fn init_clients(&self, shards: Vec<Dataset>) -> Vec<ClientState> {
        shards
            .into_iter()
            .enumerate()
            .map(|(id, d)| ClientState::new(id, d))
            .collect()
    }

    /// LocalUP: trains `start` on `data` with the stream `(label, round, client)`.
    pub fn local_update(
        &self,
        start: &AdapterParams,
        data: &Dataset,
        epochs: usize,
        label: &str,
        round: usize,
        client: usize,
    ) -> AdapterParams {
        let mut r = rng::stream(self.seed, label, round, client);
        train_adapter(self.backbone, start, self.vocab, data, &self.cfg.train_config(epochs), &mut r)
    }

    /// Recomputes a FedPIT upload from the inputs it may depend on.
    pub fn recompute_upload(&self, server_w_g: &SharedAdapter, synthetic: &Dataset, round: usize, client: usize) -> AdapterParams {
        self.local_update(&server_w_g.0, synthetic, self.cfg.local_epochs, streams::GLOBAL, round, client)
    }

    fn train_ce(&self, adapter: &AdapterParams, data: &Dataset) -> f64 {
        corpus_cross_entropy(self.backbone, adapter, self.vocab, data, self.cfg.response_only)
    }

    /// Uniform sampling without replacement; ids in ascending order.
    pub fn sample_clients(&self, round: usize, num_clients: usize) -> Vec<usize> {
        let k = self.cfg.clients_per_round.min(num_clients);
        if k == num_clients {
            return (0..num_clients).collect();
        }
        let ids: Vec<usize> = (0..num_clients).collect();
        let mut r = rng::stream(self.seed, streams::CLIENT_SAMPLE, round, rng::NO_CLIENT);
        let mut picked: Vec<usize> = ids.choose_multiple(&mut r, k).copied().collect();
        picked.sort_unstable();
        picked
    }

    fn injected_synthetic(&self, pools: &[Dataset], round: usize, client: usize) -> Dataset {
        let pool = &pools[client % pools.len()];
        let mut r = rng::stream(self.seed, streams::SUBSTITUTE, round, client);
        let n = self.selfgen.keep.min(pool.len());
        let examples = pool.examples.choose_multiple(&mut r, n).cloned().collect();
        Dataset::new(format!("injected_r{round}_c{client}"), examples)
    }

    fn fedpit_client(&self, round: usize, w_g: &SharedAdapter, client: &ClientState) -> Result<ClientStep> {
        let k = client.id;
        let epochs = self.cfg.local_epochs;
        let w_l_prev = match &client.w_l {
            Some(w) => w.clone(),
            None => self.local_update(&w_g.0, &client.local, epochs, streams::INIT, round, k),
        };
        let (fresh, stats) = match self.injected {
            Some(pools) => (self.injected_synthetic(pools, round, k), None),
            None => {
                let mut r = rng::stream(self.seed, streams::SELFGEN, round, k);
                let out = self_generate(
                    &self.model(&w_g.0),
                    &self.model(&w_l_prev),
                    &client.local,
                    self.selfgen,
                    SelfGenTag { round, client: k },
                    &mut r,
                )?;
                (out.dataset, Some(out.stats))
            }
        };
        let synthetic = match self.cfg.synthetic_mode {
            SyntheticMode::Replace => fresh,
            SyntheticMode::Cumulative => client.synthetic.union(&fresh),
        };
        let start = match (self.cfg.local_start, &client.last_upload) {
            (LocalStart::Retained, Some(prev)) => prev,
            _ => &w_g.0,
        };
        let w_l = self.local_update(start, &client.local.union(&synthetic), epochs, streams::LOCAL, round, k);
        let upload = if synthetic.is_empty() {
            log::warn!("round {round} client {k}: no synthetic data, uploading the server adapter unchanged");
            None
        } else {
            Some(self.recompute_upload(w_g, &synthetic, round, k))
        };
        Ok(ClientStep {
            client: k,
            local_size: client.local.len(),
            weight: synthetic.len() as f64,
            train_ce: self.train_ce(&w_l, &client.local),
            synthetic,
            selfgen: stats,
            upload,
            w_l: Some(w_l),
        })
    }

    fn fedit_client(&self, round: usize, w_g: &SharedAdapter, client: &ClientState) -> ClientStep {
        let upload = self.local_update(&w_g.0, &client.local, self.cfg.local_epochs, streams::FEDIT, round, client.id);
        ClientStep {
            client: client.id,
            local_size: client.local.len(),
            synthetic: Dataset::new("none", Vec::new()),
            selfgen: None,
            weight: client.local.len() as f64,
            train_ce: self.train_ce(&upload, &client.local),
            upload: Some(upload),
            w_l: None,
        }
    }

    fn aggregate_round(&self, server: &ServerState, steps: &[ClientStep]) -> Result<ServerState> {
        let updates: Vec<(Vec<f64>, f64)> = steps
            .iter()
            .filter(|s| s.weight > 0.0)
            .filter_map(|s| s.upload.as_ref().map(|u| (u.flatten(), s.weight)))
            .collect();
        let w_g = if updates.is_empty() {
            server.w_g.clone()
        } else {
            SharedAdapter(AdapterParams::unflatten(&aggregate(&updates)?, self.shape())?)
        };
        Ok(ServerState { w_g, round: server.round + 1 })
    }

    fn check_round(&self, server: &ServerState, clients: &[ClientState]) -> Result<usize> {
        if clients.is_empty() {
            return Err(Error::invalid("no clients"));
        }
        if let Some(c) = clients.iter().find(|c| c.local.is_empty()) {
            return Err(Error::invalid(format!("client {} has no local data", c.id)));
        }
        Ok(server.round + 1)
    }

    /// One FedPIT round: self-generation, private update on local plus
    /// synthetic data, shared update on synthetic data only, FedAvg of the
    /// shared updates weighted by synthetic-set size.
    pub fn fedpit_round(&self, server: &ServerState, clients: &mut [ClientState]) -> Result<RoundOutput> {
        let round = self.check_round(server, clients)?;
        let sampled = self.sample_clients(round, clients.len());
        let steps: Vec<ClientStep> = sampled
            .par_iter()
            .map(|&k| self.fedpit_client(round, &server.w_g, &clients[k]))
            .collect::<Result<_>>()?;
        for s in &steps {
            let c = &mut clients[s.client];
            c.w_l = s.w_l.clone();
            c.synthetic = s.synthetic.clone();
            c.last_upload = Some(s.upload.clone().unwrap_or_else(|| server.w_g.0.clone()));
        }
        let next = self.aggregate_round(server, &steps)?;
        Ok(RoundOutput { round, server: next, steps })
    }

    /// One FedIT round: each sampled client trains the shared adapter on
    /// its local data; FedAvg weighted by local-set size.
    pub fn fedit_round(&self, server: &ServerState, clients: &mut [ClientState]) -> Result<RoundOutput> {
        let round = self.check_round(server, clients)?;
        let sampled = self.sample_clients(round, clients.len());
        let steps: Vec<ClientStep> = sampled
            .par_iter()
            .map(|&k| self.fedit_client(round, &server.w_g, &clients[k]))
            .collect();
        for s in &steps {
            clients[s.client].last_upload = s.upload.clone();
        }
        let next = self.aggregate_round(server, &steps)?;
        Ok(RoundOutput { round, server: next, steps })
    }

    fn local_block(&self, start: &AdapterParams, client: &ClientState, data: &Dataset, label: &str) -> ClientStep {
        let w = self.local_update(start, data, self.cfg.baseline_epochs, label, 1, client.id);
        ClientStep {
            client: client.id,
            local_size: client.local.len(),
            synthetic: Dataset::new("none", Vec::new()),
            selfgen: None,
            upload: None,
            weight: 0.0,
            train_ce: self.train_ce(&w, &client.local),
            w_l: Some(w),
        }
    }

    /// Each client trains alone on its local data.
    pub fn locit(&self, clients: &[ClientState]) -> BaselineOutput {
        let w0 = self.init_server().w_g;
        let steps = clients
            .par_iter()
            .map(|c| self.local_block(&w0.0, c, &c.local, streams::BASELINE))
            .collect();
        BaselineOutput { shared: None, steps }
    }

    /// One adapter trained on the pooled local data of all clients. Uses
    /// client 0's stream, so with one client it coincides with LocIT.
    pub fn cenit(&self, clients: &[ClientState]) -> BaselineOutput {
        let w0 = self.init_server().w_g;
        let pooled = clients
            .iter()
            .fold(Dataset::new("pooled", Vec::new()), |acc, c| acc.union(&c.local));
        let w = self.local_update(&w0.0, &pooled, self.cfg.baseline_epochs, streams::BASELINE, 1, 0);
        let steps = clients
            .iter()
            .map(|c| ClientStep {
                client: c.id,
                local_size: c.local.len(),
                synthetic: Dataset::new("none", Vec::new()),
                selfgen: None,
                upload: None,
                weight: c.local.len() as f64,
                train_ce: self.train_ce(&w, &c.local),
                w_l: None,
            })
            .collect();
        BaselineOutput { shared: Some(SharedAdapter(w)), steps }
    }

    /// LocIT, then self-generation with the client's own adapter as both
    /// generator and scorer, then retraining on local plus synthetic data.
    pub fn locit_sg(&self, clients: &[ClientState]) -> Result<BaselineOutput> {
        let w0 = self.init_server().w_g;
        let steps = clients
            .par_iter()
            .map(|c| -> Result<ClientStep> {
                let own = self.local_update(&w0.0, &c.local, self.cfg.baseline_epochs, streams::BASELINE, 1, c.id);
                let model = self.model(&own);
                let mut r = rng::stream(self.seed, streams::SELFGEN, 1, c.id);
                let out = self_generate(&model, &model, &c.local, self.selfgen, SelfGenTag { round: 1, client: c.id }, &mut r)?;
                let mut step = self.local_block(&w0.0, c, &c.local.union(&out.dataset), streams::LOCAL);
                step.weight = out.dataset.len() as f64;
                step.synthetic = out.dataset;
                step.selfgen = Some(out.stats);
                Ok(step)
            })
            .collect::<Result<_>>()?;
        Ok(BaselineOutput { shared: None, steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{dirichlet_partition, generate_toy_corpus, PartitionSpec};
    use crate::tinylm::ModelDims;
    use proptest::prelude::*;

    struct Setup {
        vocab: Vocab,
        backbone: BackboneParams,
        shards: Vec<Dataset>,
        cfg: FedConfig,
        sg: SelfGenConfig,
    }

    fn setup(num_clients: usize) -> Setup {
        let data = generate_toy_corpus(3, 12, 2);
        let vocab = Vocab::from_dataset(&data);
        let dims = ModelDims { dim: 8, window: 6, rank: 2, position_decay: 0.85 };
        let backbone = BackboneParams::random(vocab.len(), &dims, &mut rng::seeded(1));
        let shards = dirichlet_partition(&data, &PartitionSpec { alpha: 1.0, num_clients, seed: 3 }).unwrap();
        let cfg = FedConfig {
            num_clients,
            clients_per_round: num_clients,
            lr: 0.3,
            batch_size: 8,
            ..Default::default()
        };
        let sg = SelfGenConfig { candidates: 8, keep: 4, ..Default::default() };
        Setup { vocab, backbone, shards, cfg, sg }
    }

    fn fed(s: &Setup) -> Federation<'_> {
        Federation {
            vocab: &s.vocab,
            backbone: &s.backbone,
            cfg: &s.cfg,
            selfgen: &s.sg,
            rank: 2,
            seed: 7,
            injected: None,
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[(vec![0.0, 2.0], 1.0), (vec![2.0, 4.0], 3.0)]).unwrap(), vec![1.5, 3.5]);
        let v = vec![0.1, -0.3, 1e-300];
        assert_eq!(aggregate(&[(v.clone(), 0.7)]).unwrap(), v);
        assert_eq!(aggregate(&[(v.clone(), 0.3), (v.clone(), 5.0), (v.clone(), 1.0)]).unwrap(), v);
        assert!(matches!(
            aggregate(&[(vec![1.0], 1.0), (vec![1.0, 2.0], 1.0)]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(aggregate(&[(vec![1.0], 0.0)]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_stays_in_hull(
            vs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..6),
            ws in prop::collection::vec(1e-3f64..10.0, 6),
        ) {
            let updates: Vec<(Vec<f64>, f64)> = vs.iter().cloned().zip(ws.iter().copied()).collect();
            let out = aggregate(&updates).unwrap();
            for j in 0..4 {
                let lo = vs.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
                let hi = vs.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= out[j] && out[j] <= hi);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(FedConfig::default().validate().is_ok());
        let err = FedConfig { rounds: 0, ..Default::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("fed.rounds"));
        assert!(FedConfig { clients_per_round: 4, ..Default::default() }.validate().is_err());
        assert!(FedConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sampling_is_sorted_subset() {
        let s = setup(3);
        let cfg = FedConfig { clients_per_round: 2, ..s.cfg.clone() };
        let f = Federation { cfg: &cfg, ..fed(&s) };
        for round in 1..6 {
            let p = f.sample_clients(round, 3);
            assert_eq!(p.len(), 2);
            assert!(p[0] < p[1] && p[1] < 3);
            assert_eq!(p, f.sample_clients(round, 3));
        }
        assert_eq!(fed(&s).sample_clients(1, 3), vec![0, 1, 2]);
    }

    #[test]
    fn fedpit_uploads_depend_only_on_synthetic_data() {
        let s = setup(3);
        let f = fed(&s);
        let mut clients = f.init_clients(s.shards.clone());
        let mut server = f.init_server();
        for _ in 0..2 {
            let out = f.fedpit_round(&server, &mut clients).unwrap();
            for step in &out.steps {
                match &step.upload {
                    Some(u) => {
                        let again = f.recompute_upload(&server.w_g, &step.synthetic, out.round, step.client);
                        assert_eq!(u.to_bytes(), again.to_bytes());
                        assert_ne!(step.w_l.as_ref().unwrap(), u);
                    }
                    None => assert!(step.synthetic.is_empty()),
                }
            }
            assert_eq!(out.server.round, server.round + 1);
            server = out.server;
        }
    }

    #[test]
    fn single_client_fedavg_is_identity() {
        let s = setup(1);
        let f = fed(&s);
        let mut clients = f.init_clients(s.shards.clone());
        let out = f.fedpit_round(&f.init_server(), &mut clients).unwrap();
        let step = &out.steps[0];
        assert!(!step.synthetic.is_empty());
        assert_eq!(out.server.w_g.params(), step.upload.as_ref().unwrap());

        let mut clients = f.init_clients(s.shards.clone());
        let out = f.fedit_round(&f.init_server(), &mut clients).unwrap();
        let block = f.local_update(f.init_server().w_g.params(), &s.shards[0], 1, streams::FEDIT, 1, 0);
        assert_eq!(out.server.w_g.params(), &block);
    }

    #[test]
    fn identical_fedit_clients_aggregate_to_one_update() {
        let s = setup(1);
        let f = fed(&s);
        let cfg = FedConfig { num_clients: 2, clients_per_round: 2, ..s.cfg.clone() };
        let f2 = Federation { cfg: &cfg, ..f };
        let server = f2.init_server();
        let steps = vec![f2.fedit_client(1, &server.w_g, &ClientState::new(0, s.shards[0].clone())); 2];
        let next = f2.aggregate_round(&server, &steps).unwrap();
        assert_eq!(next.w_g.params(), steps[0].upload.as_ref().unwrap());
    }

    #[test]
    fn empty_synthetic_uploads_unchanged_server() {
        let s = setup(2);
        let pools = vec![Dataset::new("empty", Vec::new())];
        let f = Federation { injected: Some(&pools), ..fed(&s) };
        let mut clients = f.init_clients(s.shards.clone());
        let server = f.init_server();
        let out = f.fedpit_round(&server, &mut clients).unwrap();
        assert!(out.steps.iter().all(|st| st.upload.is_none() && st.weight == 0.0));
        assert_eq!(out.server.w_g, server.w_g);
    }

    #[test]
    fn execution_order_does_not_matter() {
        let s = setup(3);
        let f = fed(&s);
        let server = f.init_server();
        let clients = f.init_clients(s.shards.clone());
        let forward: Vec<ClientStep> = (0..3).map(|k| f.fedpit_client(1, &server.w_g, &clients[k]).unwrap()).collect();
        let mut backward: Vec<ClientStep> =
            (0..3).rev().map(|k| f.fedpit_client(1, &server.w_g, &clients[k]).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn baselines() {
        let s = setup(3);
        let f = fed(&s);
        let clients = f.init_clients(s.shards.clone());
        let loc = f.locit(&clients);
        let ws: Vec<&AdapterParams> = loc.steps.iter().map(|st| st.w_l.as_ref().unwrap()).collect();
        assert!(ws[0] != ws[1] && ws[1] != ws[2] && ws[0] != ws[2]);
        let cen = f.cenit(&clients[..1]);
        assert_eq!(cen.shared.unwrap().params(), ws[0]);
        let sg = f.locit_sg(&clients).unwrap();
        for st in &sg.steps {
            assert!(st.synthetic.len() <= s.sg.keep);
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()), Some(a));
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert_eq!(Algorithm::parse("fedavg"), None);
    }
}

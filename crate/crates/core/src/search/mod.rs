//! The search loop: sample a network, let the controller pick a morphism,
//! apply it, train with a warm start, score on validation, reward the
//! controller and return the network to the pool.

mod report;
mod rundir;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use report::{ablation_report, paired_t_test, AblationReport, CaseResult, Comparison, TTest, TTestKind, VariantSummary};
pub use rundir::{episodes_jsonl, RunDir};
pub use train::{batch_gradients, train_epochs};

use crate::arch::{parse_tokens, render_tokens, LayerSpec, Network};
use crate::controller::{reward, Choice, Controller, Decision, PolicyConfig, UpdateOutcome};
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::morph::{apply, perturb, verify_preservation, InputRange, MorphAction};
use crate::pool::{default_seeds, performance, pool_init, Metrics, NetPool};
use crate::rng::stream;
use crate::tensor::{AdamConfig, Real, PRESERVATION_TOL};

/// Ablation switches: the selector actor and the net pool can each be
/// disabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoSelector,
    NoPool,
    NoSelectorNoPool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSelector, Variant::NoPool, Variant::NoSelectorNoPool];

    pub fn uses_selector(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPool)
    }

    pub fn uses_pool(self) -> bool {
        matches!(self, Variant::Full | Variant::NoSelector)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSelector => "no-selector",
            Variant::NoPool => "no-pool",
            Variant::NoSelectorNoPool => "no-selector-no-pool",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub episodes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub variant: Variant,
    /// Wider steps per episode when the selector is disabled.
    pub forced_wider: usize,
    /// Deeper steps per episode when the selector is disabled.
    pub forced_deeper: usize,
    /// Uniform noise added to morphed weights after verification.
    pub noise: Real,
    pub learning_rate: Real,
    pub actor_learning_rate: Real,
    pub seed: u64,
    /// Single-layer networks the pool starts from.
    pub seed_layers: String,
    /// Retrain and rescore every pool member each episode.
    pub train_whole_pool: bool,
    /// Check function preservation of every morph before training.
    pub verify_morphs: bool,
    pub policy: PolicyConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            episodes: 200,
            epochs: 50,
            batch_size: 256,
            pool_capacity: 5,
            variant: Variant::Full,
            forced_wider: 3,
            forced_deeper: 3,
            noise: 0.0,
            learning_rate: 1e-3,
            actor_learning_rate: 1e-3,
            seed: 0,
            seed_layers: render_tokens(&default_seeds()),
            train_whole_pool: false,
            verify_morphs: true,
            policy: PolicyConfig::default(),
        }
    }
}

impl SearchConfig {
    /// Small budget for quick runs.
    pub fn desk() -> Self {
        SearchConfig {
            episodes: 30,
            epochs: 10,
            pool_capacity: 3,
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("pool_capacity", self.pool_capacity),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if !self.variant.uses_selector() && self.forced_wider + self.forced_deeper == 0 {
            return Err(Error::InvalidArgument("variants without a selector need at least one forced step".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise magnitude {} must be nonnegative", self.noise)));
        }
        AdamConfig::with_lr(self.learning_rate).validate()?;
        self.policy_config().validate()?;
        if self.seed_specs()?.is_empty() {
            return Err(Error::InvalidArgument("at least one seed layer is required".into()));
        }
        Ok(())
    }

    pub fn seed_specs(&self) -> Result<Vec<LayerSpec>> {
        parse_tokens(&self.seed_layers)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            learning_rate: self.actor_learning_rate,
            ..self.policy
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

/// One search iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub tokens_before: String,
    pub decisions: Vec<Decision>,
    /// Morphisms actually applied, in order.
    pub actions: Vec<MorphAction>,
    pub tokens_after: String,
    pub loss_history: Vec<Real>,
    pub val_rmse: Option<Real>,
    pub val_mae: Option<Real>,
    pub reward: Real,
    pub advantage: Real,
    /// Baseline after this episode's update.
    pub baseline: Option<Real>,
    pub param_count: usize,
    /// Largest output change caused by the morphs, when verified.
    pub preservation: Option<Real>,
    pub failure: Option<String>,
    /// Wall-clock time; kept out of the serialised log so logs are
    /// reproducible.
    #[serde(skip)]
    pub wall_ms: u128,
}

impl EpisodeRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Trained seed network before the first episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub tokens: String,
    pub val_rmse: Real,
    pub val_mae: Real,
    pub param_count: usize,
}

/// Everything a finished search returns.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Network,
    pub best_validation: Metrics,
    pub test: Metrics,
    pub seeds: Vec<SeedRecord>,
    pub history: Vec<EpisodeRecord>,
    pub pool: NetPool,
    pub controller: Controller,
}

/// Search state between episodes.
pub struct Search<'a> {
    config: SearchConfig,
    data: &'a PreparedData,
    controller: Controller,
    pool: NetPool,
    /// The network carried between episodes when the pool is disabled.
    current: Option<Network>,
    best: (Network, Metrics),
    seeds: Vec<SeedRecord>,
    episode: usize,
}

impl<'a> Search<'a> {
    /// Builds the controller and trains and scores the seed networks.
    pub fn new(config: SearchConfig, data: &'a PreparedData) -> Result<Self> {
        config.validate()?;
        let controller = Controller::new(config.policy_config(), &mut stream(config.seed, "policy", 0))?;
        let specs = config.seed_specs()?;
        let capacity = if config.variant.uses_pool() { config.pool_capacity } else { 1 };
        let mut seeds = Vec::new();
        let mut k = 0;
        let pool = pool_init(capacity, data.input_shape(), &specs, &mut stream(config.seed, "seed-init", 0), |mut net| {
            train_epochs(&mut net, &data.train, config.epochs, config.batch_size, config.adam(), &mut stream(config.seed, "seed-train", k))?;
            k += 1;
            let m = performance(&net, &data.validation, &data.stats)?;
            net.score = Some(m.rmse);
            seeds.push(SeedRecord {
                tokens: net.tokens(),
                val_rmse: m.rmse,
                val_mae: m.mae,
                param_count: net.param_count(),
            });
            Ok((net, m.rmse))
        })?;
        let top = pool.best().expect("at least one seed");
        let best_metrics = performance(&top.network, &data.validation, &data.stats)?;
        let best = (top.network.clone(), best_metrics);
        let current = (!config.variant.uses_pool()).then(|| best.0.clone());
        Ok(Search {
            config,
            data,
            controller,
            pool,
            current,
            best,
            seeds,
            episode: 0,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn pool(&self) -> &NetPool {
        &self.pool
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn seeds(&self) -> &[SeedRecord] {
        &self.seeds
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    /// Best validation network seen so far.
    pub fn best(&self) -> (&Network, Metrics) {
        (&self.best.0, self.best.1)
    }

    fn starting_network(&self) -> Result<Network> {
        if let Some(n) = &self.current {
            return Ok(n.clone());
        }
        let mut rng = stream(self.config.seed, "pool-sample", self.episode as u64);
        Ok(self.pool.sample(&mut rng)?.network.clone())
    }

    /// Decides and applies the morphs of one episode. Decisions are pushed
    /// as they are made so a later failure still has them for the update.
    fn transform(&self, start: &Network, decisions: &mut Vec<Decision>, actions: &mut Vec<MorphAction>) -> Result<(Network, Option<Real>)> {
        let seed = self.config.seed;
        let ep = self.episode as u64;
        let mut decide_rng = stream(seed, "decide", ep);
        let mut morph_rng = stream(seed, "morph", ep);
        let plan: Vec<Option<Choice>> = if self.config.variant.uses_selector() {
            vec![None]
        } else {
            std::iter::repeat_n(Some(Choice::Wider), self.config.forced_wider)
                .chain(std::iter::repeat_n(Some(Choice::Deeper), self.config.forced_deeper))
                .collect()
        };
        let mut net = start.clone();
        let mut touched = Vec::new();
        for forced in plan {
            let d = self.controller.decide(&net.descriptor.layers, forced, &mut decide_rng)?;
            let action = d.action;
            decisions.push(d);
            if action == MorphAction::Unchanged {
                continue;
            }
            let out = apply(&net, action, &mut morph_rng)?;
            net = out.network;
            touched.extend(out.touched);
            actions.push(action);
        }
        let mut deviation = None;
        if self.config.verify_morphs && !actions.is_empty() {
            let dev = verify_preservation(start, &net, 10, InputRange::default(), &mut stream(seed, "verify", ep))?;
            if !(dev <= 10.0 * PRESERVATION_TOL) {
                return Err(Error::Search(format!("morph changed the network function by {dev}")));
            }
            deviation = Some(dev);
        }
        if self.config.noise > 0.0 {
            // touched indices refer to the final layer list only when a
            // single morph was applied; otherwise jitter every layer.
            if actions.len() > 1 {
                touched = (0..net.descriptor.len()).map(crate::morph::Touched::Layer).collect();
                touched.push(crate::morph::Touched::Readout);
            }
            perturb(&mut net, &touched, self.config.noise, &mut stream(seed, "noise", ep));
        }
        Ok((net, deviation))
    }

    fn train_and_score(&self, net: &mut Network, label: &str, index: u64) -> Result<(Vec<Real>, Metrics)> {
        let mut rng = stream(self.config.seed, label, index);
        let history = train_epochs(net, &self.data.train, self.config.epochs, self.config.batch_size, self.config.adam(), &mut rng)?;
        let m = performance(net, &self.data.validation, &self.data.stats)?;
        net.score = Some(m.rmse);
        Ok((history, m))
    }

    fn retrain_pool(&mut self) -> Result<()> {
        let entries: Vec<_> = self.pool.entries().to_vec();
        let mut pool = NetPool::new(self.pool.capacity())?;
        for (i, e) in entries.into_iter().enumerate() {
            let mut net = e.network;
            let (_, m) = self.train_and_score(&mut net, "pool-train", (self.episode * 1000 + i) as u64)?;
            self.consider_best(&net, m);
            pool.insert(net, m.rmse, e.origin)?;
        }
        self.pool = pool;
        Ok(())
    }

    fn consider_best(&mut self, net: &Network, m: Metrics) {
        if m.rmse < self.best.1.rmse {
            self.best = (net.clone(), m);
        }
    }

    /// Runs one episode.
    pub fn step(&mut self) -> Result<EpisodeRecord> {
        let started = Instant::now();
        if self.config.train_whole_pool && self.config.variant.uses_pool() {
            self.retrain_pool()?;
        }
        let start = self.starting_network()?;
        let mut rec = EpisodeRecord {
            episode: self.episode,
            tokens_before: start.tokens(),
            decisions: vec![],
            actions: vec![],
            tokens_after: start.tokens(),
            loss_history: vec![],
            val_rmse: None,
            val_mae: None,
            reward: 0.0,
            advantage: 0.0,
            baseline: None,
            param_count: start.param_count(),
            preservation: None,
            failure: None,
            wall_ms: 0,
        };

        let outcome = self
            .transform(&start, &mut rec.decisions, &mut rec.actions)
            .and_then(|(mut net, dev)| {
                rec.preservation = dev;
                rec.tokens_after = net.tokens();
                rec.param_count = net.param_count();
                let (hist, m) = self.train_and_score(&mut net, "train", self.episode as u64)?;
                Ok((net, hist, m))
            });

        match outcome {
            Ok((net, hist, m)) => {
                rec.loss_history = hist;
                rec.val_rmse = Some(m.rmse);
                rec.val_mae = Some(m.mae);
                rec.reward = reward(m.rmse, self.controller.config.reward_cap)?;
                self.consider_best(&net, m);
                if self.config.variant.uses_pool() {
                    self.pool.insert(net, m.rmse, Some(self.episode))?;
                } else {
                    self.current = Some(net);
                }
            }
            Err(e) if e.is_numeric() || matches!(e, Error::Search(_) | Error::Masking { .. } | Error::InvalidArgument(_)) => {
                log::warn!("episode {} failed: {e}", self.episode);
                rec.failure = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }

        let update: UpdateOutcome = self.controller.reinforce_update(&rec.decisions, rec.reward)?;
        rec.advantage = update.advantage;
        rec.baseline = self.controller.baseline.value;
        rec.wall_ms = started.elapsed().as_millis();
        self.episode += 1;
        Ok(rec)
    }

    /// Test metrics of the best network and the final state.
    pub fn finish(self, history: Vec<EpisodeRecord>) -> Result<SearchOutcome> {
        if !history.is_empty() && history.iter().all(|r| !r.succeeded()) {
            let reasons: Vec<String> = history.iter().filter_map(|r| r.failure.clone()).take(3).collect();
            return Err(Error::Search(format!("all {} episodes failed; first failures: {}", history.len(), reasons.join("; "))));
        }
        let (best, best_validation) = self.best;
        let test = performance(&best, &self.data.test, &self.data.stats)?;
        Ok(SearchOutcome {
            best,
            best_validation,
            test,
            seeds: self.seeds,
            history,
            pool: self.pool,
            controller: self.controller,
        })
    }
}

/// Runs the configured number of episodes, calling `observe` after each.
pub fn run_search_with(config: SearchConfig, data: &PreparedData, mut observe: impl FnMut(&Search, &EpisodeRecord) -> Result<()>) -> Result<SearchOutcome> {
    let mut search = Search::new(config, data)?;
    let mut history = Vec::with_capacity(search.config.episodes);
    for _ in 0..search.config.episodes {
        let rec = search.step()?;
        observe(&search, &rec)?;
        history.push(rec);
    }
    search.finish(history)
}

pub fn run_search(config: SearchConfig, data: &PreparedData) -> Result<SearchOutcome> {
    run_search_with(config, data, |_, _| Ok(()))
}

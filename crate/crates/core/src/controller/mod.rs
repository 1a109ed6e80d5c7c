//! Reinforcement-learning meta-controller.
//!
//! Layers are embedded, encoded by a bidirectional LSTM and read by three
//! actors: a selector (wider / deeper / unchanged), a per-layer wider actor
//! and a two-step deeper actor (layer kind, then insert position). Every
//! head emits sigmoids that are normalised into a sampling distribution.

mod graph;
mod params;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use params::{PolicyConfig, PolicyParams, Weights, LAYER_FEATURES};

use crate::arch::{decode_array, decode_floats, encode_array, encode_floats, EncodedArray, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::morph::{widen_mask, MorphAction};
use crate::tensor::{AdamConfig, AdamState, Array, NodeId, Real, PRECISION};
use graph::{Dist, Graph};

/// Selector outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Wider,
    Deeper,
    Unchanged,
}

impl Choice {
    pub const ALL: [Choice; 3] = [Choice::Wider, Choice::Deeper, Choice::Unchanged];
}

/// One sampled head output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "head", content = "value", rename_all = "snake_case")]
pub enum Step {
    Select(Choice),
    Wider(usize),
    DeeperKind(LayerKind),
    DeeperPosition(usize),
}

/// Everything sampled for one episode, replayable against any parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: MorphAction,
    /// Layers the controller observed.
    pub state: Vec<LayerSpec>,
    pub steps: Vec<Step>,
    /// Sum of the log-probabilities of every step.
    pub log_prob: Real,
    /// Normalised distribution of every step, in step order.
    pub probs: Vec<Vec<Real>>,
    /// Degenerate-distribution fallbacks hit while sampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anomalies: Vec<String>,
}

/// Reward for a validation RMSE: `1/rmse`, capped.
pub fn reward(rmse: Real, cap: Real) -> Result<Real> {
    if !rmse.is_finite() || rmse < 0.0 {
        return Err(Error::NonFinite(format!("cannot reward rmse {rmse}")));
    }
    if rmse == 0.0 {
        return Ok(cap);
    }
    Ok((1.0 / rmse).min(cap))
}

/// Exponential moving average of rewards; starts at the first reward seen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: Option<Real>,
    pub decay: Real,
}

impl Baseline {
    pub fn new(decay: Real) -> Self {
        Baseline { value: None, decay }
    }

    pub fn advantage(&self, reward: Real) -> Real {
        reward - self.value.unwrap_or(reward)
    }

    pub fn update(&mut self, reward: Real) {
        self.value = Some(match self.value {
            None => reward,
            Some(b) => self.decay * b + (1.0 - self.decay) * reward,
        });
    }
}

/// Summary of one REINFORCE step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub reward: Real,
    pub advantage: Real,
    pub loss: Real,
    /// False when the advantage was zero and the parameters were left alone.
    pub applied: bool,
}

/// Embeds every layer into an `N x embed_dim` matrix; an empty list embeds a
/// single sentinel row.
pub fn embed_layers(layers: &[LayerSpec], params: &PolicyParams) -> Result<Array> {
    let mut g = Graph::bare(params);
    let rows = g.embed(layers)?;
    stack(&g, &rows)
}

/// Runs the bidirectional encoder over embedding rows; returns the per-layer
/// matrix `H` (`N x 2h`) and the summary `s` (`2h`).
pub fn encode(embeddings: &Array, params: &PolicyParams) -> Result<(Array, Array)> {
    let mut g = Graph::bare(params);
    let n = embeddings.shape()[0];
    let rows: Vec<NodeId> = (0..n)
        .map(|i| g.tape.leaf(Array::vector(embeddings.slice_outer(i, 1).into_data())))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("encoder needs at least one row".into()));
    }
    g.encode(&rows)?;
    let h = stack(&g, &g.rows.clone())?;
    Ok((h, g.tape.value(g.summary).clone()))
}

fn stack(g: &Graph, rows: &[NodeId]) -> Result<Array> {
    let width = g.tape.value(rows[0]).len();
    let data = rows.iter().flat_map(|&r| g.tape.value(r).data().to_vec()).collect();
    Array::from_vec(&[rows.len(), width], data)
}

fn sample(d: &Dist, rng: &mut impl Rng) -> usize {
    let w = WeightedIndex::new(&d.probs).expect("distribution has positive mass");
    w.sample(rng)
}

/// Walks the heads for one episode, either sampling or replaying steps.
struct Episode<'a> {
    graph: Graph,
    state: &'a [LayerSpec],
    steps: Vec<Step>,
    log_probs: Vec<NodeId>,
    probs: Vec<Vec<Real>>,
    anomalies: Vec<String>,
}

impl<'a> Episode<'a> {
    fn new(params: &PolicyParams, state: &'a [LayerSpec]) -> Result<Self> {
        Ok(Episode {
            graph: Graph::new(params, state)?,
            state,
            steps: vec![],
            log_probs: vec![],
            probs: vec![],
            anomalies: vec![],
        })
    }

    fn record(&mut self, d: Dist, i: usize, step: Step, head: &str) -> Result<()> {
        if d.degenerate {
            self.anomalies.push(format!("{head}: all sigmoids are zero, sampled uniformly"));
        }
        let lp = self.graph.log_prob(&d, i)?;
        self.log_probs.push(lp);
        self.probs.push(d.probs);
        self.steps.push(step);
        Ok(())
    }

    fn select(&mut self, pick: impl FnOnce(&Dist) -> usize) -> Result<Choice> {
        let d = self.graph.selector()?;
        let i = pick(&d);
        let c = Choice::ALL[i];
        self.record(d, i, Step::Select(c), "selector")?;
        Ok(c)
    }

    /// `None` when every layer is masked.
    fn wider(&mut self, pick: impl FnOnce(&Dist) -> usize) -> Result<Option<usize>> {
        let mask = widen_mask(self.state);
        let d = self.graph.wider(&mask)?;
        if d.is_empty() {
            self.anomalies.push("wider: every layer is masked, leaving the network unchanged".into());
            return Ok(None);
        }
        let i = pick(&d);
        self.record(d, i, Step::Wider(i), "wider")?;
        Ok(Some(i))
    }

    fn deeper_kind(&mut self, pick: impl FnOnce(&Dist) -> usize) -> Result<LayerKind> {
        let d = self.graph.deeper_kind()?;
        let i = pick(&d);
        let k = LayerKind::ALL[i];
        self.record(d, i, Step::DeeperKind(k), "deeper kind")?;
        Ok(k)
    }

    fn deeper_position(&mut self, kind: LayerKind, pick: impl FnOnce(&Dist) -> usize) -> Result<usize> {
        let d = self.graph.deeper_position(kind, self.state.len() + 1)?;
        let i = pick(&d);
        self.record(d, i, Step::DeeperPosition(i), "deeper position")?;
        Ok(i)
    }

    fn total_log_prob(&mut self) -> Result<Option<NodeId>> {
        if self.log_probs.is_empty() {
            return Ok(None);
        }
        let all = self.graph.tape.concat(&self.log_probs)?;
        Ok(Some(self.graph.tape.sum(all)))
    }

    fn finish(mut self, action: MorphAction) -> Result<Decision> {
        let log_prob = match self.total_log_prob()? {
            Some(n) => self.graph.tape.scalar(n),
            None => 0.0,
        };
        if !log_prob.is_finite() {
            return Err(Error::NonFinite(format!("log-probability {log_prob}")));
        }
        Ok(Decision {
            action,
            state: self.state.to_vec(),
            steps: self.steps,
            log_prob,
            probs: self.probs,
            anomalies: self.anomalies,
        })
    }

    /// Replays recorded steps, checking that each one is still legal.
    fn replay(&mut self, steps: &[Step]) -> Result<()> {
        let bad = |s: &Step| Error::InvalidArgument(format!("step {s:?} is not valid for this state"));
        let mut kind = None;
        for s in steps {
            let fixed = |d: &Dist, i: usize| -> Result<usize> {
                if d.probs.get(i).copied().unwrap_or(0.0) > 0.0 {
                    Ok(i)
                } else {
                    Err(bad(s))
                }
            };
            match *s {
                Step::Select(c) => {
                    let i = Choice::ALL.iter().position(|&x| x == c).expect("choice");
                    let d = self.graph.selector()?;
                    let i = fixed(&d, i)?;
                    self.record(d, i, *s, "selector")?;
                }
                Step::Wider(i) => {
                    let d = self.graph.wider(&widen_mask(self.state))?;
                    let i = fixed(&d, i)?;
                    self.record(d, i, *s, "wider")?;
                }
                Step::DeeperKind(k) => {
                    let d = self.graph.deeper_kind()?;
                    let i = fixed(&d, k.index())?;
                    self.record(d, i, *s, "deeper kind")?;
                    kind = Some(k);
                }
                Step::DeeperPosition(p) => {
                    let k = kind.ok_or_else(|| bad(s))?;
                    let d = self.graph.deeper_position(k, self.state.len() + 1)?;
                    let i = fixed(&d, p)?;
                    self.record(d, i, *s, "deeper position")?;
                }
            }
        }
        Ok(())
    }
}

/// Policy parameters, their optimiser state and the reward baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub config: PolicyConfig,
    pub params: PolicyParams,
    pub optimizer: Vec<AdamState>,
    pub baseline: Baseline,
}

impl Controller {
    pub fn new(config: PolicyConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Self::from_params(config, PolicyParams::init(&config, rng))
    }

    pub fn from_params(config: PolicyConfig, params: PolicyParams) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        let adam = AdamConfig::with_lr(config.learning_rate);
        let optimizer = params.refs().iter().map(|a| AdamState::new(a.len(), adam)).collect();
        Ok(Controller {
            config,
            params,
            optimizer,
            baseline: Baseline::new(config.baseline_decay),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Samples a full decision. `forced` skips the selector and runs the
    /// named actor directly.
    pub fn decide(&self, state: &[LayerSpec], forced: Option<Choice>, rng: &mut impl Rng) -> Result<Decision> {
        let mut ep = Episode::new(&self.params, state)?;
        let choice = match forced {
            Some(c) => c,
            None => ep.select(|d| sample(d, rng))?,
        };
        let action = match choice {
            Choice::Unchanged => MorphAction::Unchanged,
            Choice::Wider => match ep.wider(|d| sample(d, rng))? {
                Some(layer) => MorphAction::wider(layer),
                None => MorphAction::Unchanged,
            },
            Choice::Deeper => {
                let kind = ep.deeper_kind(|d| sample(d, rng))?;
                let position = ep.deeper_position(kind, |d| sample(d, rng))?;
                MorphAction::Deeper { kind, position }
            }
        };
        ep.finish(action)
    }

    /// Selector alone; the action is only a placeholder for the chosen class.
    pub fn selector_decide(&self, state: &[LayerSpec], rng: &mut impl Rng) -> Result<Decision> {
        let mut ep = Episode::new(&self.params, state)?;
        ep.select(|d| sample(d, rng))?;
        ep.finish(MorphAction::Unchanged)
    }

    pub fn wider_decide(&self, state: &[LayerSpec], rng: &mut impl Rng) -> Result<Decision> {
        self.decide(state, Some(Choice::Wider), rng)
    }

    pub fn deeper_decide(&self, state: &[LayerSpec], rng: &mut impl Rng) -> Result<Decision> {
        self.decide(state, Some(Choice::Deeper), rng)
    }

    /// Recomputes the log-probability of a recorded decision.
    pub fn log_prob(&self, decision: &Decision) -> Result<Real> {
        let mut ep = Episode::new(&self.params, &decision.state)?;
        ep.replay(&decision.steps)?;
        Ok(ep.total_log_prob()?.map_or(0.0, |n| ep.graph.tape.scalar(n)))
    }

    /// `-advantage * sum(log p)` and its gradient for every parameter array.
    pub fn loss_and_gradients(&self, decisions: &[Decision], advantage: Real) -> Result<(Real, Vec<Array>)> {
        let mut grads: Vec<Array> = self.params.refs().iter().map(|a| Array::zeros(a.shape())).collect();
        let mut loss = 0.0;
        for d in decisions {
            let mut ep = Episode::new(&self.params, &d.state)?;
            ep.replay(&d.steps)?;
            let Some(total) = ep.total_log_prob()? else { continue };
            let l = ep.graph.tape.scale(total, -advantage);
            loss += ep.graph.tape.scalar(l);
            ep.graph.tape.backward(l)?;
            for (g, id) in grads.iter_mut().zip(ep.graph.p.refs()) {
                g.add_assign(ep.graph.tape.grad(*id));
            }
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite(format!("policy loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// One REINFORCE step on the episode's decisions, then a baseline update.
    /// Parameters are untouched when the advantage is zero or the loss is
    /// not finite (the latter is an error).
    pub fn reinforce_update(&mut self, decisions: &[Decision], reward: Real) -> Result<UpdateOutcome> {
        if !reward.is_finite() {
            return Err(Error::NonFinite(format!("reward {reward}")));
        }
        let advantage = self.baseline.advantage(reward);
        let mut outcome = UpdateOutcome {
            reward,
            advantage,
            loss: 0.0,
            applied: false,
        };
        if advantage != 0.0 && decisions.iter().any(|d| !d.steps.is_empty()) {
            let (loss, grads) = self.loss_and_gradients(decisions, advantage)?;
            for ((p, g), st) in self.params.refs_mut().into_iter().zip(&grads).zip(&mut self.optimizer) {
                st.step(p.data_mut(), g.data())?;
            }
            outcome.loss = loss;
            outcome.applied = true;
        }
        self.baseline.update(reward);
        Ok(outcome)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PolicyDoc {
            schema_version: POLICY_SCHEMA_VERSION,
            precision: PRECISION.to_string(),
            config: self.config,
            baseline: self.baseline,
            arrays: self
                .params
                .refs()
                .into_iter()
                .zip(PolicyParams::NAMES)
                .map(|(a, n)| encode_array(n, a))
                .collect(),
            optimizer: self
                .optimizer
                .iter()
                .map(|s| EncodedMoments {
                    t: s.t,
                    m: encode_floats(&s.m),
                    v: encode_floats(&s.v),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(text)?;
        if doc.schema_version != POLICY_SCHEMA_VERSION || doc.precision != PRECISION {
            return Err(Error::Checkpoint(format!(
                "policy file is schema {} / {}, expected {POLICY_SCHEMA_VERSION} / {PRECISION}",
                doc.schema_version, doc.precision
            )));
        }
        let mut arrays = Vec::with_capacity(doc.arrays.len());
        for (e, name) in doc.arrays.iter().zip(PolicyParams::NAMES) {
            if e.name != *name {
                return Err(Error::Checkpoint(format!("policy array {} where {name} was expected", e.name)));
            }
            arrays.push(decode_array(e, name)?);
        }
        let params = PolicyParams::from_vec(arrays)
            .ok_or_else(|| Error::Checkpoint(format!("policy file holds {} arrays", doc.arrays.len())))?;
        let mut c = Controller::from_params(doc.config, params)?;
        if doc.optimizer.len() != c.optimizer.len() {
            return Err(Error::Checkpoint("policy optimizer state does not match its arrays".into()));
        }
        let lens: Vec<usize> = c.params.refs().iter().map(|a| a.len()).collect();
        for ((st, e), len) in c.optimizer.iter_mut().zip(&doc.optimizer).zip(lens) {
            st.t = e.t;
            st.m = decode_floats(&e.m, "policy moments")?;
            st.v = decode_floats(&e.v, "policy moments")?;
            if st.m.len() != len || st.v.len() != len {
                return Err(Error::Checkpoint("policy moment length mismatch".into()));
            }
        }
        c.baseline = doc.baseline;
        Ok(c)
    }
}

const POLICY_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EncodedMoments {
    t: u64,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    schema_version: u32,
    precision: String,
    config: PolicyConfig,
    baseline: Baseline,
    arrays: Vec<EncodedArray>,
    optimizer: Vec<EncodedMoments>,
}

#[cfg(test)]
mod tests;

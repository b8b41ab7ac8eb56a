use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{state_dim, Action, AgentError, AgentState};
use crate::dataset::NUM_ACTIVITIES;
use crate::nn::{Activation, Adam, Grads, Mlp, MlpRecord};
use crate::persist;
use crate::seed::{self, Rng};

pub const PERSIST_KIND: &str = "agent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentHyper {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch: usize,
    pub buffer_cap: usize,
    pub exploration_sd: f64,
    pub hidden: Vec<usize>,
    pub theta_init: f64,
}

impl Default for AgentHyper {
    fn default() -> Self {
        AgentHyper {
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            batch: 64,
            buffer_cap: 50_000,
            exploration_sd: 0.1,
            hidden: vec![64, 64],
            theta_init: 2.0,
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidHyper(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.batch == 0 || self.buffer_cap < self.batch {
            return bad("need 1 <= batch <= buffer_cap".into());
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.exploration_sd >= 0.0) {
            return bad("exploration_sd must be >= 0".into());
        }
        if !(self.theta_init > 0.0) {
            return bad("theta_init must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// Bounded FIFO; the oldest transition leaves first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    cap: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(cap: usize) -> Self {
        ReplayBuffer { cap, items: VecDeque::with_capacity(cap.min(4096)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub hyper: AgentHyper,
    pub embed_dim: usize,
    pub channels: Vec<usize>,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub replay: ReplayBuffer,
    pub thresholds: BTreeMap<u8, f64>,
    actor_opt: Adam,
    critic_opt: Adam,
}

fn rows(vs: impl Iterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = vs.flatten().collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).expect("rows share one width")
}

/// Rows of `(s, w, r, s')` as matrices.
struct Batch {
    s: Array2<f64>,
    w: Array2<f64>,
    r: Array1<f64>,
    s_next: Array2<f64>,
}

impl AgentBundle {
    pub fn new(hyper: AgentHyper, embed_dim: usize, channels: &[usize], seed: u64) -> Result<Self, AgentError> {
        hyper.validate()?;
        if channels.is_empty() {
            return Err(AgentError::InvalidHyper("agent needs at least one channel".into()));
        }
        let mut rng = seed::stream(seed, &[seed::purpose::AGENT_INIT]);
        let sdim = state_dim(embed_dim, channels.len());
        let p = channels.len();
        let sizes = |i: usize, o: usize| -> Vec<usize> {
            std::iter::once(i).chain(hyper.hidden.iter().copied()).chain(std::iter::once(o)).collect()
        };
        let actor = Mlp::new(&sizes(sdim, p), Activation::Relu, Activation::Sigmoid, Some(3e-3), &mut rng);
        let critic = Mlp::new(&sizes(sdim + p, 1), Activation::Relu, Activation::Identity, Some(3e-3), &mut rng);
        let thresholds = (0..NUM_ACTIVITIES as u8).map(|a| (a, hyper.theta_init)).collect();
        Ok(AgentBundle {
            actor_opt: Adam::new(&actor, hyper.lr_actor),
            critic_opt: Adam::new(&critic, hyper.lr_critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            replay: ReplayBuffer::new(hyper.buffer_cap),
            embed_dim,
            channels: channels.to_vec(),
            actor,
            critic,
            thresholds,
            hyper,
        })
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.embed_dim, self.channels.len())
    }

    pub fn action_dim(&self) -> usize {
        self.channels.len()
    }

    pub fn threshold(&self, activity: u8) -> f64 {
        self.thresholds.get(&activity).copied().unwrap_or(self.hyper.theta_init)
    }

    pub fn set_threshold(&mut self, activity: u8, theta: f64) {
        self.thresholds.insert(activity, theta);
    }

    /// `clamp(μ(s) + N(0, sd²), 0, 1)`; the rng is untouched when `explore` is false.
    pub fn act(&self, state: &AgentState, explore: bool, rng: &mut Rng) -> Result<Action, AgentError> {
        let x = state.to_vec();
        if x.len() != self.state_dim() {
            return Err(AgentError::ShapeError { expected: self.state_dim(), found: x.len() });
        }
        let out = self.actor.forward(&Array2::from_shape_vec((1, x.len()), x).expect("one row"));
        let mut w: Vec<f64> = out.row(0).to_vec();
        if explore && self.hyper.exploration_sd > 0.0 {
            let noise = Normal::new(0.0, self.hyper.exploration_sd).expect("finite sd");
            for v in w.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        w.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Action { w })
    }

    fn batch(&self, ts: &[&Transition]) -> Batch {
        let (sd, p) = (self.state_dim(), self.action_dim());
        Batch {
            s: rows(ts.iter().map(|t| t.s.clone()), sd),
            w: rows(ts.iter().map(|t| t.w.clone()), p),
            r: ts.iter().map(|t| t.r).collect(),
            s_next: rows(ts.iter().map(|t| t.s_next.clone()), sd),
        }
    }

    fn targets(&self, b: &Batch) -> Array1<f64> {
        let a2 = self.target_actor.forward(&b.s_next);
        let q2 = self.target_critic.forward(&concatenate![Axis(1), b.s_next, a2]);
        &b.r + &(q2.column(0).to_owned() * self.hyper.gamma)
    }

    /// Mean squared TD error and its gradient.
    pub fn critic_gradients(&self, ts: &[&Transition]) -> (f64, Grads) {
        let b = self.batch(ts);
        let y = self.targets(&b);
        let trace = self.critic.forward_trace(&concatenate![Axis(1), b.s, b.w]);
        let err = &trace.output.column(0) - &y;
        let n = ts.len() as f64;
        let loss = err.iter().map(|e| e * e).sum::<f64>() / n;
        let grad = (err * (2.0 / n)).insert_axis(Axis(1));
        (loss, self.critic.backward(&trace, &grad).0)
    }

    /// Mean `Q(s, μ(s))` and the actor gradient of its negation.
    pub fn actor_gradients(&self, ts: &[&Transition]) -> (f64, Grads) {
        let b = self.batch(ts);
        let n = ts.len() as f64;
        let sd = self.state_dim();
        let a_trace = self.actor.forward_trace(&b.s);
        let c_trace = self.critic.forward_trace(&concatenate![Axis(1), b.s, a_trace.output]);
        let objective = c_trace.output.sum() / n;
        let grad_out = Array2::from_elem((ts.len(), 1), -1.0 / n);
        let (_, grad_in) = self.critic.backward(&c_trace, &grad_out);
        let grad_mu = grad_in.slice(s![.., sd..]).to_owned();
        (objective, self.actor.backward(&a_trace, &grad_mu).0)
    }

    /// One critic step, one actor step, then soft target updates.
    pub fn train_batch(&mut self, rng: &mut Rng) -> Result<TrainStats, AgentError> {
        let need = self.hyper.batch;
        if self.replay.len() < need {
            return Err(AgentError::InsufficientReplay { have: self.replay.len(), need });
        }
        let ts: Vec<Transition> = self.replay.sample(need, rng).into_iter().cloned().collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let (critic_loss, cg) = self.critic_gradients(&refs);
        self.critic_opt.step(&mut self.critic, &cg);
        let (actor_objective, ag) = self.actor_gradients(&refs);
        self.actor_opt.step(&mut self.actor, &ag);
        let tau = self.hyper.tau;
        soft_update(&mut self.target_critic, &self.critic, tau)?;
        soft_update(&mut self.target_actor, &self.actor, tau)?;
        Ok(TrainStats { critic_loss, actor_objective })
    }

    pub fn to_json(&self) -> String {
        persist::to_string(PERSIST_KIND, &AgentRecord::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        AgentRecord::into_bundle(persist::from_str(PERSIST_KIND, text)?)
    }
}

/// `θ' ← τ·θ + (1−τ)·θ'`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), AgentError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(AgentError::InvalidHyper(format!("tau {tau} outside [0, 1]")));
    }
    Ok(target.soft_update_from(online, tau)?)
}

/// Persisted form: networks, thresholds and configuration. Replay contents
/// and optimizer moments are not stored.
#[derive(Serialize, Deserialize)]
struct AgentRecord {
    hyper: AgentHyper,
    embed_dim: usize,
    channels: Vec<usize>,
    thresholds: BTreeMap<u8, f64>,
    actor: MlpRecord,
    critic: MlpRecord,
    target_actor: MlpRecord,
    target_critic: MlpRecord,
}

impl From<&AgentBundle> for AgentRecord {
    fn from(b: &AgentBundle) -> Self {
        AgentRecord {
            hyper: b.hyper.clone(),
            embed_dim: b.embed_dim,
            channels: b.channels.clone(),
            thresholds: b.thresholds.clone(),
            actor: (&b.actor).into(),
            critic: (&b.critic).into(),
            target_actor: (&b.target_actor).into(),
            target_critic: (&b.target_critic).into(),
        }
    }
}

impl AgentRecord {
    fn into_bundle(self) -> Result<AgentBundle, AgentError> {
        let corrupt = |m: String| AgentError::PersistFormatError(persist::PersistError::Format(m));
        let net = |r: MlpRecord| Mlp::try_from(r).map_err(corrupt);
        let mut b = AgentBundle::new(self.hyper, self.embed_dim, &self.channels, 0)?;
        let (actor, critic) = (net(self.actor)?, net(self.critic)?);
        let (target_actor, target_critic) = (net(self.target_actor)?, net(self.target_critic)?);
        for (name, loaded, fresh) in [
            ("actor", &actor, &b.actor),
            ("critic", &critic, &b.critic),
            ("target_actor", &target_actor, &b.target_actor),
            ("target_critic", &target_critic, &b.target_critic),
        ] {
            if loaded.shapes() != fresh.shapes() || loaded.output != fresh.output {
                return Err(corrupt(format!("{name} does not match the declared dimensions")));
            }
        }
        if self.thresholds.values().any(|&t| !(t > 0.0)) {
            return Err(corrupt("thresholds must be positive".into()));
        }
        b.actor_opt = Adam::new(&actor, b.hyper.lr_actor);
        b.critic_opt = Adam::new(&critic, b.hyper.lr_critic);
        b.actor = actor;
        b.critic = critic;
        b.target_actor = target_actor;
        b.target_critic = target_critic;
        b.thresholds = self.thresholds;
        Ok(b)
    }
}

pub fn save_agent(path: &Path, agent: &AgentBundle) -> Result<(), AgentError> {
    Ok(persist::save(path, PERSIST_KIND, &AgentRecord::from(agent))?)
}

pub fn load_agent(path: &Path) -> Result<AgentBundle, AgentError> {
    AgentRecord::into_bundle(persist::load(path, PERSIST_KIND)?)
}

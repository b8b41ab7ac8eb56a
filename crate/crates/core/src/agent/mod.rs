//! Alert decisions driven by a DDPG policy.
//!
//! The state `s = {g, d, a}` joins the text embedding, per-channel window
//! statistics z-scored against activity baselines, and the activity profile.
//! The policy emits one weight per monitored channel; the alert score is the
//! weighted mean of the absolute mean z-scores and an alert fires when it
//! exceeds the threshold of the recognized activity.

mod ddpg;
mod log;

pub use ddpg::{
    load_agent, save_agent, soft_update, AgentBundle, AgentHyper, ReplayBuffer, TrainStats, Transition,
    PERSIST_KIND,
};
pub use log::{metrics_from_rows, read_csv, CsvRow, DecisionLog, DecisionRecord};

use serde::{Deserialize, Serialize};

use crate::activity::{recognize, ActivityError, ActivityProfile, Recognizer};
use crate::dataset::{ActivityBaselines, DatasetError, Episode, Window, NUM_ACTIVITIES};
use crate::nn::ShapeMismatch;
use crate::persist::PersistError;
use crate::text::Embedding;

/// Denominator floor for the weighted score.
pub const WEIGHT_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    MissingBaseline(#[from] DatasetError),
    #[error(transparent)]
    Activity(#[from] ActivityError),
    #[error("state has dimension {found}, agent expects {expected}")]
    ShapeError { expected: usize, found: usize },
    #[error("replay holds {have} transitions, batch needs {need}")]
    InsufficientReplay { have: usize, need: usize },
    #[error("invalid agent configuration: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Network(#[from] ShapeMismatch),
    #[error("agent file: {0}")]
    PersistFormatError(#[from] PersistError),
    #[error("decision log: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub g: Vec<f64>,
    /// `[z_mean, std/σ]` per monitored channel.
    pub d: Vec<f64>,
    pub a: Vec<f64>,
    /// Activity whose baselines and threshold apply.
    pub activity: u8,
}

impl AgentState {
    pub fn dim(&self) -> usize {
        self.g.len() + self.d.len() + self.a.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.g);
        v.extend_from_slice(&self.d);
        v.extend_from_slice(&self.a);
        v
    }

    /// The mean z-score of each monitored channel.
    pub fn z(&self) -> impl Iterator<Item = f64> + '_ {
        self.d.iter().step_by(2).copied()
    }
}

pub fn state_dim(embed_dim: usize, channels: usize) -> usize {
    embed_dim + 2 * channels + NUM_ACTIVITIES
}

/// Assemble the state for `window`.
///
/// With a recognizer the profile is its one-hot output and the recognized
/// activity selects baselines and threshold. Without one the profile is
/// uniform and activity 0 is used, which pairs with pooled baselines.
pub fn build_state(
    g: &Embedding,
    window: &Window,
    baselines: &ActivityBaselines,
    recognizer: Option<&Recognizer>,
    channels: &[usize],
) -> Result<AgentState, AgentError> {
    let profile = match recognizer {
        Some(r) => recognize(window, r)?,
        None => ActivityProfile::uniform(),
    };
    let activity = if recognizer.is_some() { profile.code() } else { 0 };
    let stats = baselines.get(activity)?;
    let mut d = Vec::with_capacity(2 * channels.len());
    for &c in channels {
        let row = window.data.row(c);
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let std = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let s = stats[c];
        d.push((mean - s.mean) / s.std);
        d.push(std / s.std);
    }
    Ok(AgentState { g: g.g.clone(), d, a: profile.a, activity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDecision {
    pub slot: u64,
    pub activity: u8,
    pub score: f64,
    pub threshold: f64,
    pub fired: bool,
    pub weights: Vec<f64>,
}

pub fn alert_score(state: &AgentState, action: &Action) -> f64 {
    let total: f64 = action.w.iter().sum();
    let num: f64 = action.w.iter().zip(state.z()).map(|(w, z)| w * z.abs()).sum();
    num / total.max(WEIGHT_EPS)
}

pub fn alert_decide(state: &AgentState, action: &Action, threshold: f64, slot: u64) -> AlertDecision {
    debug_assert!(threshold > 0.0);
    let score = alert_score(state, action);
    AlertDecision {
        slot,
        activity: state.activity,
        score,
        threshold,
        fired: score > threshold,
        weights: action.w.clone(),
    }
}

/// `−1` for a false or missed alert, `0` otherwise.
pub fn slot_reward(decision: &AlertDecision, truth: Episode) -> f64 {
    if decision.fired != truth.is_anomalous() {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertCounts {
    pub ma_events: u64,
    pub anomalous_episodes: u64,
    pub fa_events: u64,
    pub normal_episodes: u64,
}

/// Missed- and false-alert rates, counted per slot against its own tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertMetrics {
    pub p_ma: f64,
    pub p_fa: f64,
    pub counts: AlertCounts,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl AlertMetrics {
    pub fn record(&mut self, fired: bool, truth: Episode) {
        let c = &mut self.counts;
        if truth.is_anomalous() {
            c.anomalous_episodes += 1;
            c.ma_events += u64::from(!fired);
        } else {
            c.normal_episodes += 1;
            c.fa_events += u64::from(fired);
        }
        self.p_ma = ratio(c.ma_events, c.anomalous_episodes);
        self.p_fa = ratio(c.fa_events, c.normal_episodes);
    }

    pub fn total(&self) -> f64 {
        self.p_fa + self.p_ma
    }

    pub fn slots(&self) -> u64 {
        self.counts.anomalous_episodes + self.counts.normal_episodes
    }

    /// Fraction of all slots that were wrong.
    pub fn error_rate(&self) -> f64 {
        ratio(self.counts.fa_events + self.counts.ma_events, self.slots())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_baselines, AnomalyKind, FEATURE_CHANNELS};
    use crate::text::embed;
    use ndarray::Array2;

    fn state(z: &[f64]) -> AgentState {
        AgentState {
            g: vec![],
            d: z.iter().flat_map(|&v| [v, 1.0]).collect(),
            a: ActivityProfile::one_hot(1).a,
            activity: 1,
        }
    }

    #[test]
    fn decision_examples() {
        let s = state(&[2.0, 2.0, 2.0]);
        let zero = alert_decide(&s, &Action { w: vec![0.0; 3] }, 0.01, 0);
        assert_eq!((zero.score, zero.fired), (0.0, false));
        let d = alert_decide(&s, &Action { w: vec![1.0; 3] }, 1.5, 1);
        assert!((d.score - 2.0).abs() < 1e-12 && d.fired);
        let w = Action { w: vec![0.0, 1.0, 0.5] };
        let a = alert_score(&state(&[100.0, 1.0, -3.0]), &w);
        let b = alert_score(&state(&[-7.0, 1.0, -3.0]), &w);
        assert_eq!(a, b);
    }

    #[test]
    fn reward_table() {
        let mut d = alert_decide(&state(&[3.0]), &Action { w: vec![1.0] }, 2.0, 0);
        let anomalous = Episode::Anomalous(AnomalyKind::GainShift);
        assert_eq!(slot_reward(&d, Episode::Normal), -1.0);
        assert_eq!(slot_reward(&d, anomalous), 0.0);
        d.fired = false;
        assert_eq!(slot_reward(&d, anomalous), -1.0);
        assert_eq!(slot_reward(&d, Episode::Normal), 0.0);
    }

    #[test]
    fn metrics_counts() {
        let mut m = AlertMetrics::default();
        assert_eq!(m.total(), 0.0);
        let anomalous = Episode::Anomalous(AnomalyKind::GainShift);
        for (fired, truth) in [(true, Episode::Normal), (false, Episode::Normal), (false, anomalous), (true, anomalous), (true, anomalous)] {
            m.record(fired, truth);
        }
        assert_eq!(m.counts, AlertCounts { ma_events: 1, anomalous_episodes: 3, fa_events: 1, normal_episodes: 2 });
        assert!((m.p_ma - 1.0 / 3.0).abs() < 1e-15 && m.p_fa == 0.5);
        assert!((m.error_rate() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn build_state_against_own_baseline() {
        let data = Array2::from_shape_fn((FEATURE_CHANNELS, 16), |(c, n)| c as f64 + if n % 2 == 0 { 0.5 } else { -0.5 });
        let w = Window { data, activity: 2, episode: Episode::Normal, t_index: 0, subject_id: 1 };
        let base = compute_baselines(std::slice::from_ref(&w));
        let rec = crate::activity::train_recognizer(std::slice::from_ref(&w));
        let g = embed("hypertension", 8).unwrap();
        let chans = [3, 4, 0];
        let s = build_state(&g, &w, &base, Some(&rec), &chans).unwrap();
        assert_eq!(s.d.len(), 2 * chans.len());
        assert_eq!(s.dim(), state_dim(8, 3));
        assert!(s.z().all(|z| z.abs() < 1e-12));
        assert_eq!(s.activity, 2);
        assert_eq!(s, build_state(&g, &w, &base, Some(&rec), &chans).unwrap());
        let other = compute_baselines(&[Window { activity: 5, ..w.clone() }]);
        assert!(matches!(
            build_state(&g, &w, &other, Some(&rec), &chans),
            Err(AgentError::MissingBaseline(DatasetError::MissingBaseline(2)))
        ));
        let pooled = crate::dataset::pooled_baselines(std::slice::from_ref(&w));
        let s = build_state(&g, &w, &pooled, None, &chans).unwrap();
        assert_eq!(s.activity, 0);
        assert!((s.a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

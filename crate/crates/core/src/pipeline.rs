//! The per-slot decision path shared by the experiment harness and the edge
//! server: preprocess, build the state, act, decide, log, and take feedback.

use std::sync::Arc;

use crate::activity::Recognizer;
use crate::agent::{alert_decide, build_state, AgentBundle, AgentError, AlertDecision, DecisionLog, DecisionRecord, Transition};
use crate::dataset::{ActivityBaselines, Episode, Window};
use crate::denoise::{denoise_many, wiener_filter, DenoiseError, DiffusionModel, WienerConfig};
use crate::feedback::{apply_feedback, FeedbackConfig, FeedbackError, FeedbackEvent, FeedbackOutcome};
use crate::gate::ExpertId;
use crate::seed::{self, Rng};
use crate::text::Embedding;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

#[derive(Debug, Clone)]
pub enum Preprocessor {
    Identity,
    Wiener(WienerConfig),
    /// `delta_est`: noise sd relative to each channel's mean magnitude.
    Diffusion { model: Arc<DiffusionModel>, delta_est: f64 },
}

impl Preprocessor {
    pub fn apply(&self, window: &Window) -> Result<Window, DenoiseError> {
        Ok(self.apply_many(std::slice::from_ref(window))?.remove(0))
    }

    pub fn apply_many(&self, windows: &[Window]) -> Result<Vec<Window>, DenoiseError> {
        match self {
            Preprocessor::Identity => Ok(windows.to_vec()),
            Preprocessor::Wiener(cfg) => windows.iter().map(|w| wiener_filter(w, cfg)).collect(),
            Preprocessor::Diffusion { model, delta_est } => denoise_many(windows, model, *delta_est),
        }
    }
}

/// One expert's agent together with the context its states are built from.
#[derive(Debug, Clone)]
pub struct ExpertRuntime {
    pub expert_id: ExpertId,
    pub agent: AgentBundle,
    pub baselines: Arc<ActivityBaselines>,
    /// `None` runs activity-blind: uniform profile, pooled baselines.
    pub recognizer: Option<Arc<Recognizer>>,
    pub feedback: FeedbackConfig,
    pub log: DecisionLog,
    pub explore: bool,
    explore_rng: Rng,
    train_rng: Rng,
    /// Last step's transition, completed when the next state arrives.
    pending: Option<(Vec<f64>, Vec<f64>, f64)>,
}

impl ExpertRuntime {
    pub fn new(
        expert_id: ExpertId,
        agent: AgentBundle,
        baselines: Arc<ActivityBaselines>,
        recognizer: Option<Arc<Recognizer>>,
        feedback: FeedbackConfig,
        seed: u64,
    ) -> Self {
        ExpertRuntime {
            expert_id,
            agent,
            baselines,
            recognizer,
            feedback,
            log: DecisionLog::new(),
            explore: false,
            explore_rng: seed::stream(seed, &[seed::purpose::EXPLORE]),
            train_rng: seed::stream(seed, &[seed::purpose::AGENT_TRAIN]),
            pending: None,
        }
    }

    /// Decide one already preprocessed window and log it.
    pub fn decide(
        &mut self,
        slot: u64,
        g: &Embedding,
        window: &Window,
        truth: Option<Episode>,
    ) -> Result<AlertDecision, PipelineError> {
        let state = build_state(g, window, &self.baselines, self.recognizer.as_deref(), &self.agent.channels)?;
        let action = self.agent.act(&state, self.explore, &mut self.explore_rng)?;
        let decision = alert_decide(&state, &action, self.agent.threshold(state.activity), slot);
        self.log.push(DecisionRecord { decision: decision.clone(), truth, state });
        Ok(decision)
    }

    /// Decide with a known reward and learn from it: the previous transition
    /// is completed with this state and one batch is trained.
    pub fn decide_and_learn(
        &mut self,
        slot: u64,
        g: &Embedding,
        window: &Window,
        truth: Episode,
    ) -> Result<AlertDecision, PipelineError> {
        let decision = self.decide(slot, g, window, Some(truth))?;
        let s = self.log.records().last().expect("just logged").state.to_vec();
        if let Some((ps, pw, pr)) = self.pending.take() {
            self.agent.replay.push(Transition { s: ps, w: pw, r: pr, s_next: s.clone() });
        }
        self.pending = Some((s, decision.weights.clone(), crate::agent::slot_reward(&decision, truth)));
        if self.agent.replay.len() >= self.agent.hyper.batch {
            self.agent.train_batch(&mut self.train_rng)?;
        }
        Ok(decision)
    }

    pub fn apply(&mut self, event: &FeedbackEvent) -> Result<FeedbackOutcome, PipelineError> {
        Ok(apply_feedback(&mut self.agent, event, &self.log, &self.feedback, &mut self.train_rng)?)
    }

    pub fn into_agent(self) -> AgentBundle {
        self.agent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentHyper;
    use crate::dataset::{compute_baselines, synth, windowize};
    use crate::text::embed;

    #[test]
    fn decisions_are_logged_and_reproducible() {
        let s = synth::generate_subject(&synth::CohortSpec::small(2), 1);
        let ws = windowize(&s, 32, 32).unwrap();
        let base = Arc::new(compute_baselines(&ws));
        let rec = Arc::new(crate::activity::train_recognizer(&ws));
        let agent = AgentBundle::new(AgentHyper { hidden: vec![8], ..AgentHyper::default() }, 16, &[3, 4], 1).unwrap();
        let g = embed("hypertension", 16).unwrap();
        let run = || {
            let mut rt = ExpertRuntime::new("default".into(), agent.clone(), base.clone(), Some(rec.clone()), FeedbackConfig::default(), 3);
            let out: Vec<AlertDecision> =
                ws.iter().enumerate().map(|(i, w)| rt.decide(i as u64, &g, w, Some(w.episode)).unwrap()).collect();
            (out, rt.log.to_csv_string())
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert!(a.iter().all(|d| d.fired == (d.score > d.threshold)));
        assert_eq!(Preprocessor::Identity.apply(&ws[0]).unwrap(), ws[0]);
    }
}

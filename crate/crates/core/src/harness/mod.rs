//! Experiment runner: data preparation, model training and caching, the
//! error-versus-noise sweep, learning curves and run manifests.
//!
//! Every random draw is keyed off the configured seeds, so a config file
//! fully determines every output byte.

mod denoise_eval;
mod fig4;
mod fig5;
mod manifest;
mod models;
mod prepare;

pub use denoise_eval::{denoise_errors, DenoiseRow};
pub use fig4::{adapt_agent, eval_stream, run_cell, run_fig4, train_stream, SweepResult, SweepRow};
pub use fig5::{run_fig5, CurveResult, CurveRow};
pub use manifest::{git_hash, Manifest};
pub use models::{load_or_train_diffusion, load_or_train_recognizer, pretrain_agent, AgentVariant, Models};
pub use prepare::{prepare_data, PreparedData};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentError, AgentHyper};
use crate::dataset::{synth::CohortSpec, AnomalyConfig, DatasetError};
use crate::denoise::{DenoiseError, DiffusionHyper, WienerConfig};
use crate::feedback::{FeedbackConfig, FeedbackError};
use crate::gate::{rule_gate, ExpertRegistry, GateError};
use crate::noise::{NoiseError, Scenario};
use crate::persist::PersistError;
use crate::pipeline::PipelineError;
use crate::text::{SensitiveRecord, TextError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("{0} missing from the model directory and training was not requested")]
    ModelNotReady(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Unfiltered,
    NoActivity,
    NoFeedback,
    Wiener,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Full, Method::Unfiltered, Method::NoActivity, Method::NoFeedback, Method::Wiener];

    pub fn label(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Unfiltered => "unfiltered",
            Method::NoActivity => "no_activity",
            Method::NoFeedback => "no_feedback",
            Method::Wiener => "wiener",
        }
    }

    pub fn uses_diffusion(self) -> bool {
        matches!(self, Method::Full | Method::NoActivity | Method::NoFeedback)
    }

    pub fn activity_aware(self) -> bool {
        self != Method::NoActivity
    }
}

/// Where recordings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// `.log` files in the MHEALTH layout; subject ids from the file names.
    Files { paths: Vec<PathBuf> },
    Synthetic { cohort: CohortSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Passes over the training stream, each with fresh anomaly draws.
    pub passes: usize,
    /// Feedback participation while pretraining.
    pub participation: f64,
    pub explore: bool,
    /// Passes over noisy, preprocessed training windows at each sweep
    /// cell's noise setting before that cell is evaluated.
    pub adapt_passes: usize,
    /// Feedback participation during those passes.
    pub adapt_participation: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { passes: 2, participation: 1.0, explore: true, adapt_passes: 1, adapt_participation: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fig5Config {
    pub scenario: Scenario,
    pub delta: f64,
    pub block_size: usize,
    pub blocks: usize,
    pub methods: Vec<Method>,
    /// Seed for the single learning run per method.
    pub seed: u64,
}

impl Default for Fig5Config {
    fn default() -> Self {
        Fig5Config {
            scenario: Scenario::S2Gaussian,
            delta: 0.4,
            block_size: 50,
            blocks: 80,
            methods: Method::ALL.to_vec(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_subjects: Vec<u32>,
    pub eval_subjects: Vec<u32>,
    pub window_len: usize,
    pub stride: usize,
    /// Its `seed` is replaced by one derived from each run seed.
    pub anomaly: AnomalyConfig,
    pub scenarios: Vec<Scenario>,
    pub deltas: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Cap on evaluation slots per cell; `None` uses the whole stream.
    pub slot_budget: Option<usize>,
    pub participation: f64,
    /// Drives the gate, which picks the monitored channels.
    pub user_description: String,
    pub record: SensitiveRecord,
    pub embed_dim: usize,
    pub registry: ExpertRegistry,
    pub diffusion: DiffusionHyper,
    pub wiener: WienerConfig,
    pub agent: AgentHyper,
    pub feedback: FeedbackConfig,
    pub pretrain: PretrainConfig,
    pub fig5: Fig5Config,
    /// Cache for trained models. Without it nothing is reused between runs.
    pub model_dir: Option<PathBuf>,
    /// Train models that are not cached instead of failing.
    pub train: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic { cohort: CohortSpec::default() },
            train_subjects: (1..=7).collect(),
            eval_subjects: (8..=10).collect(),
            window_len: 64,
            stride: 64,
            anomaly: AnomalyConfig::default(),
            scenarios: vec![Scenario::S1Uniform, Scenario::S2Gaussian],
            deltas: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            slot_budget: None,
            participation: 0.5,
            user_description: "I am programmer, working long hours at a desk".into(),
            record: SensitiveRecord {
                condition_codes: vec!["htn".into()],
                symptom_tags: vec!["dizziness".into()],
                ..SensitiveRecord::default()
            },
            embed_dim: 64,
            registry: ExpertRegistry::standard(),
            diffusion: DiffusionHyper::default(),
            wiener: WienerConfig::default(),
            agent: AgentHyper::default(),
            feedback: FeedbackConfig::default(),
            pretrain: PretrainConfig::default(),
            fig5: Fig5Config::default(),
            model_dir: None,
            train: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if let Some(d) = self.deltas.iter().chain([&self.fig5.delta]).find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("delta {d} outside [0, 1]"));
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.train_subjects.is_empty() || self.eval_subjects.is_empty() {
            return bad("train and eval subject lists must be nonempty".into());
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.participation) || !unit(self.pretrain.participation) || !unit(self.pretrain.adapt_participation) {
            return bad("participation must lie in [0, 1]".into());
        }
        if self.window_len < 2 || self.stride == 0 {
            return bad("window_len must be at least 2 and stride positive".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.fig5.block_size == 0 || self.fig5.blocks == 0 {
            return bad("fig5 needs a positive block size and count".into());
        }
        self.registry.validate()?;
        self.agent.validate()?;
        Ok(())
    }

    /// Replace every seed with `seed` (the `--seed` override).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.fig5.seed = seed;
        self
    }

    /// Expert chosen by the rule gate and its monitored channels.
    pub fn expert(&self) -> Result<(String, Vec<usize>), HarnessError> {
        let id = rule_gate(&self.user_description, &self.registry);
        let entry = self.registry.get(&id).ok_or_else(|| HarnessError::InvalidConfig(format!("gate chose unknown expert {id}")))?;
        Ok((id, entry.monitored_channels.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"seeds": [9], "methods": ["full", "wiener"]}"#).unwrap();
        assert_eq!(partial.seeds, vec![9]);
        assert_eq!(partial.methods, vec![Method::Full, Method::Wiener]);
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"deltas": [0.2, 1.5]}"#),
            Err(HarnessError::InvalidConfig(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"methods": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"methods": ["fancy"]}"#).is_err());
        let (id, chans) = cfg.expert().unwrap();
        assert_eq!(id, "sedentary");
        assert_eq!(chans[..2], [3, 4]);
    }
}

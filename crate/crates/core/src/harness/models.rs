use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use super::{ExperimentConfig, HarnessError, PreparedData};
use crate::activity::{self, Recognizer};
use crate::agent::AgentBundle;
use crate::dataset::{compute_baselines, pooled_baselines, synthesize_anomalies, ActivityBaselines, AnomalyConfig, Window};
use crate::denoise::{train_diffusion, DiffusionModel};
use crate::feedback::simulate_feedback;
use crate::persist::{self, PersistError};
use crate::pipeline::ExpertRuntime;
use crate::seed::{self, Rng};
use crate::text::{embed, redact, Embedding};

/// Trained components shared by all cells of a sweep.
#[derive(Debug, Clone)]
pub struct Models {
    pub diffusion: Arc<DiffusionModel>,
    pub recognizer: Arc<Recognizer>,
    pub aware: Arc<ActivityBaselines>,
    pub pooled: Arc<ActivityBaselines>,
    /// Embedding of the configured user's redacted record.
    pub g: Embedding,
    pub expert_id: String,
    pub channels: Vec<usize>,
}

/// Which state construction an agent is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentVariant {
    /// Recognized activity, per-activity baselines and thresholds.
    Aware,
    /// Uniform profile, pooled baselines, one threshold.
    Pooled,
}

impl AgentVariant {
    pub fn label(self) -> &'static str {
        match self {
            AgentVariant::Aware => "aware",
            AgentVariant::Pooled => "pooled",
        }
    }
}

/// FNV-1a over the JSON encoding: names cache files after the settings that
/// produced them.
fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Load `name` from the model directory, or train it. Fresh models are
/// always passed through their text form so a cached and a freshly trained
/// model behave identically.
fn cached<T>(
    cfg: &ExperimentConfig,
    name: &str,
    to_json: impl Fn(&T) -> String,
    from_json: impl Fn(&str) -> Result<T, HarnessError>,
    train: impl FnOnce() -> Result<T, HarnessError>,
) -> Result<T, HarnessError> {
    let path: Option<PathBuf> = cfg.model_dir.as_ref().map(|d| d.join(format!("{name}.json")));
    if let Some(p) = &path {
        if p.exists() {
            log::info!("loading {}", p.display());
            let text = std::fs::read_to_string(p).map_err(|e| PersistError::Io { path: p.display().to_string(), source: e })?;
            return from_json(&text);
        }
    }
    if !cfg.train {
        let what = path.map_or_else(|| format!("{name} (no model_dir)"), |p| p.display().to_string());
        return Err(HarnessError::ModelNotReady(what));
    }
    log::info!("training {name}");
    let text = to_json(&train()?);
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, &text)?;
    }
    from_json(&text)
}

fn data_key(cfg: &ExperimentConfig) -> String {
    fingerprint(&(&cfg.data, &cfg.train_subjects, cfg.window_len, cfg.stride))
}

/// The diffusion denoiser, from the model directory or freshly trained.
pub fn load_or_train_diffusion(cfg: &ExperimentConfig, data: &PreparedData) -> Result<DiffusionModel, HarnessError> {
    cached(
        cfg,
        &format!("diffusion-{}", fingerprint(&(data_key(cfg), &cfg.diffusion))),
        DiffusionModel::to_json,
        |t| Ok(DiffusionModel::from_json(t)?),
        || Ok(train_diffusion(&data.train, &cfg.diffusion)?),
    )
}

/// The activity recognizer, from the model directory or freshly trained.
pub fn load_or_train_recognizer(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Recognizer, HarnessError> {
    cached(
        cfg,
        &format!("recognizer-{}", data_key(cfg)),
        |r: &Recognizer| persist::to_string(activity::PERSIST_KIND, r),
        |t| Ok(persist::from_str(activity::PERSIST_KIND, t)?),
        || Ok(activity::train_recognizer(&data.train)),
    )
}

impl Models {
    pub fn prepare(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Self, HarnessError> {
        let diffusion = load_or_train_diffusion(cfg, data)?;
        let recognizer = load_or_train_recognizer(cfg, data)?;
        let (expert_id, channels) = cfg.expert()?;
        let text = redact(&cfg.record)?;
        Ok(Models {
            diffusion: Arc::new(diffusion),
            recognizer: Arc::new(recognizer),
            aware: Arc::new(compute_baselines(&data.train)),
            pooled: Arc::new(pooled_baselines(&data.train)),
            g: embed(&text.text, cfg.embed_dim)?,
            expert_id,
            channels,
        })
    }

    /// The same models serving another registered expert.
    pub fn for_expert(&self, cfg: &ExperimentConfig, id: &str) -> Result<Models, HarnessError> {
        let entry = cfg.registry.get(id).ok_or_else(|| HarnessError::InvalidConfig(format!("unknown expert {id}")))?;
        Ok(Models { expert_id: id.to_string(), channels: entry.monitored_channels.clone(), ..self.clone() })
    }

    pub fn baselines(&self, variant: AgentVariant) -> Arc<ActivityBaselines> {
        match variant {
            AgentVariant::Aware => self.aware.clone(),
            AgentVariant::Pooled => self.pooled.clone(),
        }
    }

    pub fn recognizer_for(&self, variant: AgentVariant) -> Option<Arc<Recognizer>> {
        (variant == AgentVariant::Aware).then(|| self.recognizer.clone())
    }

    /// A runtime for `agent` built the way `variant` expects.
    pub fn runtime(&self, cfg: &ExperimentConfig, agent: AgentBundle, variant: AgentVariant, seed: u64) -> ExpertRuntime {
        ExpertRuntime::new(
            self.expert_id.clone(),
            agent,
            self.baselines(variant),
            self.recognizer_for(variant),
            cfg.feedback,
            seed,
        )
    }
}

/// Anomaly settings for pass `pass` of run seed `seed`.
pub(super) fn anomaly_config(cfg: &ExperimentConfig, seed: u64, pass: u64) -> AnomalyConfig {
    AnomalyConfig { seed: seed::derive(seed, &[seed::purpose::ANOMALY, pass]), ..cfg.anomaly.clone() }
}

/// One learning pass: act with exploration as configured on `rt`, learn from
/// the ground-truth reward, then take simulated feedback.
pub(super) fn learn_online(
    rt: &mut ExpertRuntime,
    models: &Models,
    stream: &[Window],
    participation: f64,
    fb_rng: &mut Rng,
) -> Result<(), HarnessError> {
    let slot0 = rt.log.records().len() as u64;
    for (i, w) in stream.iter().enumerate() {
        let d = rt.decide_and_learn(slot0 + i as u64, &models.g, w, w.episode)?;
        if let Some(ev) = simulate_feedback(&d, w.episode, participation, fb_rng)? {
            rt.apply(&ev)?;
        }
    }
    Ok(())
}

/// Train the expert's agent on clean training data: ground-truth rewards
/// every slot, plus simulated feedback at the pretraining participation
/// when `with_feedback` is set.
pub fn pretrain_agent(
    cfg: &ExperimentConfig,
    models: &Models,
    data: &PreparedData,
    variant: AgentVariant,
    with_feedback: bool,
    seed: u64,
) -> Result<AgentBundle, HarnessError> {
    let name = format!(
        "agent-{}-{}{}-seed{seed}-{}",
        models.expert_id,
        variant.label(),
        if with_feedback { "" } else { "-nofb" },
        fingerprint(&(
            &cfg.data,
            &cfg.train_subjects,
            cfg.window_len,
            cfg.stride,
            &cfg.anomaly,
            &cfg.agent,
            &cfg.feedback,
            &cfg.pretrain,
            &models.channels,
            &models.g.g,
        ))
    );
    cached(
        cfg,
        &name,
        AgentBundle::to_json,
        |t| Ok(AgentBundle::from_json(t)?),
        || {
            let agent = AgentBundle::new(cfg.agent.clone(), cfg.embed_dim, &models.channels, seed::derive(seed, &[seed::purpose::AGENT_INIT]))?;
            let mut rt = models.runtime(cfg, agent, variant, seed::derive(seed, &[seed::purpose::AGENT_TRAIN]));
            rt.explore = cfg.pretrain.explore;
            let participation = if with_feedback { cfg.pretrain.participation } else { 0.0 };
            let mut fb_rng = seed::stream(seed, &[seed::purpose::FEEDBACK, 0]);
            for pass in 0..cfg.pretrain.passes as u64 {
                let stream = synthesize_anomalies(&data.train, &anomaly_config(cfg, seed, 1_000 + pass))?;
                learn_online(&mut rt, models, &stream, participation, &mut fb_rng)?;
            }
            let agent = rt.into_agent();
            log::info!("pretrained {} agent (seed {seed}): thresholds {:?}", variant.label(), agent.thresholds);
            Ok(agent)
        },
    )
}

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::models::{anomaly_config, learn_online};
use super::{pretrain_agent, AgentVariant, ExperimentConfig, HarnessError, Method, Models, PreparedData};
use crate::agent::{AgentBundle, AlertMetrics};
use crate::dataset::{synthesize_anomalies, Window};
use crate::feedback::simulate_feedback;
use crate::noise::{inject, NoiseSpec, Scenario};
use crate::pipeline::Preprocessor;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub method: Method,
    pub delta: f64,
    pub seed: u64,
    pub p_fa: f64,
    pub p_ma: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(input);
        Ok(SweepResult { rows: r.deserialize().collect::<Result<_, _>>()? })
    }

    /// Mean total per method over every row.
    pub fn mean_total(&self) -> BTreeMap<Method, f64> {
        let mut acc: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.method).or_default();
            e.0 += r.total;
            e.1 += 1;
        }
        acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
    }
}

/// The noisy evaluation stream for one `(scenario, δ, seed)`: anomalies on
/// the clean eval windows, then additive sensor noise.
pub fn eval_stream(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    scenario: Scenario,
    delta: f64,
    seed: u64,
) -> Result<Vec<Window>, HarnessError> {
    let mut tagged = synthesize_anomalies(&data.eval, &anomaly_config(cfg, seed, 0))?;
    if let Some(n) = cfg.slot_budget {
        tagged.truncate(n);
    }
    let spec = NoiseSpec { scenario, delta, seed: seed::derive(seed, &[seed::purpose::NOISE]) };
    Ok(tagged.iter().map(|w| inject(w, &spec, &data.channel_means)).collect::<Result<_, _>>()?)
}

/// Noisy training windows for adapting agents to one `(scenario, δ, seed)`.
pub fn train_stream(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    scenario: Scenario,
    delta: f64,
    seed: u64,
    pass: u64,
) -> Result<Vec<Window>, HarnessError> {
    let tagged = synthesize_anomalies(&data.train, &anomaly_config(cfg, seed, 3_000 + pass))?;
    let spec = NoiseSpec { scenario, delta, seed: seed::derive(seed, &[seed::purpose::NOISE, 3_000 + pass]) };
    Ok(tagged.iter().map(|w| inject(w, &spec, &data.channel_means)).collect::<Result<_, _>>()?)
}

pub(super) fn preprocessor(cfg: &ExperimentConfig, models: &Models, method: Method, spec: &NoiseSpec) -> Preprocessor {
    match method {
        Method::Unfiltered => Preprocessor::Identity,
        Method::Wiener => Preprocessor::Wiener(cfg.wiener),
        _ => Preprocessor::Diffusion { model: models.diffusion.clone(), delta_est: spec.relative_sd() },
    }
}

pub(super) fn variant(method: Method) -> AgentVariant {
    if method.activity_aware() {
        AgentVariant::Aware
    } else {
        AgentVariant::Pooled
    }
}

/// Continue training a pretrained agent on preprocessed training streams, one
/// per pass, the way `method` runs: no feedback for `no_feedback`.
pub fn adapt_agent(
    cfg: &ExperimentConfig,
    models: &Models,
    agent: AgentBundle,
    method: Method,
    passes: &[Vec<Window>],
    seed: u64,
) -> Result<AgentBundle, HarnessError> {
    let participation = if method == Method::NoFeedback { 0.0 } else { cfg.pretrain.adapt_participation };
    let mut rt = models.runtime(cfg, agent, variant(method), seed::derive(seed, &[seed::purpose::AGENT_TRAIN, 2]));
    rt.explore = cfg.pretrain.explore;
    let mut fb_rng = seed::stream(seed, &[seed::purpose::FEEDBACK, 2]);
    for stream in passes {
        learn_online(&mut rt, models, stream, participation, &mut fb_rng)?;
    }
    Ok(rt.into_agent())
}

/// Run one method over an already preprocessed stream, with simulated
/// feedback at `participation`, starting from `agent`.
pub fn run_cell(
    cfg: &ExperimentConfig,
    models: &Models,
    agent: AgentBundle,
    method: Method,
    stream: &[Window],
    seed: u64,
) -> Result<AlertMetrics, HarnessError> {
    let participation = if method == Method::NoFeedback { 0.0 } else { cfg.participation };
    let mut rt = models.runtime(cfg, agent, variant(method), seed::derive(seed, &[seed::purpose::AGENT_TRAIN, 1]));
    let mut fb_rng = seed::stream(seed, &[seed::purpose::FEEDBACK, 1]);
    for (slot, w) in stream.iter().enumerate() {
        let d = rt.decide(slot as u64, &models.g, w, Some(w.episode))?;
        if let Some(ev) = simulate_feedback(&d, w.episode, participation, &mut fb_rng)? {
            rt.apply(&ev)?;
        }
    }
    Ok(rt.log.metrics())
}

type AgentKey = (u64, &'static str, bool);

fn agent_key(seed: u64, method: Method) -> AgentKey {
    (seed, variant(method).label(), method != Method::NoFeedback)
}

/// Every method at one `(scenario, δ, seed)` point.
fn sweep_point(
    cfg: &ExperimentConfig,
    models: &Models,
    data: &PreparedData,
    agents: &BTreeMap<AgentKey, AgentBundle>,
    (seed, scenario, delta): (u64, Scenario, f64),
) -> Result<Vec<SweepRow>, HarnessError> {
    let noisy = eval_stream(cfg, data, scenario, delta, seed)?;
    let noisy_train: Vec<Vec<Window>> = (0..cfg.pretrain.adapt_passes as u64)
        .map(|p| train_stream(cfg, data, scenario, delta, seed, p))
        .collect::<Result<_, _>>()?;
    let spec = NoiseSpec { scenario, delta, seed };
    let mut denoised: Option<(Vec<Vec<Window>>, Vec<Window>)> = None;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let pre = preprocessor(cfg, models, method, &spec);
        let prepare = || -> Result<(Vec<Vec<Window>>, Vec<Window>), HarnessError> {
            let train = noisy_train.iter().map(|s| pre.apply_many(s)).collect::<Result<_, _>>()?;
            Ok((train, pre.apply_many(&noisy)?))
        };
        let (train, stream) = if method.uses_diffusion() {
            if denoised.is_none() {
                denoised = Some(prepare()?);
            }
            denoised.clone().expect("just filled")
        } else {
            prepare()?
        };
        let agent = adapt_agent(cfg, models, agents[&agent_key(seed, method)].clone(), method, &train, seed)?;
        let m = run_cell(cfg, models, agent, method, &stream, seed)?;
        log::info!("{} {} δ={delta} seed={seed}: fa {:.4} ma {:.4}", scenario.label(), method.label(), m.p_fa, m.p_ma);
        rows.push(SweepRow { scenario, method, delta, seed, p_fa: m.p_fa, p_ma: m.p_ma, total: m.p_fa + m.p_ma });
    }
    Ok(rows)
}

/// The full grid. Sweep points run on all available cores; each point's
/// randomness depends only on its own seed, so the rows do not depend on
/// scheduling.
pub fn run_fig4(cfg: &ExperimentConfig, models: &Models, data: &PreparedData) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let mut agents = BTreeMap::new();
    for &seed in &cfg.seeds {
        for &m in &cfg.methods {
            let key = agent_key(seed, m);
            if !agents.contains_key(&key) {
                agents.insert(key, pretrain_agent(cfg, models, data, variant(m), key.2, seed)?);
            }
        }
    }
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        for &scenario in &cfg.scenarios {
            for &delta in &cfg.deltas {
                points.push((seed, scenario, delta));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(points.len());
    let results: Vec<Result<Vec<SweepRow>, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&point) = points.get(i) else { break };
                        out.push(sweep_point(cfg, models, data, &agents, point));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        (a.scenario, a.method.label())
            .cmp(&(b.scenario, b.method.label()))
            .then(a.delta.total_cmp(&b.delta))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(SweepResult { rows })
}

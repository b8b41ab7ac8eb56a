use std::io::Write;

use serde::{Deserialize, Serialize};

use super::fig4::{preprocessor, variant};
use super::models::anomaly_config;
use super::{ExperimentConfig, HarnessError, Method, Models, PreparedData};
use crate::agent::{AgentBundle, AlertMetrics};
use crate::dataset::{synthesize_anomalies, Window};
use crate::feedback::simulate_feedback;
use crate::noise::{inject, NoiseSpec};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub block: usize,
    pub fa_rate: f64,
    pub ma_rate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveResult {
    pub rows: Vec<CurveRow>,
}

impl CurveResult {
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

    pub fn method(&self, method: Method) -> Vec<&CurveRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }
}

/// What a method's stream looks like after preprocessing; methods sharing a
/// kind share one preprocessed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StreamKind {
    Raw,
    Wiener,
    Diffusion,
}

fn kind(method: Method) -> StreamKind {
    match method {
        Method::Unfiltered => StreamKind::Raw,
        Method::Wiener => StreamKind::Wiener,
        _ => StreamKind::Diffusion,
    }
}

/// The learning stream: repeated passes over the training windows, each
/// with fresh anomalies and noise, cut to `blocks × block_size` slots.
fn learning_stream(
    cfg: &ExperimentConfig,
    models: &Models,
    data: &PreparedData,
    method: Method,
) -> Result<Vec<Window>, HarnessError> {
    let f = &cfg.fig5;
    let need = f.blocks * f.block_size;
    let mut out = Vec::with_capacity(need);
    let mut pass = 0u64;
    while out.len() < need {
        let tagged = synthesize_anomalies(&data.train, &anomaly_config(cfg, f.seed, 2_000 + pass))?;
        let spec = NoiseSpec { scenario: f.scenario, delta: f.delta, seed: seed::derive(f.seed, &[seed::purpose::NOISE, pass]) };
        let take = (need - out.len()).min(tagged.len());
        let noisy: Vec<Window> =
            tagged[..take].iter().map(|w| inject(w, &spec, &data.channel_means)).collect::<Result<_, _>>()?;
        out.extend(preprocessor(cfg, models, method, &spec).apply_many(&noisy)?);
        pass += 1;
    }
    Ok(out)
}

/// Online learning from an untrained agent: ground-truth reward each slot,
/// simulated feedback at the configured participation (none for
/// `no_feedback`), error rates per block of slots.
pub fn run_fig5(cfg: &ExperimentConfig, models: &Models, data: &PreparedData) -> Result<CurveResult, HarnessError> {
    cfg.validate()?;
    let f = &cfg.fig5;
    let mut methods = f.methods.clone();
    methods.sort_by_key(|&m| (kind(m), m.label()));
    methods.dedup();
    let mut rows = Vec::new();
    let mut cache: Option<(StreamKind, Vec<Window>)> = None;
    for &method in &methods {
        if cache.as_ref().is_none_or(|(k, _)| *k != kind(method)) {
            cache = Some((kind(method), learning_stream(cfg, models, data, method)?));
        }
        let stream = &cache.as_ref().expect("filled").1;
        let agent = AgentBundle::new(
            cfg.agent.clone(),
            cfg.embed_dim,
            &models.channels,
            seed::derive(f.seed, &[seed::purpose::AGENT_INIT, 5]),
        )?;
        let mut rt = models.runtime(cfg, agent, variant(method), seed::derive(f.seed, &[seed::purpose::AGENT_TRAIN, 5]));
        rt.explore = true;
        let participation = if method == Method::NoFeedback { 0.0 } else { cfg.participation };
        let mut fb_rng = seed::stream(f.seed, &[seed::purpose::FEEDBACK, 5]);
        let mut block = AlertMetrics::default();
        for (slot, w) in stream.iter().enumerate() {
            let d = rt.decide_and_learn(slot as u64, &models.g, w, w.episode)?;
            block.record(d.fired, w.episode);
            if let Some(ev) = simulate_feedback(&d, w.episode, participation, &mut fb_rng)? {
                rt.apply(&ev)?;
            }
            if (slot + 1) % f.block_size == 0 {
                rows.push(CurveRow {
                    method,
                    block: slot / f.block_size,
                    fa_rate: block.p_fa,
                    ma_rate: block.p_ma,
                    total: block.p_fa + block.p_ma,
                });
                block = AlertMetrics::default();
            }
        }
        log::info!("fig5 {} final thresholds {:?}", method.label(), rt.agent.thresholds);
    }
    rows.sort_by(|a, b| a.method.label().cmp(b.method.label()).then(a.block.cmp(&b.block)));
    Ok(CurveResult { rows })
}

//! A compact denoising diffusion model for 1-D sensor windows.
//!
//! Each channel of a window is standardized with training statistics and
//! treated as one sample `x0 ∈ R^L`. The noise predictor is a dense network
//! over `[x_t | sinusoidal step embedding | channel one-hot]`. By default the
//! network regresses the velocity `v = √ᾱ·ε − √(1−ᾱ)·x0` and the noise
//! estimate is recovered as `ε̂ = √(1−ᾱ)·x_t + √ᾱ·v̂`, which keeps the implied
//! `x0` error bounded at high noise levels.
//!
//! Denoising an observation does not start from pure noise: the observation
//! is placed at the step whose forward-process noise level matches the
//! estimated corruption, then integrated back to step zero with the
//! deterministic (DDIM, η = 0) update.

use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DenoiseError;
use crate::dataset::Window;
use crate::nn::{Activation, Adam, Mlp, MlpRecord};
use crate::persist::{self, PersistError};
use crate::seed::{self, Rng};

const MODEL_KIND: &str = "diffusion";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `β_t` linear from `beta_start` (t = 0) to `beta_end` (t = T−1).
    Linear { beta_start: f64, beta_end: f64 },
}

impl BetaSchedule {
    pub fn betas(&self, steps: usize) -> Vec<f64> {
        match *self {
            BetaSchedule::Linear { beta_start, beta_end } => (0..steps)
                .map(|t| {
                    if steps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// Forward-process coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self, DenoiseError> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DenoiseError::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        (self.alpha_bars[t].sqrt(), (1.0 - self.alpha_bars[t]).sqrt())
    }

    /// Noise-to-signal variance ratio `(1 − ᾱ_t)/ᾱ_t` reached at step `t`.
    pub fn noise_ratio(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]) / self.alpha_bars[t]
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn forward_sample(&self, x0: &Array2<f64>, t: usize, rng: &mut Rng) -> Result<Array2<f64>, DenoiseError> {
        if t >= self.steps() {
            return Err(DenoiseError::BadStep { t, steps: self.steps() });
        }
        let (a, b) = (self.alpha_bars[t].sqrt(), (1.0 - self.alpha_bars[t]).sqrt());
        Ok(x0.mapv(|x| a * x + b * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
    }

    /// The step whose noise ratio is closest to `ratio` (earliest on ties).
    pub fn match_step(&self, ratio: f64) -> usize {
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for t in 0..self.steps() {
            let err = (self.noise_ratio(t) - ratio).abs();
            if err < best_err {
                best = t;
                best_err = err;
            }
        }
        best
    }
}

/// What the network output regresses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    Epsilon,
    #[default]
    Velocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Synthetic channel slices drawn from the trained model.
    pub samples: usize,
    /// Extra epochs over the enlarged pool.
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionHyper {
    pub steps: usize,
    pub schedule: BetaSchedule,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    pub time_embed: usize,
    /// Training rows drawn per epoch; `None` uses every (window, channel) pair.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub augment: Option<Augmentation>,
    #[serde(default)]
    pub target: PredictionTarget,
}

impl Default for DiffusionHyper {
    fn default() -> Self {
        DiffusionHyper {
            steps: 100,
            schedule: BetaSchedule::Linear {
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            epochs: 20,
            lr: 1e-3,
            batch: 128,
            hidden: 96,
            time_embed: 16,
            samples_per_epoch: None,
            seed: 0,
            augment: None,
            target: PredictionTarget::Velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_windows(windows: &[Window]) -> Self {
        let stats = crate::dataset::pooled_baselines(windows);
        let pooled = stats.get(0).expect("pooled baselines answer every activity");
        NormStats {
            mean: pooled.iter().map(|s| s.mean).collect(),
            std: pooled.iter().map(|s| s.std).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub hyper: DiffusionHyper,
    pub schedule: NoiseSchedule,
    pub norm: NormStats,
    pub channels: usize,
    pub window_len: usize,
    pub loss_curve: Vec<f64>,
    pub trained: bool,
    net: Mlp,
    temb: Array2<f64>,
}

fn time_embedding(steps: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    Array2::from_shape_fn((steps, dim), |(t, j)| {
        let i = j % half.max(1);
        let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        if j < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

impl DiffusionModel {
    /// A model with freshly initialised weights that refuses to denoise.
    pub fn untrained(hyper: DiffusionHyper, norm: NormStats, window_len: usize) -> Result<Self, DenoiseError> {
        let schedule = NoiseSchedule::new(hyper.schedule.betas(hyper.steps))?;
        let channels = norm.mean.len();
        let mut rng = seed::stream(hyper.seed, &[seed::purpose::DIFFUSION_TRAIN, 0]);
        let input = window_len + hyper.time_embed + channels;
        let net = Mlp::new(
            &[input, hyper.hidden, hyper.hidden, window_len],
            Activation::Silu,
            Activation::Identity,
            Some(1e-2),
            &mut rng,
        );
        let temb = time_embedding(hyper.steps, hyper.time_embed);
        Ok(DiffusionModel {
            hyper,
            schedule,
            norm,
            channels,
            window_len,
            loss_curve: Vec::new(),
            trained: false,
            net,
            temb,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.window_len + self.hyper.time_embed + self.channels
    }

    /// Network input for rows `xs` at steps `ts` on channels `chans`.
    pub fn build_input(&self, xs: &Array2<f64>, ts: &[usize], chans: &[usize]) -> Array2<f64> {
        let l = self.window_len;
        let e = self.hyper.time_embed;
        let mut input = Array2::zeros((xs.nrows(), self.input_dim()));
        for (i, (&t, &c)) in ts.iter().zip(chans).enumerate() {
            input.slice_mut(s![i, ..l]).assign(&xs.row(i));
            input.slice_mut(s![i, l..l + e]).assign(&self.temb.row(t));
            input[[i, l + e + c]] = 1.0;
        }
        input
    }

    pub fn predict_noise(&self, xs: &Array2<f64>, ts: &[usize], chans: &[usize]) -> Array2<f64> {
        let mut out = self.net.forward(&self.build_input(xs, ts, chans));
        if self.hyper.target == PredictionTarget::Velocity {
            for (i, &t) in ts.iter().enumerate() {
                let (sa, sb) = self.schedule.coefficients(t);
                for (o, &x) in out.row_mut(i).iter_mut().zip(xs.row(i)) {
                    *o = sb * x + sa * *o;
                }
            }
        }
        out
    }

    /// Regression target for clean `x0` noised with `eps` at step `t`.
    pub fn target_value(&self, t: usize, x0: f64, eps: f64) -> f64 {
        match self.hyper.target {
            PredictionTarget::Epsilon => eps,
            PredictionTarget::Velocity => {
                let (sa, sb) = self.schedule.coefficients(t);
                sa * eps - sb * x0
            }
        }
    }

    fn standardize_row(&self, c: usize, row: ndarray::ArrayView1<f64>) -> Array1<f64> {
        let (m, s) = (self.norm.mean[c], self.norm.std[c]);
        row.mapv(|x| (x - m) / s)
    }

    /// Deterministic reverse integration. Row `i` starts at step `start[i]`.
    fn reverse(&self, rows: &mut Array2<f64>, chans: &[usize], start: &[usize]) {
        let Some(&max_t) = start.iter().max() else {
            return;
        };
        let ab = &self.schedule.alpha_bars;
        for t in (0..=max_t).rev() {
            let active: Vec<usize> = (0..rows.nrows()).filter(|&i| start[i] >= t).collect();
            let mut xs = Array2::zeros((active.len(), self.window_len));
            for (k, &i) in active.iter().enumerate() {
                xs.row_mut(k).assign(&rows.row(i));
            }
            let ts = vec![t; active.len()];
            let ch: Vec<usize> = active.iter().map(|&i| chans[i]).collect();
            let eps = self.predict_noise(&xs, &ts, &ch);
            let (sa, sb) = (ab[t].sqrt(), (1.0 - ab[t]).sqrt());
            let prev = if t > 0 { Some((ab[t - 1].sqrt(), (1.0 - ab[t - 1]).sqrt())) } else { None };
            for (k, &i) in active.iter().enumerate() {
                let mut row = rows.row_mut(i);
                for j in 0..self.window_len {
                    let e = eps[[k, j]];
                    let x0 = (xs[[k, j]] - sb * e) / sa;
                    row[j] = match prev {
                        Some((pa, pb)) => pa * x0 + pb * e,
                        None => x0,
                    };
                }
            }
        }
    }

    /// Ancestral sampling from pure noise; returns standardized slices.
    pub fn sample(&self, chans: &[usize], rng: &mut Rng) -> Array2<f64> {
        let n = chans.len();
        let mut x = Array2::from_shape_fn((n, self.window_len), |_| StandardNormal.sample(rng));
        let sch = &self.schedule;
        for t in (0..sch.steps()).rev() {
            let eps = self.predict_noise(&x, &vec![t; n], chans);
            let beta = sch.betas[t];
            let ab = sch.alpha_bars[t];
            let coef = beta / (1.0 - ab).sqrt();
            let scale = 1.0 / (1.0 - beta).sqrt();
            let sigma = if t > 0 {
                (beta * (1.0 - sch.alpha_bars[t - 1]) / (1.0 - ab)).sqrt()
            } else {
                0.0
            };
            for (xv, &e) in x.iter_mut().zip(eps.iter()) {
                let z: f64 = if t > 0 { StandardNormal.sample(rng) } else { 0.0 };
                *xv = scale * (*xv - coef * e) + sigma * z;
            }
        }
        x
    }

    fn check_shape(&self, w: &Window) -> Result<(), DenoiseError> {
        if w.channels() != self.channels || w.len() != self.window_len {
            return Err(DenoiseError::ShapeMismatch {
                expected: (self.channels, self.window_len),
                found: (w.channels(), w.len()),
            });
        }
        Ok(())
    }

    /// Reverse start step chosen for channel `c` at relative noise `delta_est`.
    pub fn start_step(&self, c: usize, delta_est: f64) -> Option<usize> {
        let sd = delta_est * self.norm.mean[c].abs() / self.norm.std[c];
        let ratio = sd * sd;
        (ratio > 0.0).then(|| self.schedule.match_step(ratio))
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, MODEL_KIND, &DiffusionRecord::from(self))
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let rec: DiffusionRecord = persist::load(path, MODEL_KIND)?;
        rec.try_into().map_err(PersistError::Format)
    }

    pub fn to_json(&self) -> String {
        persist::to_string(MODEL_KIND, &DiffusionRecord::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self, PersistError> {
        let rec: DiffusionRecord = persist::from_str(MODEL_KIND, text)?;
        rec.try_into().map_err(PersistError::Format)
    }
}

#[derive(Serialize, Deserialize)]
struct DiffusionRecord {
    hyper: DiffusionHyper,
    channels: usize,
    window_len: usize,
    norm: NormStats,
    trained: bool,
    loss_curve: Vec<f64>,
    net: MlpRecord,
}

impl From<&DiffusionModel> for DiffusionRecord {
    fn from(m: &DiffusionModel) -> Self {
        DiffusionRecord {
            hyper: m.hyper.clone(),
            channels: m.channels,
            window_len: m.window_len,
            norm: m.norm.clone(),
            trained: m.trained,
            loss_curve: m.loss_curve.clone(),
            net: MlpRecord::from(&m.net),
        }
    }
}

impl TryFrom<DiffusionRecord> for DiffusionModel {
    type Error = String;

    fn try_from(rec: DiffusionRecord) -> Result<Self, String> {
        if rec.norm.mean.len() != rec.channels || rec.norm.std.len() != rec.channels {
            return Err("norm_stats length does not match channel count".into());
        }
        let net = Mlp::try_from(rec.net)?;
        let mut m = DiffusionModel::untrained(rec.hyper, rec.norm, rec.window_len).map_err(|e| e.to_string())?;
        if net.shapes() != m.net.shapes() {
            return Err("network shape does not match hyperparameters".into());
        }
        m.net = net;
        m.trained = rec.trained;
        m.loss_curve = rec.loss_curve;
        Ok(m)
    }
}

struct Pool {
    rows: Array2<f64>,
    chans: Vec<usize>,
}

fn run_epochs(model: &mut DiffusionModel, pool: &Pool, epochs: usize, opt: &mut Adam, rng: &mut Rng) {
    let l = model.window_len;
    let steps = model.schedule.steps();
    let mut order: Vec<usize> = (0..pool.chans.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let take = model.hyper.samples_per_epoch.unwrap_or(order.len()).min(order.len());
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order[..take].chunks(model.hyper.batch.max(1)) {
            let b = chunk.len();
            let mut xs = Array2::zeros((b, l));
            let mut eps = Array2::zeros((b, l));
            let mut ts = Vec::with_capacity(b);
            let mut ch = Vec::with_capacity(b);
            for (k, &idx) in chunk.iter().enumerate() {
                let t = rng.random_range(0..steps);
                let (sa, sb) = (model.schedule.alpha_bars[t].sqrt(), (1.0 - model.schedule.alpha_bars[t]).sqrt());
                for j in 0..l {
                    let e: f64 = StandardNormal.sample(rng);
                    let x0 = pool.rows[[idx, j]];
                    eps[[k, j]] = model.target_value(t, x0, e);
                    xs[[k, j]] = sa * x0 + sb * e;
                }
                ts.push(t);
                ch.push(pool.chans[idx]);
            }
            let input = model.build_input(&xs, &ts, &ch);
            let trace = model.net.forward_trace(&input);
            let diff = &trace.output - &eps;
            total += diff.mapv(|d| d * d).mean().unwrap_or(0.0);
            batches += 1;
            let grad = diff * (2.0 / (b * l) as f64);
            let (grads, _) = model.net.backward(&trace, &grad);
            opt.step(&mut model.net, &grads);
        }
        model.loss_curve.push(total / batches.max(1) as f64);
    }
}

/// Mean squared noise-prediction error of `model` on a fresh batch drawn from
/// `windows`. Used for the initial point of the loss curve.
pub fn noise_prediction_loss(model: &DiffusionModel, windows: &[Window], rows: usize, rng: &mut Rng) -> f64 {
    let l = model.window_len;
    let mut xs = Array2::zeros((rows, l));
    let mut eps = Array2::zeros((rows, l));
    let mut ts = Vec::with_capacity(rows);
    let mut ch = Vec::with_capacity(rows);
    for k in 0..rows {
        let w = &windows[rng.random_range(0..windows.len())];
        let c = rng.random_range(0..model.channels);
        let t = rng.random_range(0..model.schedule.steps());
        let x0 = model.standardize_row(c, w.data.row(c));
        let (sa, sb) = (model.schedule.alpha_bars[t].sqrt(), (1.0 - model.schedule.alpha_bars[t]).sqrt());
        for j in 0..l {
            let e: f64 = StandardNormal.sample(rng);
            eps[[k, j]] = model.target_value(t, x0[j], e);
            xs[[k, j]] = sa * x0[j] + sb * e;
        }
        ts.push(t);
        ch.push(c);
    }
    let pred = model.net.forward(&model.build_input(&xs, &ts, &ch));
    (pred - eps).mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// Train the noise predictor on clean windows. `loss_curve[0]` is the loss
/// before any update; each later entry is one epoch's mean batch loss.
pub fn train_diffusion(windows: &[Window], hyper: &DiffusionHyper) -> Result<DiffusionModel, DenoiseError> {
    let first = windows.first().ok_or(DenoiseError::NoData)?;
    let (channels, len) = (first.channels(), first.len());
    if windows.iter().any(|w| w.channels() != channels || w.len() != len) {
        return Err(DenoiseError::ShapeMismatch {
            expected: (channels, len),
            found: windows
                .iter()
                .find(|w| w.channels() != channels || w.len() != len)
                .map(|w| (w.channels(), w.len()))
                .unwrap_or((0, 0)),
        });
    }
    let norm = NormStats::from_windows(windows);
    let mut model = DiffusionModel::untrained(hyper.clone(), norm, len)?;

    let mut rows = Array2::zeros((windows.len() * channels, len));
    let mut chans = Vec::with_capacity(windows.len() * channels);
    for (i, w) in windows.iter().enumerate() {
        for c in 0..channels {
            rows.row_mut(i * channels + c).assign(&model.standardize_row(c, w.data.row(c)));
            chans.push(c);
        }
    }
    let mut pool = Pool { rows, chans };

    let mut rng = seed::stream(hyper.seed, &[seed::purpose::DIFFUSION_TRAIN, 1]);
    let initial = noise_prediction_loss(&model, windows, hyper.batch.max(1), &mut rng);
    model.loss_curve.push(initial);
    let mut opt = Adam::new(&model.net, hyper.lr);
    run_epochs(&mut model, &pool, hyper.epochs, &mut opt, &mut rng);

    if let Some(aug) = hyper.augment.as_ref().filter(|a| a.samples > 0) {
        let chs: Vec<usize> = (0..aug.samples).map(|i| i % channels).collect();
        let synthetic = model.sample(&chs, &mut rng);
        let mut rows = Array2::zeros((pool.rows.nrows() + aug.samples, len));
        rows.slice_mut(s![..pool.rows.nrows(), ..]).assign(&pool.rows);
        rows.slice_mut(s![pool.rows.nrows().., ..]).assign(&synthetic);
        pool.chans.extend(chs);
        pool.rows = rows;
        run_epochs(&mut model, &pool, aug.epochs, &mut opt, &mut rng);
    }
    model.trained = true;
    Ok(model)
}

/// Denoise one window. `delta_est` is the estimated noise standard deviation
/// relative to each channel's mean magnitude; 0 returns the input unchanged.
pub fn denoise_diffusion(y: &Window, model: &DiffusionModel, delta_est: f64) -> Result<Window, DenoiseError> {
    Ok(denoise_many(std::slice::from_ref(y), model, delta_est)?.remove(0))
}

/// Batched [`denoise_diffusion`].
pub fn denoise_many(ys: &[Window], model: &DiffusionModel, delta_est: f64) -> Result<Vec<Window>, DenoiseError> {
    if !(delta_est >= 0.0) {
        return Err(DenoiseError::InvalidConfig("delta_est must be >= 0".into()));
    }
    if delta_est == 0.0 {
        return Ok(ys.to_vec());
    }
    if !model.trained {
        return Err(DenoiseError::ModelNotReady);
    }
    for y in ys {
        model.check_shape(y)?;
    }
    let starts: Vec<Option<usize>> = (0..model.channels).map(|c| model.start_step(c, delta_est)).collect();
    let mut index = Vec::new();
    for (wi, _) in ys.iter().enumerate() {
        for (c, s) in starts.iter().enumerate() {
            if let Some(t) = s {
                index.push((wi, c, *t));
            }
        }
    }
    let mut rows = Array2::zeros((index.len(), model.window_len));
    for (k, &(wi, c, t)) in index.iter().enumerate() {
        let z = model.standardize_row(c, ys[wi].data.row(c));
        rows.row_mut(k).assign(&(z * model.schedule.alpha_bars[t].sqrt()));
    }
    let chans: Vec<usize> = index.iter().map(|x| x.1).collect();
    let start: Vec<usize> = index.iter().map(|x| x.2).collect();
    model.reverse(&mut rows, &chans, &start);

    let mut out: Vec<Window> = ys.to_vec();
    for (k, &(wi, c, _)) in index.iter().enumerate() {
        let (m, s) = (model.norm.mean[c], model.norm.std[c]);
        out[wi].data.row_mut(c).assign(&rows.row(k).mapv(|z| z * s + m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth, windowize};

    fn small_windows() -> Vec<Window> {
        let s = synth::generate_subject(&synth::CohortSpec::small(4), 1);
        windowize(&s, 50, 50).unwrap()
    }

    fn quick_hyper() -> DiffusionHyper {
        DiffusionHyper {
            epochs: 3,
            hidden: 32,
            samples_per_epoch: Some(1024),
            ..DiffusionHyper::default()
        }
    }

    #[test]
    fn alpha_bars_are_cumulative_products() {
        let sch = NoiseSchedule::new(DiffusionHyper::default().schedule.betas(100)).unwrap();
        let mut prod = 1.0;
        for t in 0..100 {
            prod *= 1.0 - sch.betas[t];
            assert!((sch.alpha_bars[t] - prod).abs() < 1e-12);
            if t > 0 {
                assert!(sch.alpha_bars[t] < sch.alpha_bars[t - 1]);
            }
        }
    }

    #[test]
    fn invalid_betas_rejected() {
        assert!(NoiseSchedule::new(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::new(vec![]).is_err());
    }

    #[test]
    fn forward_sample_limits_and_errors() {
        let sch = NoiseSchedule::new(vec![1e-12, 0.5]).unwrap();
        let x0 = Array2::from_elem((2, 5), 0.7);
        let xt = sch.forward_sample(&x0, 0, &mut seed::stream(1, &[])).unwrap();
        assert!(xt.iter().all(|&v| (v - 0.7).abs() < 1e-5));
        assert_eq!(
            sch.forward_sample(&x0, 2, &mut seed::stream(1, &[])),
            Err(DenoiseError::BadStep { t: 2, steps: 2 })
        );
        let a = sch.forward_sample(&x0, 1, &mut seed::stream(4, &[])).unwrap();
        let b = sch.forward_sample(&x0, 1, &mut seed::stream(4, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn start_step_is_monotone_in_noise() {
        let ws = small_windows();
        let m = DiffusionModel::untrained(DiffusionHyper::default(), NormStats::from_windows(&ws), 50).unwrap();
        for c in 0..m.channels {
            let mut last = 0;
            for k in 1..60 {
                let t = m.start_step(c, k as f64 * 0.02).unwrap_or(0);
                assert!(t >= last);
                last = t;
            }
        }
    }

    #[test]
    fn untrained_model_refuses_and_zero_delta_is_identity() {
        let ws = small_windows();
        let m = DiffusionModel::untrained(DiffusionHyper::default(), NormStats::from_windows(&ws), 50).unwrap();
        assert_eq!(denoise_diffusion(&ws[0], &m, 0.0).unwrap(), ws[0]);
        assert_eq!(denoise_diffusion(&ws[0], &m, 0.3), Err(DenoiseError::ModelNotReady));
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(train_diffusion(&[], &quick_hyper()), Err(DenoiseError::NoData)));
    }

    #[test]
    fn untrained_loss_is_about_one_and_training_reduces_it() {
        let ws = small_windows();
        let hyper = DiffusionHyper { epochs: 10, hidden: 128, samples_per_epoch: Some(4096), ..quick_hyper() };
        let m = train_diffusion(&ws, &hyper).unwrap();
        assert!((m.loss_curve[0] - 1.0).abs() < 0.15, "initial loss {}", m.loss_curve[0]);
        assert!(m.loss_curve.last().unwrap() < &m.loss_curve[0], "{:?}", m.loss_curve);
    }

    #[test]
    fn denoise_keeps_shape_and_tags_and_round_trips() {
        let ws = small_windows();
        let m = train_diffusion(&ws, &quick_hyper()).unwrap();
        let out = denoise_diffusion(&ws[3], &m, 0.2).unwrap();
        assert_eq!(out.data.dim(), ws[3].data.dim());
        assert_eq!((out.activity, out.episode, out.t_index), (ws[3].activity, ws[3].episode, ws[3].t_index));

        let back = DiffusionModel::from_json(&m.to_json()).unwrap();
        assert_eq!(denoise_diffusion(&ws[3], &back, 0.2).unwrap(), out);

        let bad = ws[0].with_data(Array2::zeros((23, 10)));
        assert!(matches!(denoise_diffusion(&bad, &m, 0.2), Err(DenoiseError::ShapeMismatch { .. })));
    }

    #[test]
    fn augmentation_extends_training() {
        let ws = small_windows();
        let hyper = DiffusionHyper {
            augment: Some(Augmentation { samples: 64, epochs: 1 }),
            ..quick_hyper()
        };
        let m = train_diffusion(&ws, &hyper).unwrap();
        assert_eq!(m.loss_curve.len(), 1 + 3 + 1);
    }
}

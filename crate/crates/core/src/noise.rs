//! Measurement-noise injection for the two evaluation scenarios.
//!
//! * `S1`: i.i.d. `Uniform[−δ·|m̄_c|/2, +δ·|m̄_c|/2]` per channel `c`.
//! * `S2`: i.i.d. real Gaussian with standard deviation `δ·|m̄_c|`.
//!
//! `m̄_c` is the channel mean of the original clean data. Every window draws
//! from its own substream keyed by `(seed, subject, t_index)`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "S1")]
    S1Uniform,
    #[serde(rename = "S2")]
    S2Gaussian,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::S1Uniform => "S1",
            Scenario::S2Gaussian => "S2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub scenario: Scenario,
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(NoiseError::InvalidSpec(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }

    /// Noise standard deviation as a fraction of `|m̄_c|`.
    pub fn relative_sd(&self) -> f64 {
        match self.scenario {
            Scenario::S1Uniform => self.delta / 12f64.sqrt(),
            Scenario::S2Gaussian => self.delta,
        }
    }

    /// One noise value for a channel with mean `mean`.
    pub fn draw(&self, mean: f64, rng: &mut Rng) -> f64 {
        let scale = self.delta * mean.abs();
        if scale == 0.0 {
            return 0.0;
        }
        match self.scenario {
            Scenario::S1Uniform => rng.random_range(-scale / 2.0..=scale / 2.0),
            Scenario::S2Gaussian => scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
        }
    }
}

/// Add scenario noise to every sample of `window`.
pub fn inject(window: &Window, spec: &NoiseSpec, channel_means: &[f64]) -> Result<Window, NoiseError> {
    spec.validate()?;
    if channel_means.len() != window.channels() {
        return Err(NoiseError::InvalidSpec(format!(
            "{} channel means for a {}-channel window",
            channel_means.len(),
            window.channels()
        )));
    }
    if spec.delta == 0.0 {
        return Ok(window.clone());
    }
    let mut rng = seed::stream(
        spec.seed,
        &[seed::purpose::NOISE, window.subject_id as u64, window.t_index as u64],
    );
    let mut data = window.data.clone();
    for (c, mut row) in data.rows_mut().into_iter().enumerate() {
        let m = channel_means[c];
        for x in row.iter_mut() {
            *x += spec.draw(m, &mut rng);
        }
    }
    Ok(window.with_data(data))
}

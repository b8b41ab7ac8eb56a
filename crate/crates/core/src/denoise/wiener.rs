//! Local-statistics (adaptive) Wiener filter.
//!
//! For each sample, with `μ` and `σ²` the mean and variance over a centred
//! window of `local_window` samples (truncated at the edges):
//!
//! ```text
//! x̂ = μ + max(σ² − ν², 0) / max(σ², ν²) · (y − μ)
//! ```
//!
//! `ν²` is either given or estimated as the average local variance of the
//! channel.

use serde::{Deserialize, Serialize};

use super::DenoiseError;
use crate::dataset::Window;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVar {
    Known(f64),
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WienerConfig {
    pub local_window: usize,
    pub noise_var: NoiseVar,
}

impl Default for WienerConfig {
    fn default() -> Self {
        WienerConfig {
            local_window: 5,
            noise_var: NoiseVar::Estimated,
        }
    }
}

impl WienerConfig {
    pub fn validate(&self) -> Result<(), DenoiseError> {
        if self.local_window < 3 || self.local_window % 2 == 0 {
            return Err(DenoiseError::InvalidConfig(format!(
                "local_window must be odd and >= 3, got {}",
                self.local_window
            )));
        }
        if let NoiseVar::Known(v) = self.noise_var {
            if !(v >= 0.0) {
                return Err(DenoiseError::InvalidConfig("noise_var must be >= 0".into()));
            }
        }
        Ok(())
    }
}

fn local_moments(x: &[f64], half: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let seg = &x[lo..hi];
        let m = seg.iter().sum::<f64>() / seg.len() as f64;
        let v = seg.iter().map(|s| (s - m).powi(2)).sum::<f64>() / seg.len() as f64;
        mean.push(m);
        var.push(v);
    }
    (mean, var)
}

/// Per-sample gains and local means for one channel.
pub fn wiener_gains(x: &[f64], cfg: &WienerConfig) -> (Vec<f64>, Vec<f64>) {
    let (mean, var) = local_moments(x, cfg.local_window / 2);
    let nu2 = match cfg.noise_var {
        NoiseVar::Known(v) => v,
        NoiseVar::Estimated => var.iter().sum::<f64>() / var.len().max(1) as f64,
    };
    let gains = var
        .iter()
        .map(|&s2| {
            let denom = s2.max(nu2);
            if denom > 0.0 {
                (s2 - nu2).max(0.0) / denom
            } else {
                0.0
            }
        })
        .collect();
    (gains, mean)
}

pub fn wiener_channel(x: &[f64], cfg: &WienerConfig) -> Vec<f64> {
    let (gains, mean) = wiener_gains(x, cfg);
    x.iter()
        .zip(gains.iter().zip(&mean))
        .map(|(&y, (&g, &m))| m + g * (y - m))
        .collect()
}

/// Filter every channel of `y` independently.
pub fn wiener_filter(y: &Window, cfg: &WienerConfig) -> Result<Window, DenoiseError> {
    cfg.validate()?;
    let mut data = y.data.clone();
    for mut row in data.rows_mut() {
        let filtered = wiener_channel(&row.to_vec(), cfg);
        row.iter_mut().zip(filtered).for_each(|(d, f)| *d = f);
    }
    Ok(y.with_data(data))
}

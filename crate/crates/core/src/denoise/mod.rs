//! Observation clean-up: the diffusion denoiser and the Wiener baseline.

pub mod diffusion;
pub mod wiener;

pub use diffusion::{
    denoise_diffusion, denoise_many, train_diffusion, BetaSchedule, DiffusionHyper, DiffusionModel, NoiseSchedule,
    NormStats,
};
pub use wiener::{wiener_filter, NoiseVar, WienerConfig};

use crate::dataset::Window;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenoiseError {
    #[error("step {t} outside 0..{steps}")]
    BadStep { t: usize, steps: usize },
    #[error("no training data")]
    NoData,
    #[error("model has not been trained")]
    ModelNotReady,
    #[error("window shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Mean squared error between two windows after dividing each channel by
/// `scale[c]`, averaged over channels and samples.
pub fn standardized_mse(a: &Window, b: &Window, scale: &[f64]) -> f64 {
    let mut total = 0.0;
    for (c, (ra, rb)) in a.data.rows().into_iter().zip(b.data.rows()).enumerate() {
        total += ra
            .iter()
            .zip(rb.iter())
            .map(|(x, y)| ((x - y) / scale[c]).powi(2))
            .sum::<f64>();
    }
    total / a.data.len() as f64
}

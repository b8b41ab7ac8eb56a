use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, Models, PreparedData};
use crate::dataset::Window;
use crate::denoise::{denoise_many, standardized_mse, wiener_filter};
use crate::noise::{inject, NoiseSpec, Scenario};
use crate::seed;

/// Held-out reconstruction error for one noise setting, in units of each
/// channel's training standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub scenario: Scenario,
    pub delta: f64,
    pub seed: u64,
    pub mse_noisy: f64,
    pub mse_wiener: f64,
    pub mse_diffusion: f64,
}

fn mean_mse(xs: &[Window], clean: &[Window], scale: &[f64]) -> f64 {
    xs.iter().zip(clean).map(|(a, b)| standardized_mse(a, b, scale)).sum::<f64>() / xs.len() as f64
}

/// Noise the clean evaluation windows and measure both denoisers against
/// the originals.
pub fn denoise_errors(
    cfg: &ExperimentConfig,
    models: &Models,
    data: &PreparedData,
    scenario: Scenario,
    delta: f64,
    seed: u64,
) -> Result<DenoiseRow, HarnessError> {
    let clean = match cfg.slot_budget {
        Some(n) => &data.eval[..n.min(data.eval.len())],
        None => &data.eval[..],
    };
    let spec = NoiseSpec { scenario, delta, seed: seed::derive(seed, &[seed::purpose::NOISE, 4_000]) };
    let noisy: Vec<Window> = clean.iter().map(|w| inject(w, &spec, &data.channel_means)).collect::<Result<_, _>>()?;
    let wiener: Vec<Window> = noisy.iter().map(|w| wiener_filter(w, &cfg.wiener)).collect::<Result<_, _>>()?;
    let diffusion = denoise_many(&noisy, &models.diffusion, spec.relative_sd())?;
    let scale = &models.diffusion.norm.std;
    Ok(DenoiseRow {
        scenario,
        delta,
        seed,
        mse_noisy: mean_mse(&noisy, clean, scale),
        mse_wiener: mean_mse(&wiener, clean, scale),
        mse_diffusion: mean_mse(&diffusion, clean, scale),
    })
}

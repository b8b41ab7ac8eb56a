//! Uses the acceptance suite's trained denoiser (cached under the target
//! directory, trained on first use).

use std::path::PathBuf;

use has_core::denoise::{denoise_many, standardized_mse};
use has_core::harness::{load_or_train_diffusion, prepare_data, ExperimentConfig};
use has_core::noise::{inject, NoiseSpec, Scenario};

#[test]
fn diffusion_reduces_error_at_moderate_noise() {
    let mut cfg = ExperimentConfig::from_json(include_str!("acceptance.json")).unwrap();
    cfg.model_dir = Some(PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models"));
    let data = prepare_data(&cfg).unwrap();
    let model = load_or_train_diffusion(&cfg, &data).unwrap();
    let clean = &data.eval[..300];
    let spec = NoiseSpec { scenario: Scenario::S1Uniform, delta: 0.6, seed: 11 };
    let noisy: Vec<_> = clean.iter().map(|w| inject(w, &spec, &data.channel_means).unwrap()).collect();
    let den = denoise_many(&noisy, &model, spec.relative_sd()).unwrap();
    let mse = |xs: &[has_core::dataset::Window]| {
        xs.iter().zip(clean).map(|(a, b)| standardized_mse(a, b, &model.norm.std)).sum::<f64>() / xs.len() as f64
    };
    let (before, after) = (mse(&noisy), mse(&den));
    println!("S1 δ=0.6: noisy {before:.4}, denoised {after:.4}");
    assert!(after < before);
}

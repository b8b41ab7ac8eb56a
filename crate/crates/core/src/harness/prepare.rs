use super::{DataSource, ExperimentConfig, HarnessError};
use crate::dataset::{self, synth, RecordingSession, Window};

/// Clean windows split by subject.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Window>,
    pub eval: Vec<Window>,
    /// Per-channel means of the clean training data; noise scales with these.
    pub channel_means: Vec<f64>,
}

fn sessions(cfg: &ExperimentConfig) -> Result<Vec<RecordingSession>, HarnessError> {
    let wanted = |id: u32| cfg.train_subjects.contains(&id) || cfg.eval_subjects.contains(&id);
    match &cfg.data {
        DataSource::Synthetic { cohort } => {
            Ok((1..=cohort.subjects).filter(|&id| wanted(id)).map(|id| synth::generate_subject(cohort, id)).collect())
        }
        DataSource::Files { paths } => {
            let mut out = Vec::new();
            for p in paths {
                let s = dataset::load_subject(p)?;
                if wanted(s.subject_id) {
                    out.push(s);
                }
            }
            Ok(out)
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for s in sessions(cfg)? {
        let ws = dataset::windowize(&s, cfg.window_len, cfg.stride)?;
        if cfg.train_subjects.contains(&s.subject_id) {
            train.extend(ws);
        } else {
            eval.extend(ws);
        }
    }
    if train.is_empty() || eval.is_empty() {
        return Err(HarnessError::InvalidConfig(format!(
            "no windows for the configured subjects ({} train, {} eval)",
            train.len(),
            eval.len()
        )));
    }
    let channel_means = dataset::channel_means(&train);
    log::info!("prepared {} train and {} eval windows", train.len(), eval.len());
    Ok(PreparedData { train, eval, channel_means })
}

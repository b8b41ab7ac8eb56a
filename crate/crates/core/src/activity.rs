//! Nearest-centroid activity recognition on per-channel window statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Window, NUM_ACTIVITIES, STD_FLOOR};
use crate::persist::{self, PersistError};

pub const PERSIST_KIND: &str = "recognizer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub a: Vec<f64>,
}

impl ActivityProfile {
    pub fn one_hot(code: u8) -> Self {
        let mut a = vec![0.0; NUM_ACTIVITIES];
        a[code as usize] = 1.0;
        ActivityProfile { a }
    }

    pub fn uniform() -> Self {
        ActivityProfile { a: vec![1.0 / NUM_ACTIVITIES as f64; NUM_ACTIVITIES] }
    }

    /// Most likely activity; the lowest code wins ties.
    pub fn code(&self) -> u8 {
        let mut best = 0;
        for (i, &v) in self.a.iter().enumerate() {
            if v > self.a[best] {
                best = i;
            }
        }
        best as u8
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActivityError {
    #[error("recognizer has not been trained")]
    ModelNotReady,
    #[error("empty window")]
    EmptyWindow,
    #[error("feature dimension {found}, recognizer expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

/// Per-channel mean, std and mean absolute first difference, grouped by statistic.
pub fn extract_features(window: &Window) -> Vec<f64> {
    let c = window.channels();
    let mut f = vec![0.0; 3 * c];
    for (i, row) in window.data.rows().into_iter().enumerate() {
        let n = row.len().max(1) as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let diffs = row.len().saturating_sub(1);
        let mad = if diffs == 0 {
            0.0
        } else {
            row.windows(2).into_iter().map(|w| (w[1] - w[0]).abs()).sum::<f64>() / diffs as f64
        };
        f[i] = mean;
        f[c + i] = var.sqrt();
        f[2 * c + i] = mad;
    }
    f
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recognizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub centroids: BTreeMap<u8, Vec<f64>>,
}

impl Recognizer {
    pub fn is_trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn standardize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Nearest centroid for an already extracted feature vector.
    pub fn classify(&self, features: &[f64]) -> Result<u8, ActivityError> {
        if !self.is_trained() {
            return Err(ActivityError::ModelNotReady);
        }
        if features.len() != self.feature_mean.len() {
            return Err(ActivityError::ShapeMismatch { expected: self.feature_mean.len(), found: features.len() });
        }
        let z = self.standardize(features);
        let mut best: Option<(u8, f64)> = None;
        for (&code, centroid) in &self.centroids {
            let d: f64 = z.iter().zip(centroid).map(|(a, b)| (a - b).powi(2)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((code, d));
            }
        }
        Ok(best.expect("trained recognizer has centroids").0)
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        persist::save(path, PERSIST_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        persist::load(path, PERSIST_KIND)
    }
}

pub fn train_recognizer(windows: &[Window]) -> Recognizer {
    if windows.is_empty() {
        return Recognizer::default();
    }
    let feats: Vec<Vec<f64>> = windows.iter().map(extract_features).collect();
    let dim = feats[0].len();
    let n = feats.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in &feats {
        mean.iter_mut().zip(f).for_each(|(m, x)| *m += x / n);
    }
    let mut std = vec![0.0; dim];
    for f in &feats {
        std.iter_mut().zip(f.iter().zip(&mean)).for_each(|(s, (x, m))| *s += (x - m).powi(2) / n);
    }
    std.iter_mut().for_each(|s| *s = s.sqrt().max(STD_FLOOR));

    let mut rec = Recognizer { feature_mean: mean, feature_std: std, centroids: BTreeMap::new() };
    let mut sums: BTreeMap<u8, (Vec<f64>, usize)> = BTreeMap::new();
    for (w, f) in windows.iter().zip(&feats) {
        let z = rec.standardize(f);
        let entry = sums.entry(w.activity).or_insert_with(|| (vec![0.0; dim], 0));
        entry.0.iter_mut().zip(&z).for_each(|(s, v)| *s += v);
        entry.1 += 1;
    }
    for code in 0..NUM_ACTIVITIES as u8 {
        if !sums.contains_key(&code) {
            log::warn!("no training windows for activity {code}; it will never be recognized");
        }
    }
    rec.centroids = sums
        .into_iter()
        .map(|(code, (s, k))| (code, s.into_iter().map(|v| v / k as f64).collect()))
        .collect();
    rec
}

pub fn recognize(window: &Window, recognizer: &Recognizer) -> Result<ActivityProfile, ActivityError> {
    if window.is_empty() {
        return Err(ActivityError::EmptyWindow);
    }
    recognizer.classify(&extract_features(window)).map(ActivityProfile::one_hot)
}

/// Fraction of windows whose recognized activity equals the label.
pub fn accuracy(windows: &[Window], recognizer: &Recognizer) -> Result<f64, ActivityError> {
    let mut hits = 0usize;
    for w in windows {
        if recognize(w, recognizer)?.code() == w.activity {
            hits += 1;
        }
    }
    Ok(hits as f64 / windows.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Episode, FEATURE_CHANNELS};
    use ndarray::Array2;

    fn window(activity: u8, f: impl Fn(usize, usize) -> f64) -> Window {
        Window {
            data: Array2::from_shape_fn((FEATURE_CHANNELS, 20), |(c, n)| f(c, n)),
            activity,
            episode: Episode::Normal,
            t_index: 0,
            subject_id: 1,
        }
    }

    fn class_window(activity: u8, phase: f64) -> Window {
        let k = activity as f64;
        window(activity, |c, n| k * (c as f64 + 1.0) + (k + 1.0) * ((n as f64 + phase) * 0.7).sin())
    }

    #[test]
    fn feature_examples() {
        let w = window(1, |c, _| c as f64);
        let f = extract_features(&w);
        assert_eq!(f.len(), 69);
        assert!(f[23..].iter().all(|&v| v == 0.0));
        let base = class_window(3, 0.0);
        let doubled = base.with_data(&base.data * 2.0);
        let (a, b) = (extract_features(&base), extract_features(&doubled));
        for i in 0..46 {
            assert!((b[i] - 2.0 * a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_window_centroids_and_recognition() {
        let train: Vec<Window> = (1..=4).map(|k| class_window(k, 0.0)).collect();
        let rec = train_recognizer(&train);
        for w in &train {
            let z = rec.standardize(&extract_features(w));
            assert_eq!(rec.centroids[&w.activity], z);
            let p = recognize(w, &rec).unwrap();
            assert_eq!(p.code(), w.activity);
            assert!((p.a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut dup = train.clone();
        dup.extend(train.iter().cloned());
        let rec2 = train_recognizer(&dup);
        for (k, c) in &rec.centroids {
            for (a, b) in c.iter().zip(&rec2.centroids[k]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tie_goes_to_lowest_code() {
        let rec = Recognizer {
            feature_mean: vec![0.0],
            feature_std: vec![1.0],
            centroids: BTreeMap::from([(3, vec![1.0]), (5, vec![-1.0])]),
        };
        assert_eq!(rec.classify(&[0.0]).unwrap(), 3);
    }

    #[test]
    fn untrained_is_not_ready() {
        assert_eq!(recognize(&class_window(1, 0.0), &Recognizer::default()), Err(ActivityError::ModelNotReady));
    }

    #[test]
    fn affine_rescaling_keeps_argmin() {
        let train: Vec<Window> = (1..=5).flat_map(|k| (0..3).map(move |p| class_window(k, p as f64))).collect();
        let queries: Vec<Window> = (1..=5).map(|k| class_window(k, 0.5)).collect();
        let scaled = |w: &Window| w.with_data(w.data.mapv(|x| 3.0 * x + 7.0));
        let rec = train_recognizer(&train);
        let rec_s = train_recognizer(&train.iter().map(scaled).collect::<Vec<_>>());
        for q in &queries {
            assert_eq!(recognize(q, &rec).unwrap(), recognize(&scaled(q), &rec_s).unwrap());
        }
    }

    #[test]
    fn persistence_round_trip() {
        let rec = train_recognizer(&(1..=3).map(|k| class_window(k, 0.0)).collect::<Vec<_>>());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.json");
        rec.save(&path).unwrap();
        assert_eq!(Recognizer::load(&path).unwrap(), rec);
    }
}

//! MHEALTH recordings: parsing, windowing, activity baselines and labelled
//! anomaly episodes.
//!
//! A `.log` file holds one sample per row: 23 whitespace-separated feature
//! columns followed by an integer activity label, sampled at 50 Hz.
//!
//! | columns | sensor |
//! |---------|--------|
//! | 0–2     | chest acceleration (x, y, z) |
//! | 3–4     | ECG lead 1, lead 2 |
//! | 5–7     | left-ankle acceleration |
//! | 8–10    | left-ankle gyroscope |
//! | 11–13   | left-ankle magnetometer |
//! | 14–16   | right-lower-arm acceleration |
//! | 17–19   | right-lower-arm gyroscope |
//! | 20–22   | right-lower-arm magnetometer |
//!
//! Label 0 is the null class; 1–12 are the activities listed in
//! [`ACTIVITY_NAMES`].

pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;

pub const FEATURE_CHANNELS: usize = 23;
pub const SAMPLE_RATE_HZ: f64 = 50.0;
pub const NUM_ACTIVITIES: usize = 13;
pub const STD_FLOOR: f64 = 1e-6;

pub const CHEST_ACC: [usize; 3] = [0, 1, 2];
pub const ECG: [usize; 2] = [3, 4];
pub const ANKLE_ACC: [usize; 3] = [5, 6, 7];
pub const ANKLE_GYRO: [usize; 3] = [8, 9, 10];
pub const ANKLE_MAG: [usize; 3] = [11, 12, 13];
pub const ARM_ACC: [usize; 3] = [14, 15, 16];
pub const ARM_GYRO: [usize; 3] = [17, 18, 19];
pub const ARM_MAG: [usize; 3] = [20, 21, 22];

pub const ACTIVITY_NAMES: [&str; NUM_ACTIVITIES] = [
    "null",
    "standing",
    "sitting",
    "lying",
    "walking",
    "climbing stairs",
    "waist bends forward",
    "frontal elevation of arms",
    "knees bending",
    "cycling",
    "jogging",
    "running",
    "jumping",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("recording is empty")]
    EmptyRecording,
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {col}: not a number")]
    ParseError { line: usize, col: usize },
    #[error("line {line}: activity label {label} outside 0..=12")]
    InvalidLabel { line: usize, label: f64 },
    #[error("window length {window} exceeds recording length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window length and stride must be at least 1")]
    BadWindowParams,
    #[error("no baseline for activity {0}")]
    MissingBaseline(u8),
    #[error("invalid anomaly configuration: {0}")]
    InvalidAnomalyConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSession {
    pub subject_id: u32,
    pub sample_rate_hz: f64,
    /// `T × C` samples.
    pub channels: Array2<f64>,
    /// One activity code per row.
    pub labels: Vec<u8>,
}

impl RecordingSession {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Render in the `.log` layout: tab-separated, six decimals, label last.
    pub fn to_log_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * FEATURE_CHANNELS * 10);
        for (row, label) in self.channels.rows().into_iter().zip(&self.labels) {
            for v in row {
                out.push_str(&format!("{v:.6}\t"));
            }
            out.push_str(&label.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Amplitude gain plus baseline shift on the vital-sign channels.
    GainShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Episode {
    Normal,
    Anomalous(AnomalyKind),
}

impl Episode {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Episode::Anomalous(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `C × L`: one row per channel.
    pub data: Array2<f64>,
    pub activity: u8,
    pub episode: Episode,
    pub t_index: usize,
    pub subject_id: u32,
}

impl Window {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn with_data(&self, data: Array2<f64>) -> Window {
        Window {
            data,
            activity: self.activity,
            episode: self.episode,
            t_index: self.t_index,
            subject_id: self.subject_id,
        }
    }
}

fn subject_from_path(path: &Path) -> u32 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<String>())
        .and_then(|d| d.chars().rev().collect::<String>().parse().ok())
        .unwrap_or(0)
}

/// Load one subject's `.log` file. The subject id is taken from trailing
/// digits in the file name (`mHealth_subject7.log` → 7), else 0.
pub fn load_subject(path: &Path) -> Result<RecordingSession, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_session(&text, subject_from_path(path))
}

pub fn parse_session(text: &str, subject_id: u32) -> Result<RecordingSession, DatasetError> {
    let expected = FEATURE_CHANNELS + 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != expected {
            return Err(DatasetError::MalformedRow {
                line: lineno,
                expected,
                found: fields.len(),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| DatasetError::ParseError {
                line: lineno,
                col: col + 1,
            })?;
            if !v.is_finite() {
                return Err(DatasetError::ParseError {
                    line: lineno,
                    col: col + 1,
                });
            }
            if col < FEATURE_CHANNELS {
                values.push(v);
            } else {
                if v.fract() != 0.0 || !(0.0..=12.0).contains(&v) {
                    return Err(DatasetError::InvalidLabel { line: lineno, label: v });
                }
                labels.push(v as u8);
            }
        }
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyRecording);
    }
    let channels = Array2::from_shape_vec((labels.len(), FEATURE_CHANNELS), values)
        .expect("row count and field count checked above");
    Ok(RecordingSession {
        subject_id,
        sample_rate_hz: SAMPLE_RATE_HZ,
        channels,
        labels,
    })
}

/// Number of windows before majority-label discards.
pub fn window_count(len: usize, window_len: usize, stride: usize) -> usize {
    if window_len == 0 || stride == 0 || window_len > len {
        0
    } else {
        (len - window_len) / stride + 1
    }
}

fn strict_majority(labels: &[u8]) -> Option<u8> {
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let (label, &n) = counts.iter().enumerate().max_by_key(|(_, &n)| n)?;
    (2 * n > labels.len()).then_some(label as u8)
}

/// Cut a session into fixed windows at offsets `0, stride, 2·stride, …`.
/// Windows without a strict-majority label are dropped; `t_index` is the
/// window's ordinal before dropping.
pub fn windowize(
    session: &RecordingSession,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window>, DatasetError> {
    if window_len == 0 || stride == 0 {
        return Err(DatasetError::BadWindowParams);
    }
    if window_len > session.len() {
        return Err(DatasetError::WindowTooLong {
            window: window_len,
            len: session.len(),
        });
    }
    let n = window_count(session.len(), window_len, stride);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let start = k * stride;
        let Some(activity) = strict_majority(&session.labels[start..start + window_len]) else {
            continue;
        };
        let data = session
            .channels
            .slice(s![start..start + window_len, ..])
            .t()
            .as_standard_layout()
            .into_owned();
        out.push(Window {
            data,
            activity,
            episode: Episode::Normal,
            t_index: k,
            subject_id: session.subject_id,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-(activity, channel) mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityBaselines {
    per_activity: BTreeMap<u8, Vec<ChannelStats>>,
    /// When set, every activity resolves to these statistics.
    pooled: Option<Vec<ChannelStats>>,
}

fn stats_over<'a>(windows: impl Iterator<Item = &'a Window> + Clone) -> Vec<ChannelStats> {
    let channels = windows.clone().next().map(|w| w.channels()).unwrap_or(0);
    let mut sum = vec![0.0; channels];
    let mut count = 0usize;
    for w in windows.clone() {
        for (c, row) in w.data.rows().into_iter().enumerate() {
            sum[c] += row.sum();
        }
        count += w.len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; channels];
    for w in windows {
        for (c, row) in w.data.rows().into_iter().enumerate() {
            sq[c] += row.iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
        }
    }
    mean.iter()
        .zip(&sq)
        .map(|(&m, &q)| ChannelStats {
            mean: m,
            std: (q / count as f64).sqrt().max(STD_FLOOR),
        })
        .collect()
}

impl ActivityBaselines {
    pub fn get(&self, activity: u8) -> Result<&[ChannelStats], DatasetError> {
        if let Some(p) = &self.pooled {
            return Ok(p);
        }
        self.per_activity
            .get(&activity)
            .map(Vec::as_slice)
            .ok_or(DatasetError::MissingBaseline(activity))
    }

    pub fn activities(&self) -> impl Iterator<Item = u8> + '_ {
        self.per_activity.keys().copied()
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled.is_some()
    }
}

/// Activity-conditioned baselines over clean windows.
pub fn compute_baselines(windows: &[Window]) -> ActivityBaselines {
    let mut groups: BTreeMap<u8, Vec<&Window>> = BTreeMap::new();
    for w in windows {
        groups.entry(w.activity).or_default().push(w);
    }
    ActivityBaselines {
        per_activity: groups
            .into_iter()
            .map(|(a, ws)| (a, stats_over(ws.into_iter())))
            .collect(),
        pooled: None,
    }
}

/// One set of statistics for all activities (the activity-blind ablation).
pub fn pooled_baselines(windows: &[Window]) -> ActivityBaselines {
    let mut b = compute_baselines(windows);
    b.pooled = Some(stats_over(windows.iter()));
    b
}

/// Per-channel mean over all samples of all windows.
pub fn channel_means(windows: &[Window]) -> Vec<f64> {
    stats_over(windows.iter()).into_iter().map(|s| s.mean).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub target_channels: Vec<usize>,
    pub episode_len: usize,
    pub anomaly_fraction: f64,
    pub amplitude_gain: f64,
    /// In units of the (activity, channel) baseline standard deviation.
    pub baseline_shift: f64,
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            target_channels: ECG.to_vec(),
            episode_len: 4,
            anomaly_fraction: 0.3,
            amplitude_gain: 1.5,
            baseline_shift: 2.5,
            seed: 0,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self, channels: usize) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidAnomalyConfig(m.to_string()));
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            return bad("anomaly_fraction must lie in (0, 1)");
        }
        // A gain of exactly 1 is accepted so that pure shifts (or the
        // identity, for testing) can be expressed.
        if !(self.amplitude_gain >= 1.0) {
            return bad("amplitude_gain must be at least 1");
        }
        if self.episode_len == 0 {
            return bad("episode_len must be at least 1");
        }
        if !self.baseline_shift.is_finite() {
            return bad("baseline_shift must be finite");
        }
        if let Some(&c) = self.target_channels.iter().find(|&&c| c >= channels) {
            return Err(DatasetError::InvalidAnomalyConfig(format!("target channel {c} out of range")));
        }
        Ok(())
    }
}

/// Tag contiguous runs of `episode_len` windows as anomalous with
/// probability `anomaly_fraction` and transform their target channels as
/// `x ← gain·x + shift·σ`, σ being the (activity, channel) standard
/// deviation over the input. Normal windows are returned untouched.
pub fn synthesize_anomalies(windows: &[Window], cfg: &AnomalyConfig) -> Result<Vec<Window>, DatasetError> {
    let channels = windows.first().map(Window::channels).unwrap_or(FEATURE_CHANNELS);
    cfg.validate(channels)?;
    let baselines = compute_baselines(windows);
    let mut rng = seed::stream(cfg.seed, &[seed::purpose::ANOMALY]);
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(cfg.episode_len) {
        let anomalous = rng.random::<f64>() < cfg.anomaly_fraction;
        for w in chunk {
            if !anomalous {
                out.push(w.clone());
                continue;
            }
            let stats = baselines.get(w.activity)?;
            let mut data = w.data.clone();
            for &c in &cfg.target_channels {
                let offset = cfg.baseline_shift * stats[c].std;
                data.row_mut(c)
                    .mapv_inplace(|x| cfg.amplitude_gain * x + offset);
            }
            out.push(Window {
                episode: Episode::Anomalous(AnomalyKind::GainShift),
                ..w.with_data(data)
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn row(label: u8, v: f64) -> String {
        let mut s: Vec<String> = (0..FEATURE_CHANNELS).map(|c| format!("{}", v + c as f64)).collect();
        s.push(label.to_string());
        s.join("\t")
    }

    fn session(labels: &[u8]) -> RecordingSession {
        let t = labels.len();
        RecordingSession {
            subject_id: 1,
            sample_rate_hz: SAMPLE_RATE_HZ,
            channels: Array2::from_shape_fn((t, FEATURE_CHANNELS), |(i, c)| i as f64 + 0.01 * c as f64),
            labels: labels.to_vec(),
        }
    }

    fn window(activity: u8, fill: f64, len: usize) -> Window {
        Window {
            data: Array2::from_elem((FEATURE_CHANNELS, len), fill),
            activity,
            episode: Episode::Normal,
            t_index: 0,
            subject_id: 1,
        }
    }

    #[test]
    fn parses_rows_in_order() {
        let text = [row(1, 0.5), row(1, 1.5), row(2, -3.0)].join("\n") + "\n";
        let s = parse_session(&text, 4).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.channels.ncols(), 23);
        assert_eq!(s.labels, vec![1, 1, 2]);
        assert_eq!(s.channels[[2, 0]], -3.0);
        assert_eq!(s.channels[[0, 22]], 22.5);
    }

    #[test]
    fn rejects_22_feature_rows() {
        let mut fields: Vec<String> = (0..22).map(|c| c.to_string()).collect();
        fields.push("1".into());
        let text = format!("{}\n{}\n", row(1, 0.0), fields.join(" "));
        assert_eq!(
            parse_session(&text, 1),
            Err(DatasetError::MalformedRow { line: 2, expected: 24, found: 23 })
        );
    }

    #[test]
    fn empty_and_non_numeric() {
        assert_eq!(parse_session("\n", 1), Err(DatasetError::EmptyRecording));
        let bad = row(1, 0.0).replacen("3", "x3", 1);
        assert!(matches!(parse_session(&bad, 1), Err(DatasetError::ParseError { line: 1, .. })));
        let bad_label = row(13, 0.0);
        assert!(matches!(parse_session(&bad_label, 1), Err(DatasetError::InvalidLabel { .. })));
    }

    #[test]
    fn load_subject_reads_id_from_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mHealth_subject7.log");
        std::fs::write(&p, row(3, 1.0) + "\n").unwrap();
        let s = load_subject(&p).unwrap();
        assert_eq!(s.subject_id, 7);
        assert!(matches!(load_subject(&dir.path().join("nope.log")), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn window_counts() {
        let s = session(&[1; 250]);
        assert_eq!(windowize(&s, 100, 50).unwrap().len(), 4);
        let s = session(&[1; 100]);
        assert_eq!(windowize(&s, 100, 7).unwrap().len(), 1);
        assert_eq!(
            windowize(&s, 101, 1),
            Err(DatasetError::WindowTooLong { window: 101, len: 100 })
        );
        assert_eq!(windowize(&s, 0, 1), Err(DatasetError::BadWindowParams));
    }

    #[test]
    fn window_is_channel_major() {
        let s = session(&[1; 10]);
        let w = &windowize(&s, 4, 4).unwrap()[1];
        assert_eq!(w.data.dim(), (23, 4));
        assert_eq!(w.data[[2, 1]], s.channels[[5, 2]]);
        assert_eq!(w.t_index, 1);
        // Row reductions depend on memory order; a window rebuilt from its rows must match.
        assert!(w.data.is_standard_layout());
    }

    #[test]
    fn mixed_window_discarded() {
        let mut labels = vec![1u8; 50];
        labels.extend([2u8; 50]);
        labels.extend([2u8; 100]);
        let ws = windowize(&session(&labels), 100, 100).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].activity, 2);
        assert_eq!(ws[0].t_index, 1);
    }

    #[test]
    fn baseline_examples() {
        let b = compute_baselines(&[window(3, 5.0, 10)]);
        let s = b.get(3).unwrap()[0];
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, STD_FLOOR);

        let b = compute_baselines(&[window(1, 0.0, 1), window(1, 2.0, 1)]);
        let s = b.get(1).unwrap()[4];
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(b.get(9), Err(DatasetError::MissingBaseline(9)));
    }

    #[test]
    fn pooled_baselines_answer_any_activity() {
        let b = pooled_baselines(&[window(1, 0.0, 1), window(2, 2.0, 1)]);
        assert_eq!(b.get(7).unwrap()[0], ChannelStats { mean: 1.0, std: 1.0 });
    }

    fn cohort() -> Vec<Window> {
        let s = synth::generate_subject(&synth::CohortSpec::small(3), 1);
        windowize(&s, 50, 50).unwrap()
    }

    #[test]
    fn anomaly_identity_transform_changes_tags_only() {
        let ws = cohort();
        let cfg = AnomalyConfig {
            amplitude_gain: 1.0,
            baseline_shift: 0.0,
            anomaly_fraction: 0.5,
            ..AnomalyConfig::default()
        };
        let out = synthesize_anomalies(&ws, &cfg).unwrap();
        assert!(out.iter().any(|w| w.episode.is_anomalous()));
        for (a, b) in ws.iter().zip(&out) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn anomaly_fraction_near_zero_yields_no_episodes() {
        let cfg = AnomalyConfig {
            anomaly_fraction: 1e-12,
            ..AnomalyConfig::default()
        };
        let out = synthesize_anomalies(&cohort(), &cfg).unwrap();
        assert!(out.iter().all(|w| !w.episode.is_anomalous()));
    }

    #[test]
    fn anomalies_are_deterministic_and_leave_normals_alone() {
        let ws = cohort();
        let cfg = AnomalyConfig {
            seed: 9,
            ..AnomalyConfig::default()
        };
        let a = synthesize_anomalies(&ws, &cfg).unwrap();
        let b = synthesize_anomalies(&ws, &cfg).unwrap();
        assert_eq!(a, b);
        let mut saw_anomaly = false;
        for (orig, out) in ws.iter().zip(&a) {
            match out.episode {
                Episode::Normal => assert_eq!(orig, out),
                Episode::Anomalous(_) => {
                    saw_anomaly = true;
                    assert_ne!(orig.data.row(3), out.data.row(3));
                    assert_eq!(orig.data.row(0), out.data.row(0));
                }
            }
        }
        assert!(saw_anomaly);
        // Runs come in whole episodes.
        for chunk in a.chunks(cfg.episode_len) {
            assert!(chunk.iter().all(|w| w.episode == chunk[0].episode));
        }
    }

    #[test]
    fn anomaly_config_validation() {
        let ws = cohort();
        for cfg in [
            AnomalyConfig { anomaly_fraction: 0.0, ..AnomalyConfig::default() },
            AnomalyConfig { anomaly_fraction: 1.0, ..AnomalyConfig::default() },
            AnomalyConfig { amplitude_gain: 0.5, ..AnomalyConfig::default() },
            AnomalyConfig { target_channels: vec![40], ..AnomalyConfig::default() },
        ] {
            assert!(matches!(
                synthesize_anomalies(&ws, &cfg),
                Err(DatasetError::InvalidAnomalyConfig(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 1usize..400, wl in 1usize..120, stride in 1usize..60) {
            prop_assume!(wl <= len);
            let labels = vec![1u8; len];
            let ws = windowize(&session(&labels), wl, stride).unwrap();
            prop_assert_eq!(ws.len(), (len - wl) / stride + 1);
        }

        #[test]
        fn baselines_are_permutation_invariant(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let ws = cohort();
            let mut shuffled = ws.clone();
            shuffled.shuffle(&mut seed::stream(seed, &[]));
            let a = compute_baselines(&ws);
            let b = compute_baselines(&shuffled);
            for act in a.activities() {
                for (x, y) in a.get(act).unwrap().iter().zip(b.get(act).unwrap()) {
                    prop_assert!((x.mean - y.mean).abs() <= 1e-12 * x.mean.abs().max(1.0));
                    prop_assert!((x.std - y.std).abs() <= 1e-12 * x.std.max(1.0));
                }
            }
        }

        #[test]
        fn log_round_trip_within_printed_precision(vals in proptest::collection::vec(-1000.0f64..1000.0, FEATURE_CHANNELS * 3)) {
            let s = RecordingSession {
                subject_id: 0,
                sample_rate_hz: SAMPLE_RATE_HZ,
                channels: Array2::from_shape_vec((3, FEATURE_CHANNELS), vals).unwrap(),
                labels: vec![0, 5, 12],
            };
            let back = parse_session(&s.to_log_string(), 0).unwrap();
            prop_assert_eq!(&back.labels, &s.labels);
            for (a, b) in back.channels.iter().zip(s.channels.iter()) {
                prop_assert!((a - b).abs() <= 5e-7);
            }
        }
    }
}

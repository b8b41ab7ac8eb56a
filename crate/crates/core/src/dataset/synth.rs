//! Synthetic recordings in the MHEALTH layout.
//!
//! Each subject performs the twelve activities in order, separated by short
//! null-class transitions. Motion sensors follow a posture-dependent gravity
//! vector plus periodic limb motion; the two ECG leads carry a beat train
//! whose rate depends on the activity. Subjects differ in sensor tilt,
//! movement amplitude and cadence, resting heart rate and ECG gain/offset.
//!
//! The generator is fully determined by [`CohortSpec::seed`] and the subject id.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{RecordingSession, FEATURE_CHANNELS, SAMPLE_RATE_HZ};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub subjects: u32,
    pub seconds_per_activity: f64,
    pub null_seconds: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            subjects: 10,
            seconds_per_activity: 40.0,
            null_seconds: 3.0,
            seed: 2024,
        }
    }
}

impl CohortSpec {
    /// A short cohort for tests: `seconds` per activity.
    pub fn small(seconds: u32) -> Self {
        CohortSpec {
            seconds_per_activity: seconds as f64,
            null_seconds: 1.0,
            ..CohortSpec::default()
        }
    }
}

#[derive(Clone, Copy)]
enum Posture {
    Upright,
    Seated,
    Lying,
}

struct ActivityModel {
    heart_rate: f64,
    cadence_hz: f64,
    chest: f64,
    ankle: f64,
    arm: f64,
    posture: Posture,
}

const fn model(heart_rate: f64, cadence_hz: f64, chest: f64, ankle: f64, arm: f64, posture: Posture) -> ActivityModel {
    ActivityModel {
        heart_rate,
        cadence_hz,
        chest,
        ankle,
        arm,
        posture,
    }
}

// Index = activity code; 0 is the null transition class.
const MODELS: [ActivityModel; 13] = [
    model(85.0, 0.7, 0.8, 1.5, 1.5, Posture::Upright),
    model(76.0, 0.2, 0.05, 0.05, 0.08, Posture::Upright),
    model(70.0, 0.2, 0.04, 0.04, 0.06, Posture::Seated),
    model(62.0, 0.15, 0.03, 0.03, 0.05, Posture::Lying),
    model(98.0, 1.8, 1.6, 6.0, 3.0, Posture::Upright),
    model(112.0, 1.5, 2.2, 7.0, 2.5, Posture::Upright),
    model(88.0, 0.3, 0.6, 0.3, 0.8, Posture::Upright),
    model(84.0, 0.5, 0.4, 0.2, 1.0, Posture::Upright),
    model(96.0, 0.5, 2.5, 1.2, 0.8, Posture::Upright),
    model(118.0, 1.2, 0.6, 5.0, 1.0, Posture::Seated),
    model(140.0, 2.4, 5.0, 12.0, 6.0, Posture::Upright),
    model(158.0, 2.9, 8.0, 17.0, 9.0, Posture::Upright),
    model(150.0, 1.0, 10.0, 14.0, 6.0, Posture::Upright),
];

const G: f64 = 9.81;

struct Subject {
    tilt: [f64; 3],
    amp_scale: f64,
    cadence_scale: f64,
    hr_offset: f64,
    ecg_gain: f64,
    ecg_offset: [f64; 2],
    heading: f64,
}

impl Subject {
    fn draw(rng: &mut Rng) -> Self {
        Subject {
            tilt: [
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
            ],
            amp_scale: rng.random_range(0.8..1.2),
            cadence_scale: rng.random_range(0.9..1.1),
            hr_offset: rng.random_range(-8.0..8.0),
            ecg_gain: rng.random_range(0.8..1.25),
            ecg_offset: [rng.random_range(0.0..0.1), rng.random_range(0.05..0.15)],
            heading: rng.random_range(0.0..2.0 * PI),
        }
    }
}

fn gravity(posture: Posture, tilt: f64) -> [f64; 3] {
    let (x, y, z) = match posture {
        Posture::Upright => (1.0, 0.0, 0.0),
        Posture::Seated => (0.95, 0.0, 0.3),
        Posture::Lying => (0.08, 0.1, 0.99),
    };
    // Small subject-specific rotation about y.
    let (s, c) = tilt.sin_cos();
    [G * (c * x - s * z), G * y, G * (s * x + c * z)]
}

fn posture_dc(posture: Posture) -> f64 {
    match posture {
        Posture::Upright => 0.0,
        Posture::Seated => 0.05,
        Posture::Lying => -0.2,
    }
}

/// Gaussian bump used for P, QRS and T waves.
fn bump(dt: f64, amp: f64, width: f64) -> f64 {
    amp * (-0.5 * (dt / width).powi(2)).exp()
}

fn ecg_wave(phase_t: f64) -> f64 {
    bump(phase_t + 0.16, 0.12, 0.025) + bump(phase_t + 0.03, -0.12, 0.01) + bump(phase_t, 1.0, 0.014)
        + bump(phase_t - 0.03, -0.2, 0.01)
        + bump(phase_t - 0.25, 0.28, 0.045)
}

/// Generate one subject's recording.
pub fn generate_subject(spec: &CohortSpec, subject_id: u32) -> RecordingSession {
    let mut rng = seed::stream(spec.seed, &[seed::purpose::SYNTH, subject_id as u64]);
    let subj = Subject::draw(&mut rng);
    let fs = SAMPLE_RATE_HZ;
    let per_act = (spec.seconds_per_activity * fs).round() as usize;
    let per_null = (spec.null_seconds * fs).round() as usize;

    let mut segments: Vec<(u8, usize)> = Vec::new();
    for code in 1..=12u8 {
        if per_null > 0 {
            segments.push((0, per_null));
        }
        segments.push((code, per_act));
    }
    let total: usize = segments.iter().map(|s| s.1).sum();
    let mut data = Array2::<f64>::zeros((total, FEATURE_CHANNELS));
    let mut labels = Vec::with_capacity(total);

    let sensor = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let mut row = 0usize;
    let mut t_global = 0.0;
    let mut next_beat = 0.3;
    let mut last_beat = -1.0;
    for &(code, len) in &segments {
        let m = &MODELS[code as usize];
        let hr = m.heart_rate + subj.hr_offset;
        let f = m.cadence_hz * subj.cadence_scale;
        let w = 2.0 * PI * f;
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let amp = subj.amp_scale;
        let mut envelope: f64 = 1.0;
        for n in 0..len {
            let t = n as f64 / fs;
            envelope = (envelope + 0.02 * sensor.sample(&mut rng)).clamp(0.7, 1.3);
            let ph = w * t + phi;
            let mut out = [0.0f64; FEATURE_CHANNELS];

            // Posture, with slow activity-specific rotations.
            let mut chest_tilt = subj.tilt[0];
            let mut arm_tilt = subj.tilt[2];
            let mut ankle_tilt = subj.tilt[1];
            match code {
                6 => chest_tilt += 0.7 * (1.0 - ph.cos()),
                7 => arm_tilt += 0.75 * (1.0 - ph.cos()),
                8 => ankle_tilt += 0.25 * (1.0 - ph.cos()),
                9 => ankle_tilt += 0.4 * ph.sin(),
                _ => {}
            }
            let gc = gravity(m.posture, chest_tilt);
            let ga = gravity(m.posture, ankle_tilt);
            let gr = gravity(m.posture, arm_tilt);

            // Periodic limb motion; jumping is impulsive.
            let wave = if code == 12 {
                (ph.sin().max(0.0)).powi(3) * 2.0 - 0.6
            } else {
                ph.sin()
            };
            let harm = (2.0 * ph + 0.7).sin();
            let mc = m.chest * amp * envelope;
            let ma = m.ankle * amp * envelope;
            let mr = m.arm * amp * envelope;
            let motion = |g: [f64; 3], a: f64| [g[0] + a * wave, g[1] + 0.4 * a * harm, g[2] + 0.3 * a * ph.cos()];
            let chest = motion(gc, mc);
            let ankle = motion(ga, ma);
            let arm = motion(gr, mr);
            out[0..3].copy_from_slice(&chest);
            out[5..8].copy_from_slice(&ankle);
            out[14..17].copy_from_slice(&arm);
            for c in [0, 1, 2, 5, 6, 7, 14, 15, 16] {
                out[c] += 0.04 * sensor.sample(&mut rng);
            }

            // Gyroscopes: angular rate tracks limb motion.
            let gyro = |a: f64| [0.08 * a * ph.cos(), 0.05 * a * (2.0 * ph).cos(), 0.03 * a * ph.sin()];
            out[8..11].copy_from_slice(&gyro(ma));
            out[17..20].copy_from_slice(&gyro(mr));
            for c in [8, 9, 10, 17, 18, 19] {
                out[c] += 0.02 * sensor.sample(&mut rng);
            }

            // Magnetometers: earth field seen through the limb orientation.
            let mag = |tilt: f64, a: f64| {
                let h = subj.heading + 0.03 * a * ph.sin();
                [0.6 * h.cos() + 0.3 * tilt.sin(), 0.6 * h.sin(), -0.4 + 0.3 * tilt.cos()]
            };
            out[11..14].copy_from_slice(&mag(ankle_tilt, ma));
            out[20..23].copy_from_slice(&mag(arm_tilt, mr));
            for c in [11, 12, 13, 20, 21, 22] {
                out[c] += 0.01 * sensor.sample(&mut rng);
            }

            // ECG beat train with a little heart-rate variability.
            let tg = t_global + t;
            while tg >= next_beat {
                last_beat = next_beat;
                let rr = 60.0 / hr * (1.0 + 0.03 * sensor.sample(&mut rng));
                next_beat += rr.max(0.25);
            }
            let beat = ecg_wave(tg - last_beat) + ecg_wave(tg - next_beat);
            let wander = 0.04 * (2.0 * PI * 0.25 * tg).sin();
            let artifact = 0.01 * mc * wave;
            // Electrode contact and lead axis shift with posture and exertion.
            let dc = posture_dc(m.posture) + 0.004 * (hr - 85.0);
            out[3] = subj.ecg_gain * beat + subj.ecg_offset[0] + dc + wander + artifact + 0.02 * sensor.sample(&mut rng);
            out[4] = 0.75 * subj.ecg_gain * beat + subj.ecg_offset[1] + 0.8 * dc - 0.5 * wander
                + artifact
                + 0.02 * sensor.sample(&mut rng);

            for (c, v) in out.iter().enumerate() {
                data[[row, c]] = *v;
            }
            labels.push(code);
            row += 1;
        }
        t_global += len as f64 / fs;
    }

    RecordingSession {
        subject_id,
        sample_rate_hz: fs,
        channels: data,
        labels,
    }
}

/// Write `mHealth_subject{n}.log` for every subject and return the paths.
pub fn write_cohort(dir: &Path, spec: &CohortSpec) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (1..=spec.subjects)
        .map(|id| {
            let path = dir.join(format!("mHealth_subject{id}.log"));
            std::fs::write(&path, generate_subject(spec, id).to_log_string())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_subject, parse_session};

    #[test]
    fn deterministic_and_subject_specific() {
        let spec = CohortSpec::small(2);
        let a = generate_subject(&spec, 1);
        assert_eq!(a, generate_subject(&spec, 1));
        assert_ne!(a.channels, generate_subject(&spec, 2).channels);
        assert_eq!(a.channels.ncols(), FEATURE_CHANNELS);
        assert!(a.labels.iter().all(|&l| l <= 12));
        assert!((1..=12).all(|c| a.labels.contains(&c)));
    }

    #[test]
    fn written_cohort_parses() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec {
            subjects: 2,
            ..CohortSpec::small(1)
        };
        let paths = write_cohort(dir.path(), &spec).unwrap();
        assert_eq!(paths.len(), 2);
        let s = load_subject(&paths[1]).unwrap();
        assert_eq!(s.subject_id, 2);
        let direct = generate_subject(&spec, 2);
        assert_eq!(s.labels, direct.labels);
        let reparsed = parse_session(&direct.to_log_string(), 2).unwrap();
        assert_eq!(reparsed.channels, s.channels);
    }
}

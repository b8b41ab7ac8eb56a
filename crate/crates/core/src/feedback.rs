//! User verdicts on alerts and how they change the agent.
//!
//! A verdict relabels the reward of the logged transition, pushes it into
//! replay, nudges the threshold of the decision's activity and runs a few
//! training batches. [`simulate_feedback`] stands in for a user during
//! experiments; [`run_repl`] takes typed feedback in a terminal.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentBundle, AgentError, AlertDecision, DecisionLog, Transition};
use crate::dataset::{Episode, ACTIVITY_NAMES};
use crate::seed::Rng;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConfirmAlert,
    DenyAlert,
    ConfirmNoAlert,
    ReportMissed,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::ConfirmAlert => "confirm_alert",
            Verdict::DenyAlert => "deny_alert",
            Verdict::ConfirmNoAlert => "confirm_no_alert",
            Verdict::ReportMissed => "report_missed",
        }
    }

    /// Reward implied for the decision the verdict refers to.
    pub fn reward(self) -> f64 {
        match self {
            Verdict::DenyAlert | Verdict::ReportMissed => -1.0,
            Verdict::ConfirmAlert | Verdict::ConfirmNoAlert => 0.0,
        }
    }
}

/// A verdict not yet bound to a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFeedback {
    pub verdict: Verdict,
    pub claimed_activity: Option<u8>,
    pub raw_text: String,
}

impl ParsedFeedback {
    pub fn at_slot(self, alert_slot: u64) -> FeedbackEvent {
        FeedbackEvent {
            alert_slot,
            verdict: self.verdict,
            claimed_activity: self.claimed_activity,
            raw_text: self.raw_text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub alert_slot: u64,
    pub verdict: Verdict,
    pub claimed_activity: Option<u8>,
    pub raw_text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("could not interpret feedback {0:?}")]
    UnparseableFeedback(String),
    #[error("no logged decision for slot {0}")]
    UnknownSlot(u64),
    #[error("participation {0} outside [0, 1]")]
    InvalidParticipation(f64),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("feedback i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("feedback log: {0}")]
    Csv(#[from] csv::Error),
}

const NEGATIONS: &[&str] = &["not", "no", "nothing", "never", "dont", "don", "isn", "wasn", "aren", "nope"];

const ACTIVITY_WORDS: &[(&str, u8)] = &[
    ("standing", 1),
    ("stand", 1),
    ("sitting", 2),
    ("seated", 2),
    ("sit", 2),
    ("lying", 3),
    ("lie", 3),
    ("resting", 3),
    ("walking", 4),
    ("walk", 4),
    ("climbing", 5),
    ("stairs", 5),
    ("bending", 6),
    ("waist", 6),
    ("arms", 7),
    ("knees", 8),
    ("squatting", 8),
    ("cycling", 9),
    ("biking", 9),
    ("jogging", 10),
    ("jog", 10),
    ("running", 11),
    ("run", 11),
    ("jumping", 12),
    ("jump", 12),
];

fn has(tokens: &[String], word: &str) -> bool {
    tokens.iter().any(|t| t == word)
}

fn has_phrase(tokens: &[String], a: &str, b: &str) -> bool {
    tokens.windows(2).any(|w| w[0] == a && w[1] == b)
}

/// Keyword rules over lowercase tokens.
///
/// Checked in order: missed-alert reports, confirmation of a quiet slot,
/// denials (a reading called normal or false, or a negated confirmation),
/// then confirmations.
pub fn parse_feedback(text: &str) -> Result<ParsedFeedback, FeedbackError> {
    let normalized = text.replace(['\u{2019}', '\u{2018}'], "'").replace('\'', "");
    let tokens = tokenize(&normalized);
    let negated = tokens.iter().any(|t| NEGATIONS.contains(&t.as_str()));
    let confirm_word = ["correct", "right", "yes", "true", "accurate"].iter().any(|w| has(&tokens, w));

    let verdict = if has(&tokens, "missed") || has_phrase(&tokens, "should", "have") {
        Some(Verdict::ReportMissed)
    } else if has_phrase(&tokens, "no", "alert") && confirm_word && !has(&tokens, "false") {
        Some(Verdict::ConfirmNoAlert)
    } else if has(&tokens, "normal") || has(&tokens, "false") || (negated && confirm_word) {
        Some(Verdict::DenyAlert)
    } else if confirm_word || has_phrase(&tokens, "thanks", "yes") {
        Some(Verdict::ConfirmAlert)
    } else {
        None
    };
    let verdict = verdict.ok_or_else(|| FeedbackError::UnparseableFeedback(text.to_string()))?;
    let claimed_activity = tokens
        .iter()
        .find_map(|t| ACTIVITY_WORDS.iter().find(|(w, _)| w == t).map(|&(_, code)| code));
    Ok(ParsedFeedback { verdict, claimed_activity, raw_text: text.to_string() })
}

/// With probability `participation`, the verdict a truthful user would give.
/// A correctly quiet slot produces no feedback. One uniform draw per call.
pub fn simulate_feedback(
    decision: &AlertDecision,
    truth: Episode,
    participation: f64,
    rng: &mut Rng,
) -> Result<Option<FeedbackEvent>, FeedbackError> {
    if !(0.0..=1.0).contains(&participation) {
        return Err(FeedbackError::InvalidParticipation(participation));
    }
    let speaks = rng.random::<f64>() < participation;
    let verdict = match (decision.fired, truth.is_anomalous()) {
        (true, false) => Verdict::DenyAlert,
        (false, true) => Verdict::ReportMissed,
        (true, true) => Verdict::ConfirmAlert,
        (false, false) => return Ok(None),
    };
    if !speaks {
        return Ok(None);
    }
    let raw_text = match verdict {
        Verdict::DenyAlert => "false alarm, my readings are normal for this activity",
        Verdict::ReportMissed => "you missed an episode just now",
        _ => "correct, thanks",
    };
    Ok(Some(FeedbackEvent {
        alert_slot: decision.slot,
        verdict,
        claimed_activity: None,
        raw_text: raw_text.to_string(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    pub eta: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub batches: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { eta: 0.05, theta_min: 0.5, theta_max: 10.0, batches: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackOutcome {
    pub activity: u8,
    pub theta_before: f64,
    pub theta_after: f64,
    pub reward: f64,
    pub batches_run: usize,
}

pub fn apply_feedback(
    agent: &mut AgentBundle,
    event: &FeedbackEvent,
    log: &DecisionLog,
    cfg: &FeedbackConfig,
    rng: &mut Rng,
) -> Result<FeedbackOutcome, FeedbackError> {
    let record = log.get(event.alert_slot).ok_or(FeedbackError::UnknownSlot(event.alert_slot))?;
    let s = record.state.to_vec();
    let reward = event.verdict.reward();
    agent.replay.push(Transition { s: s.clone(), w: record.decision.weights.clone(), r: reward, s_next: s });

    let activity = record.decision.activity;
    let theta_before = agent.threshold(activity);
    let factor = match event.verdict {
        Verdict::DenyAlert => 1.0 + cfg.eta,
        Verdict::ReportMissed => 1.0 - cfg.eta,
        Verdict::ConfirmAlert | Verdict::ConfirmNoAlert => 1.0,
    };
    let theta_after = (theta_before * factor).clamp(cfg.theta_min, cfg.theta_max);
    agent.set_threshold(activity, theta_after);

    let mut batches_run = 0;
    if agent.replay.len() >= agent.hyper.batch {
        for _ in 0..cfg.batches {
            agent.train_batch(rng)?;
            batches_run += 1;
        }
    }
    Ok(FeedbackOutcome { activity, theta_before, theta_after, reward, batches_run })
}

#[derive(Serialize)]
struct LogRow<'a> {
    slot: u64,
    verdict: &'a str,
    activity: String,
    raw_text: &'a str,
}

pub fn write_feedback_csv<W: Write>(events: &[FeedbackEvent], out: W) -> Result<(), FeedbackError> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(LogRow {
            slot: e.alert_slot,
            verdict: e.verdict.label(),
            activity: e.claimed_activity.map(|a| a.to_string()).unwrap_or_default(),
            raw_text: &e.raw_text,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn describe(d: &AlertDecision) -> String {
    let name = ACTIVITY_NAMES.get(d.activity as usize).copied().unwrap_or("unknown");
    if d.fired {
        format!("slot {}: ALERT while {} (score {:.2} > threshold {:.2})", d.slot, name, d.score, d.threshold)
    } else {
        format!("slot {}: no alert while {} (score {:.2} <= threshold {:.2})", d.slot, name, d.score, d.threshold)
    }
}

/// Prompt for each decision and collect verdicts. `/skip` moves on,
/// `/quit` stops; text that does not parse is asked again.
pub fn run_repl<R: BufRead, W: Write>(
    decisions: &[AlertDecision],
    input: &mut R,
    output: &mut W,
) -> Result<Vec<FeedbackEvent>, FeedbackError> {
    let mut events = Vec::new();
    'outer: for d in decisions {
        loop {
            writeln!(output, "{}", describe(d))?;
            write!(output, "feedback> ")?;
            output.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                break 'outer;
            }
            match line.trim() {
                "/quit" => break 'outer,
                "/skip" | "" => break,
                text => match parse_feedback(text) {
                    Ok(p) => {
                        writeln!(output, "recorded {}", p.verdict.label())?;
                        events.push(p.at_slot(d.slot));
                        break;
                    }
                    Err(e) => writeln!(output, "{e}; try again, /skip or /quit")?,
                },
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::ActivityProfile;
    use crate::agent::{AgentHyper, AgentState, DecisionRecord};
    use crate::dataset::AnomalyKind;
    use crate::seed;

    const FIG3: &str = "I\u{2019}m running, and my heart rate and breath rate are normal for this activity";

    #[test]
    fn parse_examples() {
        let p = parse_feedback(FIG3).unwrap();
        assert_eq!((p.verdict, p.claimed_activity), (Verdict::DenyAlert, Some(11)));
        let p = parse_feedback("I am running, and my heart rate and breath rate are normal for this activity").unwrap();
        assert_eq!(p.verdict, Verdict::DenyAlert);
        assert_eq!(parse_feedback("you missed my episode earlier").unwrap().verdict, Verdict::ReportMissed);
        assert_eq!(parse_feedback("you should have warned me").unwrap().verdict, Verdict::ReportMissed);
        assert_eq!(parse_feedback("correct").unwrap().verdict, Verdict::ConfirmAlert);
        assert_eq!(parse_feedback("Thanks, yes").unwrap().verdict, Verdict::ConfirmAlert);
        assert_eq!(parse_feedback("that is not correct").unwrap().verdict, Verdict::DenyAlert);
        assert_eq!(parse_feedback("no alert was right").unwrap().verdict, Verdict::ConfirmNoAlert);
        assert!(matches!(parse_feedback("zzzz"), Err(FeedbackError::UnparseableFeedback(_))));
    }

    fn decision(slot: u64, fired: bool, activity: u8) -> AlertDecision {
        AlertDecision { slot, activity, score: 2.05, threshold: 2.0, fired, weights: vec![0.5] }
    }

    #[test]
    fn simulator() {
        let mut rng = seed::stream(3, &[]);
        let anomalous = Episode::Anomalous(AnomalyKind::GainShift);
        for _ in 0..50 {
            assert!(simulate_feedback(&decision(0, true, 1), Episode::Normal, 0.0, &mut rng).unwrap().is_none());
        }
        let fa = simulate_feedback(&decision(0, true, 1), Episode::Normal, 1.0, &mut rng).unwrap().unwrap();
        assert_eq!(fa.verdict, Verdict::DenyAlert);
        let ma = simulate_feedback(&decision(1, false, 1), anomalous, 1.0, &mut rng).unwrap().unwrap();
        assert_eq!(ma.verdict, Verdict::ReportMissed);
        assert!(simulate_feedback(&decision(2, false, 1), Episode::Normal, 1.0, &mut rng).unwrap().is_none());
        assert!(simulate_feedback(&decision(2, false, 1), Episode::Normal, 1.5, &mut rng).is_err());
        let draw = |seed| {
            let mut r = seed::stream(seed, &[]);
            (0..40).map(|_| simulate_feedback(&decision(0, true, 1), Episode::Normal, 0.5, &mut r).unwrap().is_some()).collect::<Vec<_>>()
        };
        assert_eq!(draw(8), draw(8));
    }

    fn setup() -> (AgentBundle, DecisionLog) {
        let agent = AgentBundle::new(AgentHyper { hidden: vec![4], batch: 4, buffer_cap: 64, ..AgentHyper::default() }, 0, &[3], 1).unwrap();
        let mut log = DecisionLog::new();
        for (slot, act) in [(0u64, 11u8), (1, 2)] {
            log.push(DecisionRecord {
                decision: decision(slot, true, act),
                truth: Some(Episode::Normal),
                state: AgentState { g: vec![], d: vec![2.05, 1.0], a: ActivityProfile::one_hot(act).a, activity: act },
            });
        }
        (agent, log)
    }

    #[test]
    fn threshold_nudges() {
        let (mut agent, log) = setup();
        let mut rng = seed::stream(0, &[]);
        let cfg = FeedbackConfig::default();
        let deny = parse_feedback(FIG3).unwrap().at_slot(0);
        let out = apply_feedback(&mut agent, &deny, &log, &cfg, &mut rng).unwrap();
        assert!((out.theta_after - 2.1).abs() < 1e-12);
        assert_eq!(agent.threshold(2), 2.0);
        let d = &log.get(0).unwrap().decision;
        assert!(!(d.score > agent.threshold(d.activity)));

        let missed = FeedbackEvent { alert_slot: 1, verdict: Verdict::ReportMissed, claimed_activity: None, raw_text: String::new() };
        let out = apply_feedback(&mut agent, &missed, &log, &cfg, &mut rng).unwrap();
        assert!((out.theta_after - 1.9).abs() < 1e-12);

        let confirm = FeedbackEvent { verdict: Verdict::ConfirmAlert, ..missed.clone() };
        let before = agent.threshold(2);
        let out = apply_feedback(&mut agent, &confirm, &log, &cfg, &mut rng).unwrap();
        assert_eq!((out.theta_after, out.reward), (before, 0.0));

        let unknown = FeedbackEvent { alert_slot: 99, ..missed };
        assert!(matches!(apply_feedback(&mut agent, &unknown, &log, &cfg, &mut rng), Err(FeedbackError::UnknownSlot(99))));
        assert_eq!(agent.replay.len(), 3);
    }

    #[test]
    fn training_runs_once_replay_is_full() {
        let (mut agent, log) = setup();
        let mut rng = seed::stream(0, &[]);
        let deny = parse_feedback(FIG3).unwrap().at_slot(0);
        let cfg = FeedbackConfig::default();
        let runs: Vec<usize> = (0..5).map(|_| apply_feedback(&mut agent, &deny, &log, &cfg, &mut rng).unwrap().batches_run).collect();
        assert_eq!(runs, vec![0, 0, 0, 16, 16]);
    }

    #[test]
    fn repl_session() {
        let decisions = vec![decision(0, true, 11), decision(1, true, 2), decision(2, false, 2), decision(3, true, 2)];
        let mut input = format!("zzzz\n{FIG3}\n/skip\nyou missed it\n/quit\ncorrect\n");
        let mut out = Vec::new();
        let events = run_repl(&decisions, &mut input.as_bytes(), &mut out).unwrap();
        input.clear();
        assert_eq!(events.len(), 2);
        assert_eq!((events[0].alert_slot, events[0].verdict), (0, Verdict::DenyAlert));
        assert_eq!((events[1].alert_slot, events[1].verdict), (2, Verdict::ReportMissed));
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("could not interpret"));

        let mut csv = Vec::new();
        write_feedback_csv(&events, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("slot,verdict,activity,raw_text\n0,deny_alert,11,"));
    }
}

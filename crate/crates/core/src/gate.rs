//! Expert selection from a free-text user description.
//!
//! Each expert owns a disjoint keyword set. [`rule_gate`] counts keyword hits
//! and picks the unique best expert, otherwise the registry default.
//! [`llm_gate`] asks a text service instead and falls back to the rule gate
//! for any answer that is not exactly one registered id.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ANKLE_ACC, CHEST_ACC, ECG, FEATURE_CHANNELS};
use crate::text::{tokenize, TextAdapter};

pub type ExpertId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertEntry {
    pub profile_tags: BTreeSet<String>,
    pub monitored_channels: Vec<usize>,
    pub agent_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRegistry {
    pub entries: BTreeMap<ExpertId, ExpertEntry>,
    pub default_id: ExpertId,
}

#[derive(Debug, thiserror::Error)]
pub enum GateError {
    #[error("expert {0:?} already registered")]
    DuplicateExpert(ExpertId),
    #[error("tag {tag:?} already owned by expert {owner:?}")]
    TagCollision { tag: String, owner: ExpertId },
    #[error("default expert {0:?} is not registered")]
    UnknownDefault(ExpertId),
    #[error("expert {id:?}: {reason}")]
    InvalidChannels { id: ExpertId, reason: String },
    #[error("registry io: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry json: {0}")]
    Json(#[from] serde_json::Error),
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

fn check_channels(id: &str, channels: &[usize]) -> Result<(), GateError> {
    let bad = |reason: String| GateError::InvalidChannels { id: id.to_string(), reason };
    if channels.is_empty() {
        return Err(bad("no monitored channels".into()));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= FEATURE_CHANNELS) {
        return Err(bad(format!("channel {c} out of range")));
    }
    let unique: BTreeSet<_> = channels.iter().collect();
    if unique.len() != channels.len() {
        return Err(bad("duplicate channel".into()));
    }
    Ok(())
}

impl ExpertRegistry {
    /// An empty registry whose default must be registered before use.
    pub fn empty(default_id: &str) -> Self {
        ExpertRegistry { entries: BTreeMap::new(), default_id: default_id.to_string() }
    }

    /// `sedentary`, `active` and `default`.
    pub fn standard() -> Self {
        let mut reg = Self::empty("default");
        let sedentary = [
            "programmer", "developer", "engineer", "office", "desk", "sedentary", "sitting",
            "mental", "working", "work", "hours", "computer", "clerk", "student", "writer",
        ];
        let active = [
            "athlete", "runner", "running", "jogging", "cyclist", "cycling", "sport", "sports",
            "gym", "exercise", "active", "training", "marathon", "fitness", "construction",
        ];
        let default = ["retired", "general", "unknown"];
        let chest_ecg: Vec<usize> = ECG.iter().chain(&CHEST_ACC).copied().collect();
        let ankle_ecg: Vec<usize> = ECG.iter().chain(&ANKLE_ACC).copied().collect();
        let all: Vec<usize> = ECG.iter().chain(&CHEST_ACC).chain(&ANKLE_ACC).copied().collect();
        reg.register_expert("sedentary", &sedentary, &chest_ecg, "agents/sedentary.json")
            .and_then(|_| reg.register_expert("active", &active, &ankle_ecg, "agents/active.json"))
            .and_then(|_| reg.register_expert("default", &default, &all, "agents/default.json"))
            .expect("standard registry is consistent");
        reg
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if !self.entries.contains_key(&self.default_id) {
            return Err(GateError::UnknownDefault(self.default_id.clone()));
        }
        let mut owners: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, entry) in &self.entries {
            check_channels(id, &entry.monitored_channels)?;
            for tag in &entry.profile_tags {
                if let Some(owner) = owners.insert(tag, id) {
                    return Err(GateError::TagCollision { tag: tag.clone(), owner: owner.to_string() });
                }
            }
        }
        Ok(())
    }

    pub fn register_expert<S: AsRef<str>>(
        &mut self,
        id: &str,
        tags: &[S],
        channels: &[usize],
        agent_path: &str,
    ) -> Result<(), GateError> {
        if self.entries.contains_key(id) {
            return Err(GateError::DuplicateExpert(id.to_string()));
        }
        check_channels(id, channels)?;
        let tags: BTreeSet<String> = tags.iter().map(|t| normalize_tag(t.as_ref())).collect();
        for (owner, entry) in &self.entries {
            if let Some(tag) = entry.profile_tags.intersection(&tags).next() {
                return Err(GateError::TagCollision { tag: tag.clone(), owner: owner.clone() });
            }
        }
        self.entries.insert(
            id.to_string(),
            ExpertEntry {
                profile_tags: tags,
                monitored_channels: channels.to_vec(),
                agent_path: agent_path.to_string(),
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ExpertEntry> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GateError> {
        let reg: ExpertRegistry = serde_json::from_str(text)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, GateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GateError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Keyword-hit argmax; ties and zero hits go to the default expert.
pub fn rule_gate(description: &str, registry: &ExpertRegistry) -> ExpertId {
    let tokens = tokenize(description);
    let mut best: Option<(&str, usize)> = None;
    let mut tied = false;
    for (id, entry) in &registry.entries {
        let hits = tokens.iter().filter(|t| entry.profile_tags.contains(*t)).count();
        match best {
            Some((_, h)) if hits == h => tied = true,
            Some((_, h)) if hits < h => {}
            _ => {
                best = Some((id, hits));
                tied = false;
            }
        }
    }
    match best {
        Some((id, hits)) if hits > 0 && !tied => id.to_string(),
        _ => registry.default_id.clone(),
    }
}

pub fn gate_prompt(description: &str, registry: &ExpertRegistry) -> String {
    format!(
        "A user describes themselves as: \"{}\". Choose the most suitable expert model for \
         health monitoring. Answer with exactly one id from: {}.",
        description,
        registry.ids().collect::<Vec<_>>().join(", ")
    )
}

pub fn llm_gate(description: &str, registry: &ExpertRegistry, adapter: &dyn TextAdapter) -> ExpertId {
    match adapter.complete(&gate_prompt(description, registry)) {
        Ok(answer) => {
            let answer = answer.trim();
            if registry.entries.contains_key(answer) {
                return answer.to_string();
            }
            log::warn!("gate adapter answered unregistered id {answer:?}; using rule gate");
        }
        Err(e) => log::warn!("gate adapter failed ({e}); using rule gate"),
    }
    rule_gate(description, registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::TextError;
    use proptest::prelude::*;

    struct Fixed(Result<String, TextError>);

    impl TextAdapter for Fixed {
        fn complete(&self, _prompt: &str) -> Result<String, TextError> {
            self.0.clone()
        }
    }

    #[test]
    fn descriptions_route_to_sedentary() {
        let reg = ExpertRegistry::standard();
        assert_eq!(rule_gate("I am programmer", &reg), "sedentary");
        assert_eq!(rule_gate("long working hours and sedentary mental work", &reg), "sedentary");
        assert_eq!(rule_gate("I engaged in long working hours and sedentary mental work", &reg), "sedentary");
        assert_eq!(rule_gate("marathon runner", &reg), "active");
    }

    #[test]
    fn no_hits_or_tie_use_default() {
        let reg = ExpertRegistry::standard();
        assert_eq!(rule_gate("qwzx", &reg), "default");
        assert_eq!(rule_gate("", &reg), "default");
        assert_eq!(rule_gate("programmer runner", &reg), "default");
    }

    #[test]
    fn registration_rules() {
        let mut reg = ExpertRegistry::standard();
        reg.register_expert("athlete_pro", &["olympian"], &[3, 4], "a.json").unwrap();
        assert!(reg.get("athlete_pro").is_some());
        assert!(matches!(
            reg.register_expert("athlete_pro", &["other"], &[3], "a.json"),
            Err(GateError::DuplicateExpert(_))
        ));
        match reg.register_expert("coder", &["Programmer"], &[3], "c.json") {
            Err(GateError::TagCollision { tag, owner }) => {
                assert_eq!(tag, "programmer");
                assert_eq!(owner, "sedentary");
            }
            other => panic!("{other:?}"),
        }
        assert!(reg.register_expert("x", &["y"], &[99], "x.json").is_err());
        reg.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_validation() {
        let reg = ExpertRegistry::standard();
        assert_eq!(ExpertRegistry::from_json(&reg.to_json()).unwrap(), reg);
        let mut broken = reg.clone();
        broken.default_id = "nobody".into();
        assert!(matches!(ExpertRegistry::from_json(&broken.to_json()), Err(GateError::UnknownDefault(_))));
    }

    #[test]
    fn llm_gate_validates_answer() {
        let reg = ExpertRegistry::standard();
        let desc = "I am programmer";
        assert_eq!(llm_gate(desc, &reg, &Fixed(Ok(" active\n".into()))), "active");
        assert_eq!(llm_gate(desc, &reg, &Fixed(Ok("doctorx".into()))), "sedentary");
        let down = Fixed(Err(TextError::AdapterUnavailable("timeout".into())));
        assert_eq!(llm_gate("qwzx", &reg, &down), "default");
    }

    proptest! {
        #[test]
        fn order_and_case_invariant(words in proptest::collection::vec(
            prop_oneof![Just("programmer"), Just("runner"), Just("gym"), Just("desk"), Just("the"), Just("qq")], 0..8),
            upper in any::<u64>())
        {
            let reg = ExpertRegistry::standard();
            let text = words.join(" ");
            let mut rev = words.clone();
            rev.reverse();
            let shouted: Vec<String> = rev.iter().enumerate()
                .map(|(i, w)| if upper >> (i % 64) & 1 == 1 { w.to_uppercase() } else { w.to_string() })
                .collect();
            let id = rule_gate(&text, &reg);
            prop_assert_eq!(&id, &rule_gate(&shouted.join("  "), &reg));
            prop_assert!(reg.get(&id).is_some());
        }
    }
}

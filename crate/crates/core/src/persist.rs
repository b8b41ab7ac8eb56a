//! Shared model file format.
//!
//! Every persisted model is one JSON document:
//!
//! ```json
//! { "format": "has-model", "version": 1, "kind": "agent", "body": { ... } }
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! reproduces its outputs bit-for-bit on the same platform.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "has-model";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    Format(String),
    #[error("unsupported model version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("model kind mismatch: expected {expected}, found {found}")]
    Kind { expected: String, found: String },
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format: String,
    version: u32,
    kind: String,
    body: serde_json::Value,
}

pub fn to_string<T: Serialize>(kind: &str, body: &T) -> String {
    serde_json::to_string(&EnvelopeOut {
        format: FORMAT,
        version: VERSION,
        kind,
        body,
    })
    .expect("model bodies are always serializable")
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, PersistError> {
    let env: EnvelopeIn = serde_json::from_str(text).map_err(|e| PersistError::Format(e.to_string()))?;
    if env.format != FORMAT {
        return Err(PersistError::Format(format!("unknown format tag {:?}", env.format)));
    }
    if env.version != VERSION {
        return Err(PersistError::Version { found: env.version });
    }
    if env.kind != kind {
        return Err(PersistError::Kind {
            expected: kind.to_string(),
            found: env.kind,
        });
    }
    serde_json::from_value(env.body).map_err(|e| PersistError::Format(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), PersistError> {
    std::fs::write(path, to_string(kind, body)).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_str(kind, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_checks() {
        let text = to_string("thing", &vec![1.5_f64, -0.1]);
        let back: Vec<f64> = from_str("thing", &text).unwrap();
        assert_eq!(back, vec![1.5, -0.1]);
        assert!(matches!(from_str::<Vec<f64>>("other", &text), Err(PersistError::Kind { .. })));
        let bumped = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(from_str::<Vec<f64>>("thing", &bumped), Err(PersistError::Version { found: 9 })));
        assert!(matches!(
            from_str::<Vec<f64>>("thing", &text[..text.len() / 2]),
            Err(PersistError::Format(_))
        ));
    }
}

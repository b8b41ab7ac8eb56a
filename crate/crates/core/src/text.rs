//! Redacted condition summaries and their embeddings.
//!
//! [`redact`] renders a patient record into prose from a fixed condition and
//! symptom catalog, never copying identity fields. [`llm_reconstruct`] asks an
//! external text service for the same summary and only accepts the answer if
//! it passes the identity scrubber. [`embed`] turns text into a unit vector by
//! signed feature hashing of its lowercase alphanumeric tokens.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// `(code, description)` pairs.
pub const CONDITIONS: &[(&str, &str)] = &[
    ("ivdd", "C2-3/C5-6 intervertebral disc degeneration"),
    ("cvh", "cervical vertebra hyperostogeny"),
    ("htn", "hypertension"),
    ("afib", "atrial fibrillation"),
    ("asthma", "asthma"),
    ("t2d", "type 2 diabetes"),
    ("tachy", "sinus tachycardia"),
];

pub const SYMPTOMS: &[(&str, &str)] = &[
    ("back_pain", "pain in the back, waist, and neck"),
    ("sciatica", "sciatic nerve pain"),
    ("dizziness", "occasional dizziness and visual rotation"),
    ("numbness", "numbness in the lower limbs"),
    ("urination", "abnormal urination"),
    ("palpitations", "palpitations"),
    ("breathless", "shortness of breath on exertion"),
];

pub const NO_CONDITIONS: &str = "No reported conditions.";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub name: String,
    pub gender: String,
    pub age: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveRecord {
    pub identity: Identity,
    pub condition_codes: Vec<String>,
    pub symptom_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedText {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub g: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn norm(&self) -> f64 {
        self.g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TextError {
    #[error("unknown catalog code {0:?}")]
    UnknownCode(String),
    #[error("embedding dimension must be at least 1")]
    BadDimension,
    #[error("text adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("adapter response leaks identity tokens")]
    IdentityLeak,
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Identity {
    pub fn tokens(&self) -> Vec<String> {
        let mut t = tokenize(&self.name);
        t.extend(tokenize(&self.gender));
        t.extend(tokenize(&self.age));
        t.sort();
        t.dedup();
        t
    }
}

/// True when no token of `text` equals an identity token.
pub fn is_clean(text: &str, identity: &Identity) -> bool {
    let banned = identity.tokens();
    tokenize(text).iter().all(|t| banned.binary_search(t).is_err())
}

/// Drop every whitespace-delimited word that contains an identity token.
pub fn scrub(text: &str, identity: &Identity) -> String {
    let banned = identity.tokens();
    text.split_whitespace()
        .filter(|word| tokenize(word).iter().all(|t| banned.binary_search(t).is_err()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn lookup<'a>(catalog: &'a [(&str, &str)], code: &str) -> Result<&'a str, TextError> {
    catalog
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, d)| *d)
        .ok_or_else(|| TextError::UnknownCode(code.to_string()))
}

fn join_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Template rendering of the record's conditions and symptoms.
pub fn redact(record: &SensitiveRecord) -> Result<RedactedText, TextError> {
    let conditions = record
        .condition_codes
        .iter()
        .map(|c| lookup(CONDITIONS, c))
        .collect::<Result<Vec<_>, _>>()?;
    let symptoms = record
        .symptom_tags
        .iter()
        .map(|s| lookup(SYMPTOMS, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut parts = Vec::new();
    if !conditions.is_empty() {
        parts.push(format!("The patient was diagnosed with {}.", join_list(&conditions)));
    }
    if !symptoms.is_empty() {
        parts.push(format!("They experienced symptoms including {}.", join_list(&symptoms)));
    }
    let text = if parts.is_empty() {
        NO_CONDITIONS.to_string()
    } else {
        parts.join(" ")
    };
    Ok(RedactedText {
        text: scrub(&text, &record.identity),
    })
}

/// The request sent to the text service for a record.
pub fn reconstruction_prompt(record: &SensitiveRecord) -> Result<String, TextError> {
    let conditions = record
        .condition_codes
        .iter()
        .map(|c| lookup(CONDITIONS, c))
        .collect::<Result<Vec<_>, _>>()?;
    let symptoms = record
        .symptom_tags
        .iter()
        .map(|s| lookup(SYMPTOMS, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(format!(
        "Summarize a description of this patient, omit the personal information of this patient \
         (e.g. the name, gender) and only focus on the description of the disease. \
         Conditions: {}. Symptoms: {}.",
        conditions.join("; "),
        symptoms.join("; ")
    ))
}

/// Any service that maps a prompt to text.
pub trait TextAdapter: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, TextError>;
}

/// Outcome of [`llm_reconstruct`], with the reason a fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub text: RedactedText,
    pub fallback: Option<TextError>,
}

/// Ask `adapter` for a summary; fall back to [`redact`] when the service
/// fails or its answer contains identity tokens.
pub fn llm_reconstruct(
    record: &SensitiveRecord,
    prompt: &str,
    adapter: &dyn TextAdapter,
) -> Result<Reconstruction, TextError> {
    let reason = match adapter.complete(prompt) {
        Ok(text) if is_clean(&text, &record.identity) => {
            return Ok(Reconstruction {
                text: RedactedText { text },
                fallback: None,
            })
        }
        Ok(_) => TextError::IdentityLeak,
        Err(e) => e,
    };
    log::warn!("text adapter result rejected ({reason}); using template redaction");
    Ok(Reconstruction {
        text: redact(record)?,
        fallback: Some(reason),
    })
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x100_0000_01b3);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Signed feature-hashing embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedder {
    pub dim: usize,
    pub hash_seed: u64,
}

impl Embedder {
    pub fn new(dim: usize) -> Result<Self, TextError> {
        Self::with_seed(dim, 0)
    }

    pub fn with_seed(dim: usize, hash_seed: u64) -> Result<Self, TextError> {
        if dim < 1 {
            return Err(TextError::BadDimension);
        }
        Ok(Embedder { dim, hash_seed })
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut g = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let h = fnv1a(self.hash_seed, tok.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            g[bucket] += sign;
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            g.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding { g }
    }
}

pub fn embed(text: &str, dim: usize) -> Result<Embedding, TextError> {
    Ok(Embedder::new(dim)?.embed(text))
}

/// JSON-over-HTTP adapter: `POST {"prompt": ...}` → `{"text": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAdapter {
    /// `host:port`
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub timeout_ms: u64,
}

fn default_path() -> String {
    "/".to_string()
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

impl HttpAdapter {
    /// POST a JSON body and return the decoded JSON response body.
    pub fn post_json(&self, body: &str) -> Result<String, TextError> {
        let unavailable = |e: &dyn std::fmt::Display| TextError::AdapterUnavailable(e.to_string());
        let timeout = Duration::from_millis(self.timeout_ms.max(1));
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| unavailable(&e))?
            .next()
            .ok_or_else(|| TextError::AdapterUnavailable("endpoint did not resolve".into()))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| unavailable(&e))?;
        stream.set_read_timeout(Some(timeout)).map_err(|e| unavailable(&e))?;
        stream.set_write_timeout(Some(timeout)).map_err(|e| unavailable(&e))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.endpoint,
            body.len(),
            body
        );
        stream.write_all(request.as_bytes()).map_err(|e| unavailable(&e))?;

        let mut reader = BufReader::new(stream);
        let mut status = String::new();
        reader.read_line(&mut status).map_err(|e| unavailable(&e))?;
        let code: u16 = status
            .split_whitespace()
            .nth(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| TextError::AdapterUnavailable(format!("bad status line {status:?}")))?;
        let mut content_length = None;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).map_err(|e| unavailable(&e))?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse::<usize>().ok();
                }
            }
        }
        let mut body = Vec::new();
        match content_length {
            Some(n) => {
                body.resize(n, 0);
                reader.read_exact(&mut body).map_err(|e| unavailable(&e))?;
            }
            None => {
                reader.read_to_end(&mut body).map_err(|e| unavailable(&e))?;
            }
        }
        if !(200..300).contains(&code) {
            return Err(TextError::AdapterUnavailable(format!("HTTP status {code}")));
        }
        String::from_utf8(body).map_err(|e| unavailable(&e))
    }
}

impl TextAdapter for HttpAdapter {
    fn complete(&self, prompt: &str) -> Result<String, TextError> {
        let body = serde_json::to_string(&PromptBody { prompt }).expect("string body serializes");
        let reply = self.post_json(&body)?;
        serde_json::from_str::<TextBody>(&reply)
            .map(|b| b.text)
            .map_err(|e| TextError::AdapterUnavailable(format!("bad response body: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    fn alice() -> SensitiveRecord {
        SensitiveRecord {
            identity: Identity {
                name: "Alice Moreau".into(),
                gender: "female".into(),
                age: "47".into(),
            },
            condition_codes: vec!["ivdd".into(), "cvh".into()],
            symptom_tags: vec!["back_pain".into(), "dizziness".into()],
        }
    }

    struct Fixed(Result<String, TextError>);

    impl TextAdapter for Fixed {
        fn complete(&self, _prompt: &str) -> Result<String, TextError> {
            self.0.clone()
        }
    }

    #[test]
    fn redaction_mentions_condition_not_name() {
        let rec = SensitiveRecord {
            identity: Identity { name: "Alice".into(), ..Identity::default() },
            condition_codes: vec!["htn".into()],
            symptom_tags: vec![],
        };
        let r = redact(&rec).unwrap();
        assert!(r.text.contains("hypertension"));
        assert!(!r.text.to_lowercase().contains("alice"));
        assert_eq!(r, redact(&rec).unwrap());
    }

    #[test]
    fn empty_record_sentence() {
        assert_eq!(redact(&SensitiveRecord::default()).unwrap().text, NO_CONDITIONS);
    }

    #[test]
    fn unknown_code() {
        let rec = SensitiveRecord {
            condition_codes: vec!["zzz".into()],
            ..SensitiveRecord::default()
        };
        assert_eq!(redact(&rec), Err(TextError::UnknownCode("zzz".into())));
    }

    #[test]
    fn identity_colliding_with_catalog_words_is_scrubbed() {
        let rec = SensitiveRecord {
            identity: Identity { name: "Neck".into(), gender: "".into(), age: "3".into() },
            ..alice()
        };
        let r = redact(&rec).unwrap();
        assert!(is_clean(&r.text, &rec.identity), "{}", r.text);
    }

    #[test]
    fn adapter_paths() {
        let rec = alice();
        let prompt = reconstruction_prompt(&rec).unwrap();
        let echo = Fixed(Ok("Alice has disc degeneration".into()));
        let out = llm_reconstruct(&rec, &prompt, &echo).unwrap();
        assert_eq!(out.fallback, Some(TextError::IdentityLeak));
        assert_eq!(out.text, redact(&rec).unwrap());

        let down = Fixed(Err(TextError::AdapterUnavailable("timeout".into())));
        let out = llm_reconstruct(&rec, &prompt, &down).unwrap();
        assert!(matches!(out.fallback, Some(TextError::AdapterUnavailable(_))));
        assert_eq!(out.text, redact(&rec).unwrap());

        let good = Fixed(Ok("Degenerative cervical disc disease with neck pain.".into()));
        let out = llm_reconstruct(&rec, &prompt, &good).unwrap();
        assert_eq!(out.fallback, None);
        assert_eq!(out.text.text, "Degenerative cervical disc disease with neck pain.");
    }

    #[test]
    fn embedding_basics() {
        assert!(embed("", 64).unwrap().g.iter().all(|&x| x == 0.0));
        assert_eq!(embed("x", 0), Err(TextError::BadDimension));
        let a = embed("back pain and dizziness", 64).unwrap();
        assert_eq!(a, embed("back pain and dizziness", 64).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a, embed("Dizziness AND pain, back", 64).unwrap());
    }

    // Independent tokens hash to ~N(0, 1/M) cosines, so |cos| ≥ 0.5 at M = 64
    // is a 4σ event. Checked over 2000 hash seeds with random disjoint vocabularies.
    #[test]
    fn disjoint_sentences_rarely_collide() {
        use rand::Rng as _;
        let mut rng = crate::seed::stream(77, &[]);
        let trials = 2000;
        let mut ok = 0;
        for trial in 0..trials {
            let e = Embedder::with_seed(64, trial).unwrap();
            let n = rng.random_range(4..12);
            let a: Vec<String> = (0..n).map(|i| format!("a{}x{}", rng.random::<u32>(), i)).collect();
            let b: Vec<String> = (0..n).map(|i| format!("b{}y{}", rng.random::<u32>(), i)).collect();
            let (ga, gb) = (e.embed(&a.join(" ")), e.embed(&b.join(" ")));
            let cos: f64 = ga.g.iter().zip(&gb.g).map(|(x, y)| x * y).sum();
            if cos.abs() < 0.5 {
                ok += 1;
            }
        }
        assert!(ok as f64 / trials as f64 >= 0.99, "{ok}/{trials}");
    }

    #[test]
    fn http_adapter_against_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let n = s.read(&mut buf).unwrap();
            let req = String::from_utf8_lossy(&buf[..n]).to_string();
            let body = r#"{"text":"summary ok"}"#;
            write!(s, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{}", body.len(), body).unwrap();
            req
        });
        let adapter = HttpAdapter { endpoint: addr.to_string(), path: "/v1".into(), timeout_ms: 2000 };
        assert_eq!(adapter.complete("hello").unwrap(), "summary ok");
        let req = server.join().unwrap();
        assert!(req.starts_with("POST /v1 HTTP/1.1"));
        assert!(req.contains(r#"{"prompt":"hello"}"#));
    }

    #[test]
    fn http_adapter_unreachable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let adapter = HttpAdapter { endpoint: format!("127.0.0.1:{port}"), path: "/".into(), timeout_ms: 200 };
        assert!(matches!(adapter.complete("x"), Err(TextError::AdapterUnavailable(_))));
    }
}

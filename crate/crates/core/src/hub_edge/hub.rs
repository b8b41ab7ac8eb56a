use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{read_frame, write_frame, DataRecord, Message, ProtocolError};
use crate::agent::AlertDecision;
use crate::dataset::Window;
use crate::feedback::FeedbackEvent;
use crate::gate::ExpertId;
use crate::text::{embed, redact, Embedding, RedactedText, SensitiveRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_ms: u64,
    pub cap_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_ms: 50, cap_ms: 1_000 }
    }
}

impl RetryPolicy {
    /// Wait before retry `k` (1-based): `base·2^(k−1)`, capped.
    pub fn backoff(&self, k: u32) -> Duration {
        let ms = self.base_ms.saturating_mul(1u64 << (k - 1).min(30));
        Duration::from_millis(ms.min(self.cap_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubConfig {
    /// `host:port` of the edge server.
    pub addr: String,
    pub user_description: String,
    pub embed_dim: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    10_000
}

impl HubConfig {
    pub fn new(addr: impl Into<String>, user_description: impl Into<String>, embed_dim: usize) -> Self {
        HubConfig {
            addr: addr.into(),
            user_description: user_description.into(),
            embed_dim,
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout(),
        }
    }
}

/// Client session. Everything written to the socket is also appended to
/// `wire_log`.
pub struct HubClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    wire_log: Vec<u8>,
    expert_id: Option<ExpertId>,
}

fn connect_with_retry(cfg: &HubConfig) -> Result<TcpStream, ProtocolError> {
    let timeout = Duration::from_millis(cfg.timeout_ms.max(1));
    let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "address did not resolve");
    for k in 1..=cfg.retry.attempts.max(1) {
        if k > 1 {
            std::thread::sleep(cfg.retry.backoff(k - 1));
        }
        let addrs = match cfg.addr.to_socket_addrs() {
            Ok(a) => a.collect::<Vec<_>>(),
            Err(e) => {
                last = e;
                continue;
            }
        };
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(timeout))?;
                    s.set_write_timeout(Some(timeout))?;
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        log::warn!("connect attempt {k} to {} failed: {last}", cfg.addr);
    }
    Err(ProtocolError::HubUnreachable { attempts: cfg.retry.attempts.max(1), last })
}

impl HubClient {
    /// Connect and send HELLO.
    pub fn connect(cfg: &HubConfig) -> Result<Self, ProtocolError> {
        let stream = connect_with_retry(cfg)?;
        let mut client = HubClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            wire_log: Vec::new(),
            expert_id: None,
        };
        match client.exchange(&Message::Hello { user_description: cfg.user_description.clone() })? {
            Message::Ack => Ok(client),
            other => Err(unexpected(other)),
        }
    }

    pub fn wire_log(&self) -> &[u8] {
        &self.wire_log
    }

    /// Expert named in the most recent ALERT.
    pub fn expert_id(&self) -> Option<&str> {
        self.expert_id.as_deref()
    }

    fn exchange(&mut self, msg: &Message) -> Result<Message, ProtocolError> {
        let bytes = write_frame(&mut self.writer, msg)?;
        self.wire_log.extend_from_slice(&bytes);
        read_frame(&mut self.reader)?.ok_or(ProtocolError::Unexpected("end of stream"))
    }

    pub fn send(&mut self, record: DataRecord) -> Result<AlertDecision, ProtocolError> {
        match self.exchange(&Message::Data(record))? {
            Message::Alert { expert_id, decision } => {
                self.expert_id = Some(expert_id);
                Ok(decision)
            }
            other => Err(unexpected(other)),
        }
    }

    pub fn feedback(&mut self, event: FeedbackEvent) -> Result<(), ProtocolError> {
        match self.exchange(&Message::Feedback { event })? {
            Message::Ack => Ok(()),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(msg: Message) -> ProtocolError {
    match msg {
        Message::Error { code, detail } => ProtocolError::Remote { code, detail },
        other => ProtocolError::Unexpected(other.kind()),
    }
}

/// Mixed-content record for one window. Only the redacted text and its
/// embedding are derived from the sensitive record.
pub fn data_record(slot: u64, window: &Window, text: &RedactedText, g: &Embedding) -> DataRecord {
    DataRecord {
        slot,
        d: window.data.rows().into_iter().map(|r| r.to_vec()).collect(),
        g: g.g.clone(),
        text: Some(text.text.clone()),
        a: None,
        activity: None,
    }
}

/// Run a whole session: redact and embed locally, upload each window as
/// slot `i`, collect the ALERTs. Returns the decisions and the wire log.
pub fn hub_run(
    cfg: &HubConfig,
    record: &SensitiveRecord,
    windows: &[Window],
) -> Result<(Vec<AlertDecision>, Vec<u8>), ProtocolError> {
    let text = redact(record)?;
    let g = embed(&text.text, cfg.embed_dim)?;
    let mut client = HubClient::connect(cfg)?;
    let mut out = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        out.push(client.send(data_record(i as u64, w, &text, &g))?);
    }
    Ok((out, client.wire_log))
}

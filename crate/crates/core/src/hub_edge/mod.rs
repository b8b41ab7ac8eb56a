//! Hub/edge split over TCP.
//!
//! Every message travels as one frame: a 4-byte big-endian payload length
//! followed by a UTF-8 JSON object whose `"type"` field names the message.
//! The hub redacts and embeds locally, so only redacted text, the embedding
//! and raw sensor windows ever cross the wire.

mod edge;
mod hub;

pub use edge::{EdgeHandle, EdgeServer, EdgeState};
pub use hub::{data_record, hub_run, HubClient, HubConfig, RetryPolicy};

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::AlertDecision;
use crate::feedback::FeedbackEvent;
use crate::gate::ExpertId;
use crate::pipeline::PipelineError;

/// Largest accepted payload, in bytes.
pub const MAX_FRAME: usize = 16 << 20;

/// One slot's upload: the raw window plus the mixed-content fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub slot: u64,
    /// `C × L`, channel-major.
    pub d: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Hub-side activity profile, if the hub computed one. The edge
    /// recognizes again after denoising and only logs this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello { user_description: String },
    Data(DataRecord),
    Alert { expert_id: ExpertId, decision: AlertDecision },
    Feedback { event: FeedbackEvent },
    Ack,
    Error { code: String, detail: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("incomplete frame: need {need} bytes, have {have}")]
    IncompleteFrame { need: usize, have: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("edge server unreachable after {attempts} attempts: {last}")]
    HubUnreachable { attempts: u32, last: io::Error },
    #[error("server replied {code}: {detail}")]
    Remote { code: String, detail: String },
    #[error("unexpected {0} message")]
    Unexpected(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Data(_) => "DATA",
            Message::Alert { .. } => "ALERT",
            Message::Feedback { .. } => "FEEDBACK",
            Message::Ack => "ACK",
            Message::Error { .. } => "ERROR",
        }
    }
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let payload = serde_json::to_vec(msg).map_err(|e| ProtocolError::MalformedPayload(e.to_string()))?;
    if payload.len() > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode the frame at the start of `bytes`; returns the message and the
/// number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if bytes.len() < 4 {
        return Err(ProtocolError::IncompleteFrame { need: 4, have: bytes.len() });
    }
    let len = declared_len(bytes[..4].try_into().expect("4 bytes"))?;
    let have = bytes.len() - 4;
    if have < len {
        return Err(ProtocolError::IncompleteFrame { need: len, have });
    }
    Ok((parse_payload(&bytes[4..4 + len])?, 4 + len))
}

fn declared_len(header: [u8; 4]) -> Result<usize, ProtocolError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    Ok(len)
}

fn parse_payload(payload: &[u8]) -> Result<Message, ProtocolError> {
    serde_json::from_slice(payload).map_err(|e| ProtocolError::MalformedPayload(e.to_string()))
}

pub fn write_frame<W: Write>(out: &mut W, msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let bytes = encode_frame(msg)?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(bytes)
}

/// Read one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(ProtocolError::IncompleteFrame { need: 4, have: got }),
            n => got += n,
        }
    }
    let len = declared_len(header)?;
    let mut payload = vec![0u8; len];
    let mut have = 0;
    while have < len {
        match input.read(&mut payload[have..])? {
            0 => return Err(ProtocolError::IncompleteFrame { need: len, have }),
            n => have += n,
        }
    }
    parse_payload(&payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::Verdict;
    use proptest::prelude::*;

    #[test]
    fn frame_examples() {
        let bytes = encode_frame(&Message::Ack).unwrap();
        assert_eq!(&bytes[4..], br#"{"type":"ACK"}"#);
        assert_eq!(decode_frame(&bytes).unwrap(), (Message::Ack, bytes.len()));

        let mut short = 10u32.to_be_bytes().to_vec();
        short.extend_from_slice(b"{\"ty\"");
        short.push(b'x');
        assert!(matches!(decode_frame(&short), Err(ProtocolError::IncompleteFrame { need: 10, have: 6 })));

        let big = (1u32 << 31).to_be_bytes();
        assert!(matches!(decode_frame(&big), Err(ProtocolError::FrameTooLarge(n)) if n == 1 << 31));

        let mut bad = 3u32.to_be_bytes().to_vec();
        bad.extend_from_slice(b"{x}");
        assert!(matches!(decode_frame(&bad), Err(ProtocolError::MalformedPayload(_))));
        let mut untyped = 2u32.to_be_bytes().to_vec();
        untyped.extend_from_slice(b"{}");
        assert!(matches!(decode_frame(&untyped), Err(ProtocolError::MalformedPayload(_))));
    }

    #[test]
    fn stream_reads_consume_exact_frames() {
        let mut buf = encode_frame(&Message::Hello { user_description: "I am programmer".into() }).unwrap();
        buf.extend(encode_frame(&Message::Ack).unwrap());
        let mut r = &buf[..];
        assert!(matches!(read_frame(&mut r).unwrap(), Some(Message::Hello { .. })));
        assert_eq!(read_frame(&mut r).unwrap(), Some(Message::Ack));
        assert_eq!(read_frame(&mut r).unwrap(), None);
        let mut cut = &buf[..buf.len() - 2];
        read_frame(&mut cut).unwrap();
        assert!(matches!(read_frame(&mut cut), Err(ProtocolError::IncompleteFrame { .. })));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e-300)]
    }

    fn message() -> impl Strategy<Value = Message> {
        let text = "[ -~\u{e9}\u{2019}]{0,24}";
        let data = (
            any::<u64>(),
            prop::collection::vec(prop::collection::vec(finite(), 0..6), 0..4),
            prop::collection::vec(finite(), 0..8),
            prop::option::of(text),
            prop::option::of(prop::collection::vec(0.0..1.0f64, 13)),
            prop::option::of(0u8..13),
        )
            .prop_map(|(slot, d, g, text, a, activity)| Message::Data(DataRecord { slot, d, g, text, a, activity }));
        let decision = (any::<u64>(), 0u8..13, finite(), 0.5..10.0f64, any::<bool>(), prop::collection::vec(0.0..1.0f64, 0..5))
            .prop_map(|(slot, activity, score, threshold, fired, weights)| AlertDecision { slot, activity, score, threshold, fired, weights });
        let verdict = prop_oneof![
            Just(Verdict::ConfirmAlert),
            Just(Verdict::DenyAlert),
            Just(Verdict::ConfirmNoAlert),
            Just(Verdict::ReportMissed)
        ];
        prop_oneof![
            text.prop_map(|user_description| Message::Hello { user_description }),
            data,
            (text, decision).prop_map(|(expert_id, decision)| Message::Alert { expert_id, decision }),
            (any::<u64>(), verdict, prop::option::of(0u8..13), text).prop_map(|(alert_slot, verdict, claimed_activity, raw_text)| {
                Message::Feedback { event: FeedbackEvent { alert_slot, verdict, claimed_activity, raw_text } }
            }),
            Just(Message::Ack),
            (text, text).prop_map(|(code, detail)| Message::Error { code, detail }),
        ]
    }

    proptest! {
        #[test]
        fn frame_round_trip(msg in message()) {
            let bytes = encode_frame(&msg).unwrap();
            let (back, used) = decode_frame(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(encode_frame(&back).unwrap(), bytes);
            prop_assert_eq!(back, msg);
        }
    }
}

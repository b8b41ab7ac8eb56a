use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use ndarray::Array2;

use super::{read_frame, write_frame, DataRecord, Message, ProtocolError};
use crate::dataset::{Episode, Window};
use crate::gate::{llm_gate, rule_gate, ExpertId, ExpertRegistry};
use crate::pipeline::{ExpertRuntime, Preprocessor};
use crate::text::{Embedding, TextAdapter};

/// Shared server state. Each expert's runtime sits behind its own mutex, so
/// all updates to one agent are serialized.
pub struct EdgeState {
    pub registry: ExpertRegistry,
    pub experts: BTreeMap<ExpertId, Arc<Mutex<ExpertRuntime>>>,
    pub preprocessor: Preprocessor,
    /// Routes HELLO through the LLM gate when set; the rule gate otherwise.
    pub gate_adapter: Option<Arc<dyn TextAdapter>>,
}

impl EdgeState {
    pub fn gate(&self, description: &str) -> ExpertId {
        match &self.gate_adapter {
            Some(a) => llm_gate(description, &self.registry, a.as_ref()),
            None => rule_gate(description, &self.registry),
        }
    }

    pub fn runtime(&self, id: &str) -> Option<Arc<Mutex<ExpertRuntime>>> {
        self.experts.get(id).cloned()
    }
}

pub struct EdgeServer {
    listener: TcpListener,
    state: Arc<EdgeState>,
}

/// A server running on a background thread.
pub struct EdgeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EdgeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections. Open sessions finish on their own threads.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EdgeHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

impl EdgeServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, state: Arc<EdgeState>) -> Result<Self, ProtocolError> {
        Ok(EdgeServer { listener: TcpListener::bind(addr)?, state })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ProtocolError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accept until `stop` is set, one thread per connection.
    pub fn serve(self, stop: Arc<AtomicBool>) {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let state = self.state.clone();
                    std::thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = handle_connection(stream, &state) {
                            log::warn!("session {peer:?} ended: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    }

    pub fn spawn(self) -> Result<EdgeHandle, ProtocolError> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || self.serve(flag));
        Ok(EdgeHandle { addr, stop, thread: Some(thread) })
    }
}

fn record_window(rec: &DataRecord) -> Result<Window, String> {
    let rows = rec.d.len();
    let cols = rec.d.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || rec.d.iter().any(|r| r.len() != cols) {
        return Err(format!("DATA slot {} has a ragged or empty window", rec.slot));
    }
    let data = Array2::from_shape_fn((rows, cols), |(c, n)| rec.d[c][n]);
    Ok(Window {
        data,
        activity: rec.activity.unwrap_or(0),
        episode: Episode::Normal,
        t_index: rec.slot as usize,
        subject_id: 0,
    })
}

fn error(code: &str, detail: impl Into<String>) -> Message {
    Message::Error { code: code.into(), detail: detail.into() }
}

/// Serve one session. Replies are written in request order.
pub fn handle_connection(stream: TcpStream, state: &EdgeState) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut expert: Option<(ExpertId, Arc<Mutex<ExpertRuntime>>)> = None;
    loop {
        let msg = match read_frame(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Io(e)) => return Err(e.into()),
            Err(e) => {
                write_frame(&mut writer, &error("PROTO", e.to_string()))?;
                return Err(e);
            }
        };
        let reply = match (msg, &expert) {
            (Message::Hello { user_description }, None) => {
                let id = state.gate(&user_description);
                match state.runtime(&id) {
                    Some(rt) => {
                        log::info!("gate routed {user_description:?} to {id}");
                        expert = Some((id, rt));
                        Message::Ack
                    }
                    None => {
                        write_frame(&mut writer, &error("EXPERT", format!("expert {id:?} is not loaded")))?;
                        return Ok(());
                    }
                }
            }
            (Message::Data(rec), Some((id, rt))) => match data_reply(state, id, rt, &rec) {
                Ok(m) => m,
                Err(m) => m,
            },
            (Message::Feedback { event }, Some((_, rt))) => {
                let outcome = rt.lock().expect("expert lock").apply(&event);
                match outcome {
                    Ok(_) => Message::Ack,
                    Err(e) => error("FEEDBACK", e.to_string()),
                }
            }
            (other, _) => {
                let detail = match expert {
                    None => format!("{} before HELLO", other.kind()),
                    Some(_) => format!("unexpected {}", other.kind()),
                };
                write_frame(&mut writer, &error("PROTO", detail))?;
                return Ok(());
            }
        };
        write_frame(&mut writer, &reply)?;
    }
}

fn data_reply(state: &EdgeState, id: &ExpertId, rt: &Mutex<ExpertRuntime>, rec: &DataRecord) -> Result<Message, Message> {
    let window = record_window(rec).map_err(|d| error("DATA", d))?;
    let clean = state.preprocessor.apply(&window).map_err(|e| error("DENOISE", e.to_string()))?;
    let g = Embedding { g: rec.g.clone() };
    let decision = rt
        .lock()
        .expect("expert lock")
        .decide(rec.slot, &g, &clean, None)
        .map_err(|e| error("DECIDE", e.to_string()))?;
    Ok(Message::Alert { expert_id: id.clone(), decision })
}

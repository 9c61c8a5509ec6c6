//! Worker side of the socket protocol.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Arc;

use crate::engine::snapshot::{PosteriorSnapshot, PreparedSnapshot};
use crate::error::{Error, Result};
use crate::pool::{Library, PoolView};

use super::wire::{
    read_frame, write_frame, EvalResultPayload, EvaluatePayload, MessageKind, ProposePayload, RankedListPayload,
    SnapshotPayload, WireMessage, PROTO_VERSION,
};

/// Per-connection worker state: the pool, the latest posterior and the
/// evaluated set it was conditioned on.
#[derive(Debug, Default)]
pub struct WorkerState {
    library: Option<Arc<Library>>,
    view: Option<PoolView>,
    snapshot: Option<PreparedSnapshot>,
    cache: Option<PreparedSnapshot>,
}

impl WorkerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handles one request. Returns `Ok(None)` for SHUTDOWN; protocol and
    /// payload errors are returned for the caller to report.
    pub fn handle(&mut self, msg: &WireMessage) -> Result<Option<WireMessage>> {
        if msg.proto_version != PROTO_VERSION {
            return Err(Error::Wire(format!(
                "unsupported proto_version {} (expected {PROTO_VERSION})",
                msg.proto_version
            )));
        }
        match msg.kind {
            MessageKind::Snapshot => {
                let p: SnapshotPayload = msg.payload()?;
                if let Some(pool) = p.pool {
                    self.library = Some(Arc::new(pool.into_library()?));
                    self.cache = None;
                }
                let lib = self.library()?;
                let mut mask = vec![false; lib.len()];
                for i in p.evaluated {
                    *mask
                        .get_mut(i)
                        .ok_or_else(|| Error::ProtocolViolation(format!("evaluated index {i} outside pool")))? = true;
                }
                self.view = Some(PoolView::new(Arc::clone(&lib), mask)?);
                self.snapshot = match p.posterior {
                    Some(payload) => {
                        let post = PosteriorSnapshot::try_from(payload)?;
                        let prepared = PreparedSnapshot::new(post, &lib, self.cache.as_ref());
                        self.cache = Some(prepared.clone());
                        Some(prepared)
                    }
                    None => None,
                };
                Ok(Some(WireMessage::bare(MessageKind::Snapshot, msg.t, msg.s)))
            }
            MessageKind::Propose => {
                let p: ProposePayload = msg.payload()?;
                let (Some(snapshot), Some(view)) = (&self.snapshot, &self.view) else {
                    return Err(Error::ProtocolViolation("PROPOSE received before SNAPSHOT".into()));
                };
                let list = snapshot.ranked_list(view, p.batch_size, p.seed)?;
                let reply = RankedListPayload { indices: list.indices, short: list.short };
                Ok(Some(WireMessage::new(MessageKind::RankedList, msg.t, msg.s, &reply)?))
            }
            MessageKind::Evaluate => {
                let p: EvaluatePayload = msg.payload()?;
                let lib = self.library()?;
                let value = *lib
                    .targets()
                    .get(p.index)
                    .ok_or_else(|| Error::ProtocolViolation(format!("evaluate index {} outside pool", p.index)))?;
                let reply = EvalResultPayload { index: p.index, value };
                Ok(Some(WireMessage::new(MessageKind::EvalResult, msg.t, msg.s, &reply)?))
            }
            MessageKind::Shutdown => Ok(None),
            other => Err(Error::ProtocolViolation(format!("unexpected {other:?} message at worker"))),
        }
    }

    fn library(&self) -> Result<Arc<Library>> {
        self.library
            .clone()
            .ok_or_else(|| Error::ProtocolViolation("no pool received yet".into()))
    }
}

enum Outcome {
    Closed,
    Shutdown,
}

fn serve_connection(stream: TcpStream) -> Result<Outcome> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut state = WorkerState::new();
    loop {
        let msg = match read_frame(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(Outcome::Closed),
            Err(e) => {
                log::warn!("malformed frame, resetting connection: {e}");
                let _ = write_frame(&mut writer, &WireMessage::error(0, 0, e.to_string()));
                let _ = writer.flush();
                let _ = stream.shutdown(Shutdown::Both);
                return Ok(Outcome::Closed);
            }
        };
        match state.handle(&msg) {
            // Snapshot acks are implicit; only replies the coordinator waits for are sent.
            Ok(Some(reply)) if reply.kind == MessageKind::Snapshot => continue,
            Ok(Some(reply)) => write_frame(&mut writer, &reply)?,
            Ok(None) => return Ok(Outcome::Shutdown),
            Err(e @ Error::Wire(_)) => {
                let _ = write_frame(&mut writer, &WireMessage::error(msg.t, msg.s, e.to_string()));
                let _ = writer.flush();
                let _ = stream.shutdown(Shutdown::Both);
                return Ok(Outcome::Closed);
            }
            Err(e) => write_frame(&mut writer, &WireMessage::error(msg.t, msg.s, e.to_string()))?,
        }
        writer.flush()?;
    }
}

/// Accepts coordinator connections one at a time until a SHUTDOWN arrives.
pub fn serve_worker(listener: TcpListener) -> Result<()> {
    loop {
        let (stream, peer) = listener.accept()?;
        log::info!("coordinator connected from {peer}");
        match serve_connection(stream) {
            Ok(Outcome::Shutdown) => return Ok(()),
            Ok(Outcome::Closed) => log::info!("connection from {peer} closed"),
            Err(e) => log::warn!("connection from {peer} failed: {e}"),
        }
    }
}

//! Length-prefixed JSON frames: a 4-byte big-endian body length followed by
//! a UTF-8 JSON object `{proto_version, kind, t, s, payload}`.

use std::io::{ErrorKind, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::snapshot::PosteriorPayload;
use crate::error::{Error, Result};
use crate::pool::{FeatureKind, FeatureMatrix, Library, ObjectiveSense};

pub const PROTO_VERSION: u32 = 1;

/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Snapshot,
    Propose,
    RankedList,
    Evaluate,
    EvalResult,
    Error,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub proto_version: u32,
    pub kind: MessageKind,
    pub t: u64,
    pub s: u64,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl WireMessage {
    pub fn new<P: Serialize>(kind: MessageKind, t: u64, s: u64, payload: &P) -> Result<Self> {
        Ok(Self { proto_version: PROTO_VERSION, kind, t, s, payload: serde_json::to_value(payload)? })
    }

    pub fn bare(kind: MessageKind, t: u64, s: u64) -> Self {
        Self { proto_version: PROTO_VERSION, kind, t, s, payload: serde_json::Value::Null }
    }

    pub fn error(t: u64, s: u64, message: impl Into<String>) -> Self {
        let payload = serde_json::to_value(ErrorPayload { message: message.into() }).unwrap_or_default();
        Self { proto_version: PROTO_VERSION, kind: MessageKind::Error, t, s, payload }
    }

    /// Decodes the kind-specific payload.
    pub fn payload<T: DeserializeOwned>(&self) -> Result<T> {
        T::deserialize(&self.payload).map_err(|e| Error::Wire(format!("bad {:?} payload: {e}", self.kind)))
    }
}

/// Full pool sent once per connection so the worker can rank and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPayload {
    pub rows: usize,
    pub dim: usize,
    /// Engine-space features, row-major.
    pub features: Vec<f64>,
    /// Hidden raw targets for the simulation oracle.
    pub targets: Vec<f64>,
    pub sense: ObjectiveSense,
    pub kind: FeatureKind,
}

impl PoolPayload {
    pub fn from_library(lib: &Library) -> Self {
        let f = lib.features();
        Self {
            rows: f.rows(),
            dim: f.dim(),
            features: f.as_slice().to_vec(),
            targets: lib.targets().to_vec(),
            sense: lib.sense(),
            kind: lib.kind(),
        }
    }

    /// Rebuilds a library whose engine features equal the coordinator's.
    pub fn into_library(self) -> Result<Library> {
        let feats = FeatureMatrix::new(self.rows, self.dim, self.features)?;
        let ids = (0..self.rows).map(|i| i.to_string()).collect();
        Library::new(ids, feats, self.targets, self.sense, self.kind, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    /// Absent when the coordinator only needs to ship the pool.
    pub posterior: Option<PosteriorPayload>,
    pub evaluated: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolPayload>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposePayload {
    pub seed: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedListPayload {
    pub indices: Vec<usize>,
    pub short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatePayload {
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResultPayload {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(Error::Wire(format!("frame of {} bytes exceeds limit", body.len())));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<WireMessage> {
    if bytes.len() < 4 {
        return Err(Error::Wire("frame shorter than its length prefix".into()));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() - 4 != len {
        return Err(Error::Wire(format!("frame declares {len} bytes but carries {}", bytes.len() - 4)));
    }
    decode_body(&bytes[4..])
}

fn decode_body(body: &[u8]) -> Result<WireMessage> {
    serde_json::from_slice(body).map_err(|e| Error::Wire(format!("malformed frame body: {e}")))
}

pub fn write_frame<W: Write>(out: &mut W, msg: &WireMessage) -> Result<()> {
    out.write_all(&encode_frame(msg)?)?;
    Ok(())
}

/// Reads one frame; `None` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<WireMessage>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Wire("stream ended inside a length prefix".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Wire(format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Wire("stream ended inside a frame body".into()),
        _ => e.into(),
    })?;
    decode_body(&body).map(Some)
}

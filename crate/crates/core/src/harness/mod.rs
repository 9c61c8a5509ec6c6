//! Execution backends for Thompson proposal rounds: in-process serial and
//! threaded workers, and a coordinator/worker protocol over TCP.

pub mod backend;
pub mod wire;
pub mod worker;

pub use backend::{BackendKind, ProposalBackend, ProposeRequest, SerialBackend, SocketBackend, ThreadedBackend};
pub use wire::{read_frame, write_frame, MessageKind, WireMessage, PROTO_VERSION};
pub use worker::{serve_worker, WorkerState};

//! TCP execution of subproblem solves.
//!
//! A coordinator holds a [`remote::RemoteExecutor`] built from a worker
//! registry; workers run [`worker::worker_serve`]. Results are identical to
//! in-process solves because node solvers are deterministic and JSON floats
//! round-trip exactly.

pub mod remote;
pub mod wire;
pub mod worker;

use std::time::Duration;

pub use remote::{RemoteExecutor, WorkerEndpoint, WorkerRegistry, WORKERS_ENV};
pub use wire::{decode_message, encode_message, FrameDecoder, MessageType, WireMessage, MAX_BODY};
pub use worker::{spawn_worker, worker_serve, WorkerConfig, WorkerHandle};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("connection closed by peer")]
    Closed,
    #[error("worker stopped by fault injection")]
    Killed,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

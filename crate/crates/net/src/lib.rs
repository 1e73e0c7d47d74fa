//! Networking for rrstream: the frame codec, payload layouts, an
//! aggregation server and the data-owner client.

pub mod client;
pub mod frame;
pub mod messages;
pub mod server;

use std::io;

use thiserror::Error;

pub use client::{
    client_submit, fetch_query, fetch_result, prepare_write, wait_result, ClientOptions,
    PreparedWrite, ResultStatus, Submission,
};
pub use frame::{Frame, FrameError, MsgType};
pub use messages::{ErrorCode, QueryAnnounce};
pub use server::{EpochOutcome, Server, ServerOptions};

/// Epoch id a client sends to mean "whichever epoch is open".
pub const ANY_EPOCH: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Payload(#[from] messages::PayloadError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server {server} unreachable: {source}")]
    Unreachable { server: String, source: io::Error },
    #[error("server replied {code:?} for epoch {epoch}: {message}")]
    Remote {
        code: ErrorCode,
        epoch: u64,
        message: String,
    },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("submission abandoned: {0}")]
    Abandoned(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Dpf(#[from] rrstream_core::dpf::DpfError),
    #[error(transparent)]
    Rr(#[from] rrstream_core::rr::RrError),
    #[error(transparent)]
    Epoch(#[from] rrstream_core::epoch::EpochError),
    #[error(transparent)]
    Audit(#[from] rrstream_core::audit::AuditError),
}

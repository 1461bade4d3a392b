//! Networked deployment: a framed TCP protocol, per-database servers, a
//! client that fans the query out to all of them, and the dealer's files.

mod client;
mod frame;
mod provision;
mod server;

use thiserror::Error;

pub use client::{run_client_retrieval, DEFAULT_TIMEOUT};
pub use frame::{
    decode_answers, decode_frame, encode_answers, encode_frame, read_frame, write_frame, ErrorCode, ErrorPayload, Frame, FrameError,
    FrameType, HelloPayload, ParamsEcho, QueryPayload, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION,
};
pub use provision::{
    load_database, load_user, provision, state_hash, DatabaseState, DbFileHeader, Provisioned, SeedFingerprints, UserFile, DB_FORMAT,
    USER_FORMAT,
};
pub use server::{serve_database, ServerHandle};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("{endpoint}: {source}")]
    Transport { endpoint: String, source: std::io::Error },
    #[error("{endpoint}: {source}")]
    Frame { endpoint: String, source: FrameError },
    #[error("{endpoint}: server error {code}: {message}")]
    Remote { endpoint: String, code: u16, message: String },
    #[error("{endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("provisioning: {0}")]
    Provision(String),
    #[error(transparent)]
    Scheme(#[from] crate::scheme::SchemeError),
    #[error(transparent)]
    Decode(#[from] crate::sim::DecodeError),
}

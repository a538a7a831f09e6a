//! HTTPS services around the cryptographic core: the access-control
//! service that holds user keys and builds envelopes, the write proxy that
//! signs packages on their way to storage, and a small object store.
//!
//! All three listen on TLS only. Administrative calls additionally travel
//! through a sealed channel opened by a simulated attestation handshake
//! ([`attest`]).

pub mod access_control;
pub mod api;
pub mod attest;
pub mod auth;
pub mod client;
pub mod error;
pub mod names;
pub mod request_log;
pub mod stack;
pub mod storage;
pub mod tls;
pub mod writer_shield;

pub use auth::UserAuth;
pub use client::{AccessControlClient, AdminChannel, ClientError, StorageClient, WriterShieldClient};
pub use error::{ApiError, ErrorCode};

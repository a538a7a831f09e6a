//! Cryptographic core of an anonymous group file-sharing system.
//!
//! A trusted authority that knows every user's symmetric secret wraps each
//! per-file key once per reader ([`envelope`]), so readers recover it without
//! revealing who they are and without public-key operations. The authority
//! signs every package it lets through ([`signing`]), and readers verify that
//! signature before touching the envelope ([`reader`]).
//!
//! [`bbw`] holds the public-key baseline, [`metadata`] the sealed user and
//! group documents the authority persists on untrusted storage.

pub mod aead;
pub mod bbw;
pub mod content;
pub mod envelope;
pub mod keys;
pub mod metadata;
pub mod package;
pub mod reader;
pub mod signing;
pub mod token;

pub use content::{decrypt_content, encrypt_content};
pub use envelope::{
    build_envelope, build_envelope_indexed, compute_label, open_envelope, open_envelope_indexed,
    open_envelope_linear, open_fragment, seal_fragment, Envelope, EnvelopeMode, EnvelopeNonce,
    Fragment, Label, OpenTrace,
};
pub use keys::{FileKey, UserSecretKey};
pub use package::{frame_package, split_package, SignedPackage};
pub use signing::{sign_package, verify_package, Signature, TaSigningKey, VerificationKey};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("expected a {expected}-byte key, got {actual} bytes")]
    KeyLength { expected: usize, actual: usize },
    #[error("empty reader set")]
    EmptyReaderSet,
    #[error("not a recipient")]
    NotRecipient,
    #[error("envelope mode does not match the requested read path")]
    ModeMismatch,
    #[error("unauthenticated content")]
    BadSignature,
    #[error("content failed authentication")]
    ContentAuthentication,
    #[error("malformed input: {0}")]
    Malformed(String),
}

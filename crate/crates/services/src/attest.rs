//! Simulated attestation and the sealed admin channel.
//!
//! A service's measurement is a constant digest of its name and release
//! version. The administrator sends an X25519 public key to `/attest`; the
//! service answers with a quote carrying its measurement, its own ephemeral
//! public key and a report binding both keys. If the measurement is the one
//! the administrator expects, both sides derive the same channel key, and
//! every admin request and response body is sealed under it. Sequence
//! numbers inside each sealed request stop replays.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use asky_core::aead;
use hkdf::Hkdf;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use x25519_dalek::{EphemeralSecret, PublicKey};

use crate::error::{ApiError, ErrorCode};

pub const SESSION_HEADER: &str = "x-asky-session";
const MAX_SESSIONS: usize = 4096;
const REPLAY_WINDOW: u64 = 64;

/// The measurement a genuine build of `service` reports.
pub fn measurement(service: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"asky/measurement/v1\0");
    h.update(service.as_bytes());
    h.update(b"\0");
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.finalize().into()
}

fn report_data(measurement: &[u8; 32], client: &[u8; 32], service: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"asky/report/v1");
    h.update(measurement);
    h.update(client);
    h.update(service);
    h.finalize().into()
}

fn channel_key(shared: &[u8; 32], measurement: &[u8; 32], client: &[u8; 32], service: &[u8; 32]) -> [u8; 32] {
    let mut info = Vec::with_capacity(21 + 64);
    info.extend_from_slice(b"asky/admin-channel/v1");
    info.extend_from_slice(client);
    info.extend_from_slice(service);
    let mut key = [0u8; 32];
    Hkdf::<Sha256>::new(Some(measurement), shared)
        .expand(&info, &mut key)
        .expect("32 bytes is a valid HKDF length");
    key
}

fn request_aad(session: &[u8; 16], method: &str, path: &str) -> Vec<u8> {
    [b"asky/req/v1".as_slice(), session, method.as_bytes(), b"\0", path.as_bytes()].concat()
}

fn response_aad(session: &[u8; 16], method: &str, path: &str, seq: u64) -> Vec<u8> {
    [
        b"asky/resp/v1".as_slice(),
        session,
        method.as_bytes(),
        b"\0",
        path.as_bytes(),
        &seq.to_be_bytes(),
    ]
    .concat()
}

fn hex32(s: &str) -> Option<[u8; 32]> {
    hex::decode(s).ok()?.try_into().ok()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttestRequest {
    pub client_public: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Quote {
    pub session: String,
    pub measurement: String,
    pub service_public: String,
    pub report_data: String,
}

/// Sliding window over the last 64 sequence numbers.
#[derive(Default)]
struct ReplayWindow {
    highest: u64,
    seen: u64,
}

impl ReplayWindow {
    fn accept(&mut self, seq: u64) -> bool {
        if seq == 0 {
            return false;
        }
        if seq > self.highest {
            let shift = seq - self.highest;
            self.seen = if shift >= REPLAY_WINDOW { 0 } else { self.seen << shift };
            self.seen |= 1;
            self.highest = seq;
            return true;
        }
        let age = self.highest - seq;
        if age >= REPLAY_WINDOW || self.seen & (1 << age) != 0 {
            return false;
        }
        self.seen |= 1 << age;
        true
    }
}

struct ServerSession {
    key: [u8; 32],
    window: ReplayWindow,
    admin: bool,
}

/// An opened admin request.
#[derive(Debug)]
pub struct OpenedRequest {
    pub session: [u8; 16],
    pub seq: u64,
    pub body: Vec<u8>,
}

/// Server side of the channel: one entry per successful `/attest`.
pub struct Sessions {
    measurement: [u8; 32],
    inner: Mutex<(HashMap<[u8; 16], ServerSession>, VecDeque<[u8; 16]>)>,
}

impl Sessions {
    pub fn new(service: &str) -> Self {
        Self::with_measurement(measurement(service))
    }

    pub fn with_measurement(measurement: [u8; 32]) -> Self {
        Self {
            measurement,
            inner: Mutex::new((HashMap::new(), VecDeque::new())),
        }
    }

    pub fn measurement(&self) -> [u8; 32] {
        self.measurement
    }

    pub fn attest(&self, req: &AttestRequest) -> Result<Quote, ApiError> {
        let client = hex32(&req.client_public)
            .ok_or_else(|| ApiError::bad_request("client_public must be 32 hex bytes"))?;
        let secret = EphemeralSecret::random_from_rng(rand::rngs::OsRng);
        let service = PublicKey::from(&secret).to_bytes();
        let shared = secret.diffie_hellman(&PublicKey::from(client));
        if !shared.was_contributory() {
            return Err(ApiError::bad_request("degenerate client key"));
        }
        let key = channel_key(shared.as_bytes(), &self.measurement, &client, &service);
        let mut id = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut id);

        let mut guard = self.inner.lock().unwrap();
        let (map, order) = &mut *guard;
        if map.len() >= MAX_SESSIONS {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        map.insert(id, ServerSession { key, window: ReplayWindow::default(), admin: false });
        order.push_back(id);

        Ok(Quote {
            session: hex::encode(id),
            measurement: hex::encode(self.measurement),
            service_public: hex::encode(service),
            report_data: hex::encode(report_data(&self.measurement, &client, &service)),
        })
    }

    /// Authenticates and decrypts a request body, rejecting replays.
    pub fn open(&self, session_hex: &str, method: &str, path: &str, sealed: &[u8]) -> Result<OpenedRequest, ApiError> {
        let denied = || ApiError::unauthorized("invalid admin session");
        let session: [u8; 16] = hex::decode(session_hex)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(denied)?;
        let mut guard = self.inner.lock().unwrap();
        let s = guard.0.get_mut(&session).ok_or_else(denied)?;
        let plain = aead::open(&s.key, sealed, &request_aad(&session, method, path)).ok_or_else(denied)?;
        if plain.len() < 8 {
            return Err(denied());
        }
        let seq = u64::from_be_bytes(plain[..8].try_into().unwrap());
        if !s.window.accept(seq) {
            return Err(ApiError::unauthorized("replayed admin request"));
        }
        Ok(OpenedRequest { session, seq, body: plain[8..].to_vec() })
    }

    pub fn seal_response(&self, req: &OpenedRequest, method: &str, path: &str, body: &[u8]) -> Result<Vec<u8>, ApiError> {
        let guard = self.inner.lock().unwrap();
        let s = guard
            .0
            .get(&req.session)
            .ok_or_else(|| ApiError::unauthorized("admin session expired"))?;
        Ok(aead::seal(&s.key, body, &response_aad(&req.session, method, path, req.seq)))
    }

    pub fn grant_admin(&self, session: &[u8; 16]) {
        if let Some(s) = self.inner.lock().unwrap().0.get_mut(session) {
            s.admin = true;
        }
    }

    pub fn is_admin(&self, session: &[u8; 16]) -> bool {
        self.inner.lock().unwrap().0.get(session).is_some_and(|s| s.admin)
    }

    /// Drops every admin grant, e.g. after the service is re-provisioned.
    pub fn revoke_all_admin(&self) {
        for s in self.inner.lock().unwrap().0.values_mut() {
            s.admin = false;
        }
    }
}

/// Constant-time comparison of a presented admin credential.
pub fn credential_matches(expected: &[u8; 32], presented: &str) -> bool {
    match hex32(presented) {
        Some(p) => expected.ct_eq(&p).into(),
        None => false,
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AttestationError {
    #[error("measurement mismatch: expected {expected}, service reported {reported}")]
    MeasurementMismatch { expected: String, reported: String },
    #[error("malformed quote: {0}")]
    Malformed(&'static str),
    #[error("quote report does not bind the exchanged keys")]
    ReportMismatch,
}

impl From<AttestationError> for ApiError {
    fn from(e: AttestationError) -> Self {
        ApiError::new(ErrorCode::AttestationFailed, e.to_string())
    }
}

/// Administrator side of the handshake.
pub struct ClientHandshake {
    secret: EphemeralSecret,
    public: [u8; 32],
}

impl Default for ClientHandshake {
    fn default() -> Self {
        Self::new()
    }
}

impl ClientHandshake {
    pub fn new() -> Self {
        let secret = EphemeralSecret::random_from_rng(rand::rngs::OsRng);
        let public = PublicKey::from(&secret).to_bytes();
        Self { secret, public }
    }

    pub fn request(&self) -> AttestRequest {
        AttestRequest { client_public: hex::encode(self.public) }
    }

    /// Checks the quote against `expected` and derives the channel.
    pub fn finish(self, expected: &[u8; 32], quote: &Quote) -> Result<ChannelKeys, AttestationError> {
        let reported = hex32(&quote.measurement).ok_or(AttestationError::Malformed("measurement"))?;
        if !bool::from(reported.ct_eq(expected)) {
            return Err(AttestationError::MeasurementMismatch {
                expected: hex::encode(expected),
                reported: quote.measurement.clone(),
            });
        }
        let service = hex32(&quote.service_public).ok_or(AttestationError::Malformed("service_public"))?;
        let report = hex32(&quote.report_data).ok_or(AttestationError::Malformed("report_data"))?;
        if report != report_data(expected, &self.public, &service) {
            return Err(AttestationError::ReportMismatch);
        }
        let session: [u8; 16] = hex::decode(&quote.session)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or(AttestationError::Malformed("session"))?;
        let shared = self.secret.diffie_hellman(&PublicKey::from(service));
        Ok(ChannelKeys {
            session,
            key: channel_key(shared.as_bytes(), expected, &self.public, &service),
            next_seq: AtomicU64::new(1),
        })
    }
}

/// Client half of an established channel.
pub struct ChannelKeys {
    session: [u8; 16],
    key: [u8; 32],
    next_seq: AtomicU64,
}

impl ChannelKeys {
    pub fn session_hex(&self) -> String {
        hex::encode(self.session)
    }

    pub fn seal_request(&self, method: &str, path: &str, body: &[u8]) -> (u64, Vec<u8>) {
        let seq = self.next_seq.fetch_add(1, Ordering::Relaxed);
        let mut plain = Vec::with_capacity(8 + body.len());
        plain.extend_from_slice(&seq.to_be_bytes());
        plain.extend_from_slice(body);
        (seq, aead::seal(&self.key, &plain, &request_aad(&self.session, method, path)))
    }

    pub fn open_response(&self, method: &str, path: &str, seq: u64, sealed: &[u8]) -> Option<Vec<u8>> {
        aead::open(&self.key, sealed, &response_aad(&self.session, method, path, seq))
    }

    /// Persistable form: session id, key and next sequence number.
    pub fn export(&self) -> String {
        format!(
            "{}:{}:{}",
            hex::encode(self.session),
            hex::encode(self.key),
            self.next_seq.load(Ordering::Relaxed)
        )
    }

    pub fn import(s: &str) -> Option<Self> {
        let mut it = s.trim().split(':');
        let session = hex::decode(it.next()?).ok()?.try_into().ok()?;
        let key = hex32(it.next()?)?;
        let next = it.next()?.parse().ok()?;
        it.next().is_none().then(|| ChannelKeys { session, key, next_seq: AtomicU64::new(next) })
    }
}

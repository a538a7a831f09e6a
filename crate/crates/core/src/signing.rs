//! Trusted-authority signatures over packages.
//!
//! Ed25519 over `DOMAIN || SHA-256(package)`. Signing the digest lets the
//! proxied path (which sees the package) and the token path (which only sees
//! a client-supplied digest) produce identical stored objects.

use ed25519_dalek::Signer;
use sha2::{Digest, Sha256};

use crate::package::SignedPackage;
use crate::Error;

pub const SIGNATURE_LEN: usize = 64;
pub const DIGEST_LEN: usize = 32;
const DOMAIN: &[u8] = b"asky/package-digest/v1";

pub type PackageDigest = [u8; DIGEST_LEN];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature(ed25519_dalek::Signature);

impl Signature {
    pub fn from_bytes(bytes: &[u8; SIGNATURE_LEN]) -> Self {
        Self(ed25519_dalek::Signature::from_bytes(bytes))
    }

    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        self.0.to_bytes()
    }

    pub fn from_hex(s: &str) -> Result<Self, Error> {
        let b = hex::decode(s.trim()).map_err(|e| Error::Malformed(e.to_string()))?;
        let b: [u8; SIGNATURE_LEN] = b
            .as_slice()
            .try_into()
            .map_err(|_| Error::Malformed("signature must be 64 bytes".into()))?;
        Ok(Self::from_bytes(&b))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

/// The long-term signing key `sign_TA`.
#[derive(Clone)]
pub struct TaSigningKey(ed25519_dalek::SigningKey);

impl std::fmt::Debug for TaSigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("TaSigningKey").field(&self.verification_key()).finish()
    }
}

impl TaSigningKey {
    pub fn generate() -> Self {
        Self(ed25519_dalek::SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_seed(seed: &[u8; 32]) -> Self {
        Self(ed25519_dalek::SigningKey::from_bytes(seed))
    }

    pub fn seed(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.0.verifying_key())
    }

    pub fn sign_digest(&self, digest: &PackageDigest) -> Signature {
        Signature(self.0.sign(&signed_message(digest)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerificationKey(ed25519_dalek::VerifyingKey);

impl VerificationKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, Error> {
        ed25519_dalek::VerifyingKey::from_bytes(bytes)
            .map(Self)
            .map_err(|_| Error::Malformed("invalid verification key".into()))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_hex(s: &str) -> Result<Self, Error> {
        let b = hex::decode(s.trim()).map_err(|e| Error::Malformed(e.to_string()))?;
        let b: [u8; 32] = b
            .as_slice()
            .try_into()
            .map_err(|_| Error::Malformed("verification key must be 32 bytes".into()))?;
        Self::from_bytes(&b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn verify_digest(&self, digest: &PackageDigest, sig: &Signature) -> Result<(), Error> {
        self.0
            .verify_strict(&signed_message(digest), &sig.0)
            .map_err(|_| Error::BadSignature)
    }
}

fn signed_message(digest: &PackageDigest) -> Vec<u8> {
    let mut m = Vec::with_capacity(DOMAIN.len() + DIGEST_LEN);
    m.extend_from_slice(DOMAIN);
    m.extend_from_slice(digest);
    m
}

pub fn package_digest(package: &[u8]) -> PackageDigest {
    Sha256::digest(package).into()
}

pub fn sign_package(key: &TaSigningKey, package: Vec<u8>) -> SignedPackage {
    let signature = key.sign_digest(&package_digest(&package));
    SignedPackage { package, signature }
}

pub fn verify_package(key: &VerificationKey, signed: &SignedPackage) -> Result<(), Error> {
    key.verify_digest(&package_digest(&signed.package), &signed.signature)
}

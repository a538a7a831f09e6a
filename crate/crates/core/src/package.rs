//! Package framing and the stored object layout.
//!
//! ```text
//! package : envelope_len:u32 | envelope | cipher
//! object  : package | signature:64 | trailer_len:u16 (= 64)
//! ```

use crate::envelope::Envelope;
use crate::signing::{Signature, SIGNATURE_LEN};
use crate::Error;

const LEN_PREFIX: usize = 4;
const TRAILER_SUFFIX: usize = 2;

pub fn frame_package(envelope: &Envelope, cipher: &[u8]) -> Vec<u8> {
    let env = envelope.to_bytes();
    let mut out = Vec::with_capacity(LEN_PREFIX + env.len() + cipher.len());
    out.extend_from_slice(&(env.len() as u32).to_be_bytes());
    out.extend_from_slice(&env);
    out.extend_from_slice(cipher);
    out
}

/// Splits a package without decoding the envelope.
pub fn split_package_raw(package: &[u8]) -> Result<(&[u8], &[u8]), Error> {
    if package.len() < LEN_PREFIX {
        return Err(Error::Malformed("truncated package length prefix".into()));
    }
    let env_len = u32::from_be_bytes(package[..LEN_PREFIX].try_into().unwrap()) as usize;
    let rest = &package[LEN_PREFIX..];
    if env_len > rest.len() {
        return Err(Error::Malformed(format!(
            "envelope length {env_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    Ok(rest.split_at(env_len))
}

pub fn split_package(package: &[u8]) -> Result<(Envelope, &[u8]), Error> {
    let (env, cipher) = split_package_raw(package)?;
    Ok((Envelope::from_bytes(env)?, cipher))
}

/// A package together with the trusted authority's signature over it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedPackage {
    pub package: Vec<u8>,
    pub signature: Signature,
}

impl SignedPackage {
    /// Stored object bytes: `package || sigma || u16 trailer length`.
    pub fn to_object_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.package.len() + SIGNATURE_LEN + TRAILER_SUFFIX);
        out.extend_from_slice(&self.package);
        out.extend_from_slice(&self.signature.to_bytes());
        out.extend_from_slice(&(SIGNATURE_LEN as u16).to_be_bytes());
        out
    }

    pub fn from_object_bytes(object: &[u8]) -> Result<Self, Error> {
        if object.len() < TRAILER_SUFFIX {
            return Err(Error::Malformed("object too short for trailer".into()));
        }
        let (head, suffix) = object.split_at(object.len() - TRAILER_SUFFIX);
        let trailer_len = u16::from_be_bytes(suffix.try_into().unwrap()) as usize;
        if trailer_len != SIGNATURE_LEN {
            return Err(Error::Malformed(format!(
                "unexpected signature trailer length {trailer_len}"
            )));
        }
        if head.len() < SIGNATURE_LEN {
            return Err(Error::Malformed("object too short for signature".into()));
        }
        let (package, sig) = head.split_at(head.len() - SIGNATURE_LEN);
        Ok(SignedPackage {
            package: package.to_vec(),
            signature: Signature::from_bytes(sig.try_into().unwrap()),
        })
    }
}

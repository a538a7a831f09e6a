//! Scoped, expiring upload tokens.
//!
//! A token authorizes one `PUT` of one object until `expires_at` (unix
//! seconds). The MAC key is derived from the storage credential secret, so
//! the object store can check tokens minted by the write proxy without any
//! shared state.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::Error;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UploadToken {
    pub bucket: String,
    pub key: String,
    pub expires_at: u64,
    pub mac: [u8; 32],
}

impl UploadToken {
    /// Query-string form `<expires_at>.<hex mac>`; the scope travels in the path.
    pub fn to_query_value(&self) -> String {
        format!("{}.{}", self.expires_at, hex::encode(self.mac))
    }

    pub fn from_query_value(bucket: &str, key: &str, value: &str) -> Result<Self, Error> {
        let (exp, mac) = value
            .split_once('.')
            .ok_or_else(|| Error::Malformed("token must be <expiry>.<mac>".into()))?;
        let expires_at = exp
            .parse()
            .map_err(|_| Error::Malformed("token expiry is not an integer".into()))?;
        let mac: [u8; 32] = hex::decode(mac)
            .ok()
            .and_then(|m| m.try_into().ok())
            .ok_or_else(|| Error::Malformed("token mac must be 32 hex bytes".into()))?;
        Ok(Self {
            bucket: bucket.to_owned(),
            key: key.to_owned(),
            expires_at,
            mac,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("token expired")]
    Expired,
    #[error("token scope does not match the target object")]
    ScopeMismatch,
    #[error("token signature invalid")]
    BadMac,
}

#[derive(Clone)]
pub struct TokenAuthority {
    key: [u8; 32],
}

impl TokenAuthority {
    pub fn from_storage_secret(secret: &[u8]) -> Self {
        let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
        mac.update(b"asky/upload-token/v1");
        Self {
            key: mac.finalize().into_bytes().into(),
        }
    }

    fn mac(&self, bucket: &str, key: &str, expires_at: u64) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(&self.key).unwrap();
        for part in [bucket.as_bytes(), key.as_bytes()] {
            mac.update(&(part.len() as u32).to_be_bytes());
            mac.update(part);
        }
        mac.update(&expires_at.to_be_bytes());
        mac.finalize().into_bytes().into()
    }

    pub fn issue(&self, bucket: &str, key: &str, expires_at: u64) -> UploadToken {
        UploadToken {
            bucket: bucket.to_owned(),
            key: key.to_owned(),
            expires_at,
            mac: self.mac(bucket, key, expires_at),
        }
    }

    /// Valid iff the MAC verifies, the scope is `(bucket, key)` and `now < expires_at`.
    pub fn verify(
        &self,
        token: &UploadToken,
        bucket: &str,
        key: &str,
        now: u64,
    ) -> Result<(), TokenError> {
        if token.bucket != bucket || token.key != key {
            return Err(TokenError::ScopeMismatch);
        }
        let expected = self.mac(&token.bucket, &token.key, token.expires_at);
        if !bool::from(expected.ct_eq(&token.mac)) {
            return Err(TokenError::BadMac);
        }
        if now >= token.expires_at {
            return Err(TokenError::Expired);
        }
        Ok(())
    }
}

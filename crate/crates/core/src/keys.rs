//! Fixed-size symmetric secrets.

use std::fmt;

use rand::RngCore;
use subtle::ConstantTimeEq;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::Error;

/// Length in bytes of every symmetric key handled by the system.
pub const KEY_LEN: usize = 32;

macro_rules! secret_key {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Zeroize, ZeroizeOnDrop)]
        pub struct $name([u8; KEY_LEN]);

        impl $name {
            /// Draws a fresh key from the thread-local CSPRNG.
            pub fn random() -> Self {
                let mut bytes = [0u8; KEY_LEN];
                rand::thread_rng().fill_bytes(&mut bytes);
                Self(bytes)
            }

            pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, Error> {
                let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| Error::KeyLength {
                    expected: KEY_LEN,
                    actual: bytes.len(),
                })?;
                Ok(Self(bytes))
            }

            pub fn from_hex(s: &str) -> Result<Self, Error> {
                let bytes = hex::decode(s.trim()).map_err(|e| Error::Malformed(e.to_string()))?;
                Self::from_slice(&bytes)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
                &self.0
            }
        }

        impl PartialEq for $name {
            fn eq(&self, other: &Self) -> bool {
                self.0.ct_eq(&other.0).into()
            }
        }

        impl Eq for $name {}

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(concat!(stringify!($name), "(..)"))
            }
        }
    };
}

secret_key!(
    /// Secret shared between one user and the trusted authority.
    UserSecretKey
);

secret_key!(
    /// Per-write content key, wrapped once per reader inside an envelope.
    FileKey
);

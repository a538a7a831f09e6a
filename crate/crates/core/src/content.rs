//! Single-shot content encryption under a file key.

use crate::aead;
use crate::keys::FileKey;
use crate::Error;

/// Ciphertext is `iv:12 || ct || tag:16`, i.e. plaintext length + 28.
pub fn encrypt_content(fk: &FileKey, plaintext: &[u8]) -> Vec<u8> {
    aead::seal(fk.as_bytes(), plaintext, &[])
}

pub fn decrypt_content(fk: &FileKey, cipher: &[u8]) -> Result<Vec<u8>, Error> {
    aead::open(fk.as_bytes(), cipher, &[]).ok_or(Error::ContentAuthentication)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn round_trip_various_sizes() {
        let fk = FileKey::random();
        for size in [0usize, 1024, 1 << 20] {
            let mut p = vec![0u8; size];
            rand::thread_rng().fill_bytes(&mut p);
            let c = encrypt_content(&fk, &p);
            assert_eq!(c.len(), size + 28);
            assert_eq!(decrypt_content(&fk, &c).unwrap(), p);
        }
    }

    #[test]
    fn empty_plaintext_is_pure_overhead() {
        assert_eq!(encrypt_content(&FileKey::random(), b"").len(), 28);
    }

    #[test]
    fn wrong_key_fails() {
        let c = encrypt_content(&FileKey::random(), b"secret");
        assert_eq!(
            decrypt_content(&FileKey::random(), &c),
            Err(Error::ContentAuthentication)
        );
    }
}

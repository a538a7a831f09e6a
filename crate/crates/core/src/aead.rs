//! AES-256-GCM with a random 96-bit IV stored in front of the ciphertext.

#![allow(deprecated)] // generic-array 0.14 types are still what aes-gcm 0.10 takes

use aes_gcm::aead::generic_array::GenericArray;
use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, KeyInit};
use rand::RngCore;

pub const IV_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Bytes added to a plaintext by [`seal`].
pub const OVERHEAD: usize = IV_LEN + TAG_LEN;

pub(crate) fn cipher(key: &[u8; 32]) -> Aes256Gcm {
    Aes256Gcm::new(GenericArray::from_slice(key))
}

/// Encrypts `buf` in place and returns the tag.
pub(crate) fn encrypt_detached(
    cipher: &Aes256Gcm,
    iv: &[u8; IV_LEN],
    aad: &[u8],
    buf: &mut [u8],
) -> [u8; TAG_LEN] {
    cipher
        .encrypt_in_place_detached(GenericArray::from_slice(iv), aad, buf)
        .expect("plaintext within AES-GCM limits")
        .into()
}

/// Decrypts `buf` in place; false if the tag does not verify.
pub(crate) fn decrypt_detached(
    cipher: &Aes256Gcm,
    iv: &[u8],
    aad: &[u8],
    buf: &mut [u8],
    tag: &[u8],
) -> bool {
    iv.len() == IV_LEN
        && tag.len() == TAG_LEN
        && cipher
            .decrypt_in_place_detached(
                GenericArray::from_slice(iv),
                aad,
                buf,
                GenericArray::from_slice(tag),
            )
            .is_ok()
}

/// Returns `iv || ct || tag`.
pub fn seal(key: &[u8; 32], plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(plaintext.len() + OVERHEAD);
    let mut iv = [0u8; IV_LEN];
    rand::thread_rng().fill_bytes(&mut iv);
    out.extend_from_slice(&iv);
    out.extend_from_slice(plaintext);
    let tag = encrypt_detached(&cipher(key), &iv, aad, &mut out[IV_LEN..]);
    out.extend_from_slice(&tag);
    out
}

/// Inverse of [`seal`]; `None` on any authentication or length failure.
pub fn open(key: &[u8; 32], sealed: &[u8], aad: &[u8]) -> Option<Vec<u8>> {
    if sealed.len() < OVERHEAD {
        return None;
    }
    let (iv, rest) = sealed.split_at(IV_LEN);
    let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
    let mut buf = ct.to_vec();
    decrypt_detached(&cipher(key), iv, aad, &mut buf, tag).then_some(buf)
}

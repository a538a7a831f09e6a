//! The anonymous read path: verify, split, open, decrypt.
//!
//! Readers only need their own key and the authority's verification key;
//! nothing here talks to a service.

use crate::content::decrypt_content;
use crate::envelope::{open_envelope_traced, OpenTrace};
use crate::keys::{FileKey, UserSecretKey};
use crate::package::{split_package, SignedPackage};
use crate::signing::{verify_package, VerificationKey};
use crate::Error;

/// Recovers the file key from a stored object. The signature is checked
/// before any envelope work, so `trace` stays zero for forged objects.
pub fn recover_file_key(
    vk: &VerificationKey,
    usk: &UserSecretKey,
    object: &[u8],
    trace: &mut OpenTrace,
) -> Result<(FileKey, Vec<u8>), Error> {
    let signed = SignedPackage::from_object_bytes(object)?;
    verify_package(vk, &signed)?;
    let (envelope, cipher) = split_package(&signed.package)?;
    let fk = open_envelope_traced(usk, &envelope, trace)?;
    Ok((fk, cipher.to_vec()))
}

pub fn read_object(
    vk: &VerificationKey,
    usk: &UserSecretKey,
    object: &[u8],
    trace: &mut OpenTrace,
) -> Result<Vec<u8>, Error> {
    let (fk, cipher) = recover_file_key(vk, usk, object, trace)?;
    decrypt_content(&fk, &cipher)
}

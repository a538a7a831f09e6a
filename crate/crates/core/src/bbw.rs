//! Barth–Boneh–Waters private broadcast encryption, used as a baseline.
//!
//! Every recipient block is an ECIES ciphertext of `vk || fk`, where `vk` is a
//! one-time Ed25519 verification key generated per encryption and the whole
//! body is signed under the matching one-time signing key. In indexed mode a
//! fresh scalar `r` is drawn, `R = r·G` is published, and each block carries
//! the label `SHA-224(x(r·pk))`, which the recipient recomputes as
//! `SHA-224(x(sk·R))`.
//!
//! ECIES profile: curve P-521 (256-bit security), ephemeral key per block,
//! `HKDF-SHA256(salt = compressed ephemeral point, ikm = x(e·pk))` expanded to
//! an AES-256-GCM key and IV. Per-recipient block sizes:
//!
//! | part                  | standard | indexed |
//! |-----------------------|---------:|--------:|
//! | label                 |        - |      28 |
//! | ephemeral point (SEC1 compressed) | 67 | 67 |
//! | `vk || fk` ciphertext |       64 |      64 |
//! | GCM tag               |       16 |      16 |
//! | **total**             |  **147** | **175** |
//!
//! Wire format: `0x01 | mode | count:u32 | [R:67] | blocks | signature:64`.

use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use p521::elliptic_curve::sec1::ToEncodedPoint;
pub use p521::{PublicKey, SecretKey};
use rand::rngs::OsRng;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha224, Sha256};

use crate::aead;
use crate::keys::{FileKey, KEY_LEN};
use crate::Error;

pub const POINT_LEN: usize = 67;
pub const LABEL_LEN: usize = 28;
const SEALED_LEN: usize = 2 * KEY_LEN + aead::TAG_LEN;
pub const STANDARD_BLOCK_LEN: usize = POINT_LEN + SEALED_LEN;
pub const INDEXED_BLOCK_LEN: usize = LABEL_LEN + STANDARD_BLOCK_LEN;
const SIG_LEN: usize = 64;
const VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BbwMode {
    Standard,
    Indexed,
}

#[derive(Clone, Debug)]
pub struct BbwKeyPair {
    pub public_key: PublicKey,
    pub secret_key: SecretKey,
}

pub fn bbw_keygen() -> BbwKeyPair {
    let secret_key = SecretKey::random(&mut OsRng);
    BbwKeyPair {
        public_key: secret_key.public_key(),
        secret_key,
    }
}

pub fn encode_point(pk: &PublicKey) -> [u8; POINT_LEN] {
    pk.to_encoded_point(true)
        .as_bytes()
        .try_into()
        .expect("compressed P-521 point is 67 bytes")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BbwBlock {
    pub label: Option<[u8; LABEL_LEN]>,
    pub ephemeral: [u8; POINT_LEN],
    pub sealed: [u8; SEALED_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BbwCiphertext {
    pub mode: BbwMode,
    /// `R = r·G`, present in indexed mode.
    pub label_point: Option<[u8; POINT_LEN]>,
    pub blocks: Vec<BbwBlock>,
    pub signature: [u8; SIG_LEN],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BbwTrace {
    pub pke_decryptions: usize,
    pub label_comparisons: usize,
}

fn shared_x(sk: &SecretKey, pk: &PublicKey) -> [u8; 66] {
    let shared = p521::ecdh::diffie_hellman(sk.to_nonzero_scalar(), pk.as_affine());
    let mut out = [0u8; 66];
    out.copy_from_slice(shared.raw_secret_bytes());
    out
}

fn ecies_keys(ephemeral: &[u8; POINT_LEN], shared: &[u8; 66]) -> ([u8; 32], [u8; 12]) {
    let hk = Hkdf::<Sha256>::new(Some(ephemeral), shared);
    let mut okm = [0u8; 44];
    hk.expand(b"asky/bbw-ecies/v1", &mut okm).unwrap();
    (okm[..32].try_into().unwrap(), okm[32..].try_into().unwrap())
}

fn label_of(shared: &[u8; 66]) -> [u8; LABEL_LEN] {
    let mut h = Sha224::new();
    h.update(b"asky/bbw-label/v1");
    h.update(shared);
    h.finalize().into()
}

fn ecies_seal(pk: &PublicKey, plaintext: &[u8; 2 * KEY_LEN]) -> ([u8; POINT_LEN], [u8; SEALED_LEN]) {
    let eph = SecretKey::random(&mut OsRng);
    let eph_point = encode_point(&eph.public_key());
    let (key, iv) = ecies_keys(&eph_point, &shared_x(&eph, pk));
    let mut buf = *plaintext;
    let tag = aead::encrypt_detached(&aead::cipher(&key), &iv, &[], &mut buf);
    let mut sealed = [0u8; SEALED_LEN];
    sealed[..2 * KEY_LEN].copy_from_slice(&buf);
    sealed[2 * KEY_LEN..].copy_from_slice(&tag);
    (eph_point, sealed)
}

fn ecies_open(sk: &SecretKey, block: &BbwBlock) -> Option<[u8; 2 * KEY_LEN]> {
    let eph = PublicKey::from_sec1_bytes(&block.ephemeral).ok()?;
    let (key, iv) = ecies_keys(&block.ephemeral, &shared_x(sk, &eph));
    let mut buf: [u8; 2 * KEY_LEN] = block.sealed[..2 * KEY_LEN].try_into().unwrap();
    let tag = &block.sealed[2 * KEY_LEN..];
    aead::decrypt_detached(&aead::cipher(&key), &iv, &[], &mut buf, tag).then_some(buf)
}

pub fn bbw_encrypt(
    recipients: &[PublicKey],
    fk: &FileKey,
    mode: BbwMode,
) -> Result<BbwCiphertext, Error> {
    if recipients.is_empty() {
        return Err(Error::EmptyReaderSet);
    }
    let one_time = ed25519_dalek::SigningKey::generate(&mut OsRng);
    let mut plaintext = [0u8; 2 * KEY_LEN];
    plaintext[..KEY_LEN].copy_from_slice(one_time.verifying_key().as_bytes());
    plaintext[KEY_LEN..].copy_from_slice(fk.as_bytes());

    let label_secret = (mode == BbwMode::Indexed).then(|| SecretKey::random(&mut OsRng));
    let mut blocks: Vec<BbwBlock> = recipients
        .iter()
        .map(|pk| {
            let (ephemeral, sealed) = ecies_seal(pk, &plaintext);
            BbwBlock {
                label: label_secret.as_ref().map(|r| label_of(&shared_x(r, pk))),
                ephemeral,
                sealed,
            }
        })
        .collect();
    match mode {
        BbwMode::Standard => blocks.shuffle(&mut OsRng),
        BbwMode::Indexed => blocks.sort_by(|a, b| a.label.cmp(&b.label)),
    }
    let mut ct = BbwCiphertext {
        mode,
        label_point: label_secret.map(|r| encode_point(&r.public_key())),
        blocks,
        signature: [0u8; SIG_LEN],
    };
    ct.signature = one_time.sign(&ct.body_bytes()).to_bytes();
    Ok(ct)
}

pub fn bbw_decrypt(sk: &SecretKey, ct: &BbwCiphertext) -> Result<FileKey, Error> {
    bbw_decrypt_traced(sk, ct, &mut BbwTrace::default())
}

pub fn bbw_decrypt_traced(
    sk: &SecretKey,
    ct: &BbwCiphertext,
    trace: &mut BbwTrace,
) -> Result<FileKey, Error> {
    let opened = match ct.mode {
        BbwMode::Standard => ct.blocks.iter().find_map(|b| {
            trace.pke_decryptions += 1;
            ecies_open(sk, b)
        }),
        BbwMode::Indexed => {
            let point = ct
                .label_point
                .ok_or_else(|| Error::Malformed("indexed ciphertext without R".into()))?;
            let r = PublicKey::from_sec1_bytes(&point)
                .map_err(|_| Error::Malformed("invalid label point".into()))?;
            let label = Some(label_of(&shared_x(sk, &r)));
            let start = ct.blocks.partition_point(|b| {
                trace.label_comparisons += 1;
                b.label < label
            });
            ct.blocks[start..]
                .iter()
                .take_while(|b| {
                    trace.label_comparisons += 1;
                    b.label == label
                })
                .find_map(|b| {
                    trace.pke_decryptions += 1;
                    ecies_open(sk, b)
                })
        }
    };
    let plaintext = opened.ok_or(Error::NotRecipient)?;
    let vk = ed25519_dalek::VerifyingKey::from_bytes(plaintext[..KEY_LEN].try_into().unwrap())
        .map_err(|_| Error::BadSignature)?;
    let sig = ed25519_dalek::Signature::from_bytes(&ct.signature);
    vk.verify(&ct.body_bytes(), &sig).map_err(|_| Error::BadSignature)?;
    Ok(FileKey::from_bytes(plaintext[KEY_LEN..].try_into().unwrap()))
}

impl BbwCiphertext {
    pub fn per_member_len(mode: BbwMode) -> usize {
        match mode {
            BbwMode::Standard => STANDARD_BLOCK_LEN,
            BbwMode::Indexed => INDEXED_BLOCK_LEN,
        }
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            6 + POINT_LEN + self.blocks.len() * Self::per_member_len(self.mode),
        );
        out.push(VERSION);
        out.push(match self.mode {
            BbwMode::Standard => 0,
            BbwMode::Indexed => 1,
        });
        out.extend_from_slice(&(self.blocks.len() as u32).to_be_bytes());
        if let Some(r) = &self.label_point {
            out.extend_from_slice(r);
        }
        for b in &self.blocks {
            if let Some(l) = &b.label {
                out.extend_from_slice(l);
            }
            out.extend_from_slice(&b.ephemeral);
            out.extend_from_slice(&b.sealed);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let bad = |m: &str| Error::Malformed(m.to_owned());
        if bytes.len() < 6 + SIG_LEN || bytes[0] != VERSION {
            return Err(bad("bad BBW header"));
        }
        let mode = match bytes[1] {
            0 => BbwMode::Standard,
            1 => BbwMode::Indexed,
            _ => return Err(bad("bad BBW mode")),
        };
        let count = u32::from_be_bytes(bytes[2..6].try_into().unwrap()) as u64;
        let header = 6 + if mode == BbwMode::Indexed { POINT_LEN } else { 0 };
        let block_len = Self::per_member_len(mode);
        if bytes.len() as u64 != header as u64 + count * block_len as u64 + SIG_LEN as u64 {
            return Err(bad("BBW length mismatch"));
        }
        let label_point = (mode == BbwMode::Indexed).then(|| bytes[6..header].try_into().unwrap());
        let body_end = bytes.len() - SIG_LEN;
        let blocks = bytes[header..body_end]
            .chunks_exact(block_len)
            .map(|c| {
                let (label, rest) = match mode {
                    BbwMode::Standard => (None, c),
                    BbwMode::Indexed => (Some(c[..LABEL_LEN].try_into().unwrap()), &c[LABEL_LEN..]),
                };
                BbwBlock {
                    label,
                    ephemeral: rest[..POINT_LEN].try_into().unwrap(),
                    sealed: rest[POINT_LEN..].try_into().unwrap(),
                }
            })
            .collect();
        Ok(BbwCiphertext {
            mode,
            label_point,
            blocks,
            signature: bytes[body_end..].try_into().unwrap(),
        })
    }
}

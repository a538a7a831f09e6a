//! Anonymous key envelopes.
//!
//! An envelope wraps one [`FileKey`] once per reader under that reader's
//! [`UserSecretKey`]. Fragments carry no recipient identifier: in linear mode a
//! reader finds its fragment by trial decryption, in indexed mode by binary
//! search over salted key digests.
//!
//! Wire layout (all integers big-endian):
//!
//! ```text
//! linear : 0x01 | 0x00 | count:u32 | count * (iv:12 | ct:32 | tag:16)
//! indexed: 0x01 | 0x01 | count:u32 | nonce:16 | count * (label:28 | iv:12 | ct:32 | tag:16)
//! ```

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::RngCore;
use sha2::{Digest, Sha224};

use crate::aead::{self, IV_LEN, TAG_LEN};
use crate::keys::{FileKey, UserSecretKey, KEY_LEN};
use crate::Error;

pub const FORMAT_VERSION: u8 = 0x01;
pub const FRAGMENT_LEN: usize = IV_LEN + KEY_LEN + TAG_LEN;
pub const LABEL_LEN: usize = 28;
pub const NONCE_LEN: usize = 16;
pub const INDEXED_ENTRY_LEN: usize = LABEL_LEN + FRAGMENT_LEN;
pub const LINEAR_HEADER_LEN: usize = 6;
pub const INDEXED_HEADER_LEN: usize = LINEAR_HEADER_LEN + NONCE_LEN;

/// One reader's wrapped copy of the file key.
///
/// Field order matches the wire order, so the derived `Ord` is the
/// lexicographic order of the serialized bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fragment {
    pub iv: [u8; IV_LEN],
    pub ct: [u8; KEY_LEN],
    pub tag: [u8; TAG_LEN],
}

impl Fragment {
    pub fn to_bytes(&self) -> [u8; FRAGMENT_LEN] {
        let mut out = [0u8; FRAGMENT_LEN];
        out[..IV_LEN].copy_from_slice(&self.iv);
        out[IV_LEN..IV_LEN + KEY_LEN].copy_from_slice(&self.ct);
        out[IV_LEN + KEY_LEN..].copy_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8; FRAGMENT_LEN]) -> Self {
        let mut f = Fragment {
            iv: [0; IV_LEN],
            ct: [0; KEY_LEN],
            tag: [0; TAG_LEN],
        };
        f.iv.copy_from_slice(&bytes[..IV_LEN]);
        f.ct.copy_from_slice(&bytes[IV_LEN..IV_LEN + KEY_LEN]);
        f.tag.copy_from_slice(&bytes[IV_LEN + KEY_LEN..]);
        f
    }
}

/// SHA-224 digest of `usk || nonce`; locates a reader's fragment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub [u8; LABEL_LEN]);

/// Per-envelope public salt for labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvelopeNonce(pub [u8; NONCE_LEN]);

impl EnvelopeNonce {
    pub fn random() -> Self {
        let mut n = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut n);
        Self(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexedFragment {
    pub label: Label,
    pub fragment: Fragment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvelopeMode {
    Linear,
    Indexed,
}

impl EnvelopeMode {
    pub fn as_byte(self) -> u8 {
        match self {
            EnvelopeMode::Linear => 0x00,
            EnvelopeMode::Indexed => 0x01,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(EnvelopeMode::Linear),
            0x01 => Some(EnvelopeMode::Indexed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Envelope {
    Linear(Vec<Fragment>),
    /// Entries are strictly ascending by `(label, fragment)`.
    Indexed {
        nonce: EnvelopeNonce,
        entries: Vec<IndexedFragment>,
    },
}

/// Work performed while opening an envelope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpenTrace {
    pub decryptions: usize,
    pub label_comparisons: usize,
}

fn seal_with_iv(usk: &UserSecretKey, fk: &FileKey, iv: [u8; IV_LEN]) -> Fragment {
    let mut ct = *fk.as_bytes();
    let tag = aead::encrypt_detached(&aead::cipher(usk.as_bytes()), &iv, &[], &mut ct);
    Fragment { iv, ct, tag }
}

fn random_ivs(n: usize) -> Vec<[u8; IV_LEN]> {
    let mut ivs = vec![[0u8; IV_LEN]; n];
    rand::thread_rng().fill_bytes(ivs.as_flattened_mut());
    ivs
}

/// Wraps `fk` under `usk` with a fresh IV.
pub fn seal_fragment(usk: &UserSecretKey, fk: &FileKey) -> Fragment {
    let mut iv = [0u8; IV_LEN];
    rand::thread_rng().fill_bytes(&mut iv);
    seal_with_iv(usk, fk, iv)
}

/// Returns `None` when the fragment was not sealed under `usk`.
pub fn open_fragment(usk: &UserSecretKey, fragment: &Fragment) -> Option<FileKey> {
    let mut buf = fragment.ct;
    let cipher = aead::cipher(usk.as_bytes());
    aead::decrypt_detached(&cipher, &fragment.iv, &[], &mut buf, &fragment.tag)
        .then(|| FileKey::from_bytes(buf))
}

pub fn compute_label(usk: &UserSecretKey, nonce: &EnvelopeNonce) -> Label {
    let mut h = Sha224::new();
    h.update(usk.as_bytes());
    h.update(nonce.0);
    Label(h.finalize().into())
}

/// Linear envelope: one fragment per member, in a fresh random order.
pub fn build_envelope(member_keys: &[UserSecretKey], fk: &FileKey) -> Result<Envelope, Error> {
    if member_keys.is_empty() {
        return Err(Error::EmptyReaderSet);
    }
    let ivs = random_ivs(member_keys.len());
    let mut fragments: Vec<Fragment> = member_keys
        .iter()
        .zip(ivs)
        .map(|(usk, iv)| seal_with_iv(usk, fk, iv))
        .collect();
    fragments.shuffle(&mut rand::thread_rng());
    Ok(Envelope::Linear(fragments))
}

/// Indexed envelope: fragments sorted by their salted key label.
pub fn build_envelope_indexed(
    member_keys: &[UserSecretKey],
    fk: &FileKey,
) -> Result<Envelope, Error> {
    build_envelope_indexed_with_nonce(member_keys, fk, EnvelopeNonce::random())
}

pub(crate) fn build_envelope_indexed_with_nonce(
    member_keys: &[UserSecretKey],
    fk: &FileKey,
    nonce: EnvelopeNonce,
) -> Result<Envelope, Error> {
    if member_keys.is_empty() {
        return Err(Error::EmptyReaderSet);
    }
    let labels: Vec<Label> = member_keys.iter().map(|usk| compute_label(usk, &nonce)).collect();

    // Order members by label first, then seal straight into the output.
    let mut order: Vec<(u64, u32)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (u64::from_be_bytes(l.0[..8].try_into().unwrap()), i as u32))
        .collect();
    order.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| labels[a.1 as usize].cmp(&labels[b.1 as usize]))
    });
    let ivs = random_ivs(member_keys.len());
    let mut entries: Vec<IndexedFragment> = order
        .iter()
        .zip(ivs)
        .map(|(&(_, i), iv)| IndexedFragment {
            label: labels[i as usize],
            fragment: seal_with_iv(&member_keys[i as usize], fk, iv),
        })
        .collect();
    // A key listed twice yields equal labels; break the tie on fragment bytes.
    for run in entries.chunk_by_mut(|a, b| a.label == b.label) {
        if run.len() > 1 {
            run.sort_unstable();
        }
    }
    Ok(Envelope::Indexed { nonce, entries })
}

pub fn open_envelope_linear(usk: &UserSecretKey, env: &Envelope) -> Result<FileKey, Error> {
    open_envelope_linear_traced(usk, env, &mut OpenTrace::default())
}

/// Tries every fragment in order until one authenticates.
pub fn open_envelope_linear_traced(
    usk: &UserSecretKey,
    env: &Envelope,
    trace: &mut OpenTrace,
) -> Result<FileKey, Error> {
    let Envelope::Linear(fragments) = env else {
        return Err(Error::ModeMismatch);
    };
    for fragment in fragments {
        trace.decryptions += 1;
        if let Some(fk) = open_fragment(usk, fragment) {
            return Ok(fk);
        }
    }
    Err(Error::NotRecipient)
}

pub fn open_envelope_indexed(usk: &UserSecretKey, env: &Envelope) -> Result<FileKey, Error> {
    open_envelope_indexed_traced(usk, env, &mut OpenTrace::default())
}

/// Binary search for the reader's label, then decrypt every fragment that
/// carries it (more than one only on a label collision).
pub fn open_envelope_indexed_traced(
    usk: &UserSecretKey,
    env: &Envelope,
    trace: &mut OpenTrace,
) -> Result<FileKey, Error> {
    let Envelope::Indexed { nonce, entries } = env else {
        return Err(Error::ModeMismatch);
    };
    let label = compute_label(usk, nonce);

    let (mut lo, mut hi) = (0, entries.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        trace.label_comparisons += 1;
        if entries[mid].label < label {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }

    for entry in &entries[lo..] {
        trace.label_comparisons += 1;
        if entry.label != label {
            break;
        }
        trace.decryptions += 1;
        if let Some(fk) = open_fragment(usk, &entry.fragment) {
            return Ok(fk);
        }
    }
    Err(Error::NotRecipient)
}

/// Dispatches on the envelope's mode.
pub fn open_envelope_traced(
    usk: &UserSecretKey,
    env: &Envelope,
    trace: &mut OpenTrace,
) -> Result<FileKey, Error> {
    match env.mode() {
        EnvelopeMode::Linear => open_envelope_linear_traced(usk, env, trace),
        EnvelopeMode::Indexed => open_envelope_indexed_traced(usk, env, trace),
    }
}

pub fn open_envelope(usk: &UserSecretKey, env: &Envelope) -> Result<FileKey, Error> {
    open_envelope_traced(usk, env, &mut OpenTrace::default())
}

impl Envelope {
    pub fn mode(&self) -> EnvelopeMode {
        match self {
            Envelope::Linear(_) => EnvelopeMode::Linear,
            Envelope::Indexed { .. } => EnvelopeMode::Indexed,
        }
    }

    pub fn member_count(&self) -> usize {
        match self {
            Envelope::Linear(f) => f.len(),
            Envelope::Indexed { entries, .. } => entries.len(),
        }
    }

    /// Exact serialized size: `6 + 60n` linear, `22 + 88n` indexed.
    pub fn encoded_len(&self) -> usize {
        encoded_len(self.mode(), self.member_count())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(FORMAT_VERSION);
        out.push(self.mode().as_byte());
        out.extend_from_slice(&(self.member_count() as u32).to_be_bytes());
        match self {
            Envelope::Linear(fragments) => {
                for f in fragments {
                    out.extend_from_slice(&f.to_bytes());
                }
            }
            Envelope::Indexed { nonce, entries } => {
                out.extend_from_slice(&nonce.0);
                for e in entries {
                    out.extend_from_slice(&e.label.0);
                    out.extend_from_slice(&e.fragment.to_bytes());
                }
            }
        }
        out
    }

    /// Parses an envelope; the input must contain exactly one envelope.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        if bytes.len() < LINEAR_HEADER_LEN {
            return Err(Error::Malformed("truncated envelope header".into()));
        }
        if bytes[0] != FORMAT_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported envelope version {:#04x}",
                bytes[0]
            )));
        }
        let mode = EnvelopeMode::from_byte(bytes[1])
            .ok_or_else(|| Error::Malformed(format!("unknown envelope mode {:#04x}", bytes[1])))?;
        let count = u32::from_be_bytes(bytes[2..6].try_into().unwrap()) as usize;
        let (header, entry) = match mode {
            EnvelopeMode::Linear => (LINEAR_HEADER_LEN, FRAGMENT_LEN),
            EnvelopeMode::Indexed => (INDEXED_HEADER_LEN, INDEXED_ENTRY_LEN),
        };
        let expected = (header as u64) + (count as u64) * (entry as u64);
        if bytes.len() as u64 != expected {
            return Err(Error::Malformed(format!(
                "envelope of {count} members needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let body = &bytes[header..];
        match mode {
            EnvelopeMode::Linear => Ok(Envelope::Linear(
                body.chunks_exact(FRAGMENT_LEN)
                    .map(|c| Fragment::from_bytes(c.try_into().unwrap()))
                    .collect(),
            )),
            EnvelopeMode::Indexed => {
                let nonce = EnvelopeNonce(bytes[LINEAR_HEADER_LEN..header].try_into().unwrap());
                let entries: Vec<IndexedFragment> = body
                    .chunks_exact(INDEXED_ENTRY_LEN)
                    .map(|c| IndexedFragment {
                        label: Label(c[..LABEL_LEN].try_into().unwrap()),
                        fragment: Fragment::from_bytes(c[LABEL_LEN..].try_into().unwrap()),
                    })
                    .collect();
                if entries.windows(2).any(|w| w[0].cmp(&w[1]) != Ordering::Less) {
                    return Err(Error::Malformed("indexed envelope is not sorted".into()));
                }
                Ok(Envelope::Indexed { nonce, entries })
            }
        }
    }
}

pub fn encoded_len(mode: EnvelopeMode, members: usize) -> usize {
    match mode {
        EnvelopeMode::Linear => LINEAR_HEADER_LEN + FRAGMENT_LEN * members,
        EnvelopeMode::Indexed => INDEXED_HEADER_LEN + INDEXED_ENTRY_LEN * members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn keys(n: usize) -> Vec<UserSecretKey> {
        (0..n).map(|_| UserSecretKey::random()).collect()
    }

    #[test]
    fn fragment_is_sixty_bytes_and_round_trips() {
        let usk = UserSecretKey::random();
        let fk = FileKey::random();
        let f = seal_fragment(&usk, &fk);
        assert_eq!(f.to_bytes().len(), 60);
        assert_eq!(Fragment::from_bytes(&f.to_bytes()), f);
        assert_eq!(open_fragment(&usk, &f).unwrap(), fk);
    }

    #[test]
    fn fragment_rejects_wrong_key_and_bit_flips() {
        let usk = UserSecretKey::random();
        let f = seal_fragment(&usk, &FileKey::random());
        assert!(open_fragment(&UserSecretKey::random(), &f).is_none());
        for i in 0..FRAGMENT_LEN * 8 {
            let mut bytes = f.to_bytes();
            bytes[i / 8] ^= 1 << (i % 8);
            assert!(open_fragment(&usk, &Fragment::from_bytes(&bytes)).is_none());
        }
    }

    #[test]
    fn fresh_iv_per_seal() {
        let usk = UserSecretKey::random();
        let fk = FileKey::random();
        assert_ne!(seal_fragment(&usk, &fk).iv, seal_fragment(&usk, &fk).iv);
    }

    #[test]
    fn three_member_sizes() {
        let ks = keys(3);
        let fk = FileKey::random();
        assert_eq!(build_envelope(&ks, &fk).unwrap().to_bytes().len(), 186);
        assert_eq!(build_envelope_indexed(&ks, &fk).unwrap().to_bytes().len(), 286);
    }

    #[test]
    fn empty_reader_set_is_rejected() {
        let fk = FileKey::random();
        assert_eq!(build_envelope(&[], &fk), Err(Error::EmptyReaderSet));
        assert_eq!(build_envelope_indexed(&[], &fk), Err(Error::EmptyReaderSet));
    }

    #[test]
    fn every_member_opens_both_modes() {
        let ks = keys(25);
        let fk = FileKey::random();
        let lin = build_envelope(&ks, &fk).unwrap();
        let idx = build_envelope_indexed(&ks, &fk).unwrap();
        for k in &ks {
            assert_eq!(open_envelope_linear(k, &lin).unwrap(), fk);
            assert_eq!(open_envelope_indexed(k, &idx).unwrap(), fk);
            assert_eq!(open_envelope(k, &idx).unwrap(), fk);
        }
    }

    #[test]
    fn non_member_fails_after_n_trials_and_zero_indexed_decryptions() {
        let ks = keys(40);
        let fk = FileKey::random();
        let outsider = UserSecretKey::random();
        let mut t = OpenTrace::default();
        let lin = build_envelope(&ks, &fk).unwrap();
        assert_eq!(
            open_envelope_linear_traced(&outsider, &lin, &mut t),
            Err(Error::NotRecipient)
        );
        assert_eq!(t.decryptions, 40);

        let mut t = OpenTrace::default();
        let idx = build_envelope_indexed(&ks, &fk).unwrap();
        assert_eq!(
            open_envelope_indexed_traced(&outsider, &idx, &mut t),
            Err(Error::NotRecipient)
        );
        assert_eq!(t.decryptions, 0);
    }

    #[test]
    fn member_at_last_position_costs_n_trials() {
        let ks = keys(12);
        let fk = FileKey::random();
        let env = build_envelope(&ks, &fk).unwrap();
        let Envelope::Linear(frags) = &env else { unreachable!() };
        let last = frags.last().unwrap();
        let owner = ks.iter().find(|k| open_fragment(k, last).is_some()).unwrap();
        let mut t = OpenTrace::default();
        assert_eq!(open_envelope_linear_traced(owner, &env, &mut t).unwrap(), fk);
        assert_eq!(t.decryptions, 12);
    }

    #[test]
    fn single_member_opens_in_one_trial() {
        let ks = keys(1);
        let fk = FileKey::random();
        let mut t = OpenTrace::default();
        let env = build_envelope(&ks, &fk).unwrap();
        assert_eq!(open_envelope_linear_traced(&ks[0], &env, &mut t).unwrap(), fk);
        assert_eq!(t.decryptions, 1);
    }

    #[test]
    fn wrong_mode_is_reported() {
        let ks = keys(2);
        let env = build_envelope(&ks, &FileKey::random()).unwrap();
        assert_eq!(open_envelope_indexed(&ks[0], &env), Err(Error::ModeMismatch));
    }

    #[test]
    fn label_is_sha224_of_key_then_nonce() {
        let usk = UserSecretKey::from_bytes([1u8; 32]);
        let nonce = EnvelopeNonce([2u8; 16]);
        let mut concat = vec![1u8; 32];
        concat.extend_from_slice(&[2u8; 16]);
        let expected: [u8; 28] = Sha224::digest(&concat).into();
        assert_eq!(compute_label(&usk, &nonce).0, expected);
        assert_eq!(compute_label(&usk, &nonce), compute_label(&usk, &nonce));
        assert_ne!(
            compute_label(&usk, &nonce),
            compute_label(&usk, &EnvelopeNonce([3u8; 16]))
        );
    }

    #[test]
    fn indexed_entries_sorted_by_label() {
        let env = build_envelope_indexed(&keys(200), &FileKey::random()).unwrap();
        let Envelope::Indexed { entries, .. } = env else { unreachable!() };
        assert!(entries.windows(2).all(|w| w[0].label <= w[1].label));
    }

    #[test]
    fn duplicate_member_keys_collide_and_still_open() {
        // The same key twice yields two entries with equal labels.
        let k = UserSecretKey::random();
        let mut ks = keys(5);
        ks.push(k.clone());
        ks.push(k.clone());
        let fk = FileKey::random();
        let env = build_envelope_indexed(&ks, &fk).unwrap();
        let Envelope::Indexed { entries, .. } = &env else { unreachable!() };
        assert!(entries.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(open_envelope_indexed(&k, &env).unwrap(), fk);
        assert_eq!(Envelope::from_bytes(&env.to_bytes()).unwrap(), env);
    }

    #[test]
    fn colliding_label_with_foreign_fragment_is_scanned() {
        // Forge a collision: an entry carrying the reader's label but sealed
        // under another key must be skipped, not treated as a miss.
        let reader = UserSecretKey::random();
        let other = UserSecretKey::random();
        let fk = FileKey::random();
        let nonce = EnvelopeNonce::random();
        let label = compute_label(&reader, &nonce);
        let mut entries = vec![
            IndexedFragment { label, fragment: seal_fragment(&other, &fk) },
            IndexedFragment { label, fragment: seal_fragment(&reader, &fk) },
        ];
        entries.sort();
        let env = Envelope::Indexed { nonce, entries };
        let mut t = OpenTrace::default();
        assert_eq!(open_envelope_indexed_traced(&reader, &env, &mut t).unwrap(), fk);
        assert!(t.decryptions >= 1 && t.decryptions <= 2);
    }

    #[test]
    fn envelopes_for_same_group_share_no_fragments() {
        let ks = keys(30);
        let fk = FileKey::random();
        for build in [build_envelope, build_envelope_indexed] {
            let a: HashSet<Vec<u8>> = frag_bytes(&build(&ks, &fk).unwrap());
            let b: HashSet<Vec<u8>> = frag_bytes(&build(&ks, &fk).unwrap());
            assert!(a.is_disjoint(&b));
        }
    }

    fn frag_bytes(env: &Envelope) -> HashSet<Vec<u8>> {
        match env {
            Envelope::Linear(f) => f.iter().map(|f| f.to_bytes().to_vec()).collect(),
            Envelope::Indexed { entries, .. } => {
                entries.iter().map(|e| e.fragment.to_bytes().to_vec()).collect()
            }
        }
    }

    #[test]
    fn decode_rejects_bad_headers_and_lengths() {
        let env = build_envelope_indexed(&keys(3), &FileKey::random()).unwrap();
        let bytes = env.to_bytes();
        assert_eq!(Envelope::from_bytes(&bytes).unwrap(), env);
        assert!(Envelope::from_bytes(&bytes[..5]).is_err());
        assert!(Envelope::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Envelope::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = 2;
        assert!(Envelope::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[1] = 7;
        assert!(Envelope::from_bytes(&bad).is_err());
        let mut huge = bytes.clone();
        huge[2..6].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(Envelope::from_bytes(&huge).is_err());
    }

    #[test]
    fn decode_rejects_unsorted_indexed() {
        let env = build_envelope_indexed(&keys(4), &FileKey::random()).unwrap();
        let Envelope::Indexed { nonce, mut entries } = env else { unreachable!() };
        entries.reverse();
        let bytes = Envelope::Indexed { nonce, entries }.to_bytes();
        assert!(matches!(Envelope::from_bytes(&bytes), Err(Error::Malformed(_))));
    }
}

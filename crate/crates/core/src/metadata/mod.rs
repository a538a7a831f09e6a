//! Sealed user and group metadata.
//!
//! Nothing reaches the backend in the clear. Names become HMAC-SHA256 values
//! under the master key, user keys and roles are AES-256-GCM ciphertexts, and
//! every document carries an HMAC over its content:
//!
//! ```text
//! user   : uname_e = HMAC(M, uname)       ukey_e = AE(M, usk; aad = uname_e)
//!          usig    = HMAC(M, uname_e || ukey_e)
//! member : mname_e = HMAC(M, len(uname) || uname || gname)
//!          mkey_e  = AE(M, usk; aad = mname_e)   role_e = AE(M, roles; aad = mname_e)
//! group  : gname_e = HMAC(M, gname)
//!          gsig    = HMAC(M, gname_e || version || members...)
//! ```
//!
//! Group mutations are read-verify-modify-write cycles guarded by a version
//! compare-and-swap; conflicts retry with capped exponential backoff.

mod backend;
mod document;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use aes_gcm::Aes256Gcm;
use hmac::{Hmac, Mac};
use rand::{Rng, RngCore};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub use backend::{BackendError, Collection, DocKey, DocumentBackend, FileBackend, MemoryBackend, Record};
pub use document::{GroupDocument, MemberEntry, UserDocument};

use crate::aead::{IV_LEN, TAG_LEN};
use crate::keys::{UserSecretKey, KEY_LEN};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum MetadataError {
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("{0} already exists")]
    AlreadyExists(&'static str),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("concurrent modification; retry")]
    Conflict,
    #[error("backend error: {0}")]
    Backend(String),
}

impl From<BackendError> for MetadataError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Conflict => MetadataError::Conflict,
            BackendError::Corrupt(m) => MetadataError::Integrity(m),
            BackendError::Io(m) => MetadataError::Backend(m),
        }
    }
}

/// The 32-byte master key `M_k`. Held only in service memory.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct MasterKey([u8; 32]);

impl MasterKey {
    pub fn random() -> Self {
        let mut k = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut k);
        Self(k)
    }

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Reader,
    Writer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Roles {
    pub reader: bool,
    pub writer: bool,
}

impl Roles {
    pub const READER: Roles = Roles { reader: true, writer: false };
    pub const WRITER: Roles = Roles { reader: false, writer: true };
    pub const BOTH: Roles = Roles { reader: true, writer: true };

    pub fn contains(self, role: Role) -> bool {
        match role {
            Role::Reader => self.reader,
            Role::Writer => self.writer,
        }
    }

    pub fn bits(self) -> u8 {
        (self.reader as u8) | ((self.writer as u8) << 1)
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !0b11 == 0).then_some(Roles {
            reader: bits & 1 != 0,
            writer: bits & 2 != 0,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 8,
            base: Duration::from_millis(1),
            cap: Duration::from_millis(64),
        }
    }
}

/// A reader's key as listed for enveloping, tagged with its opaque member id.
#[derive(Clone, Debug)]
pub struct MemberKey {
    pub member: [u8; 32],
    pub key: UserSecretKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSummary {
    pub version: u64,
    pub members: usize,
}

pub struct MetadataStore {
    master: MasterKey,
    credential_key: [u8; 32],
    cipher: Aes256Gcm,
    backend: Arc<dyn DocumentBackend>,
    retry: RetryPolicy,
}

impl MetadataStore {
    pub fn new(master: MasterKey, backend: Arc<dyn DocumentBackend>) -> Self {
        let credential_key = hmac_parts(master.as_bytes(), &[b"asky/user-credential-key"]);
        let cipher = crate::aead::cipher(master.as_bytes());
        Self {
            master,
            credential_key,
            cipher,
            backend,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend(&self) -> &Arc<dyn DocumentBackend> {
        &self.backend
    }

    fn mac(&self, parts: &[&[u8]]) -> [u8; 32] {
        hmac_parts(self.master.as_bytes(), parts)
    }

    pub fn user_lookup_key(&self, uname: &str) -> [u8; 32] {
        self.mac(&[uname.as_bytes()])
    }

    pub fn group_lookup_key(&self, gname: &str) -> [u8; 32] {
        self.mac(&[gname.as_bytes()])
    }

    pub fn member_id(&self, gname: &str, uname: &str) -> [u8; 32] {
        self.mac(&[&(uname.len() as u32).to_be_bytes(), uname.as_bytes(), gname.as_bytes()])
    }

    /// Bootstrap secret a user presents to fetch their key. Derived, not stored.
    pub fn user_credential(&self, uname: &str) -> [u8; 32] {
        hmac_parts(&self.credential_key, &[uname.as_bytes()])
    }

    pub fn verify_user_credential(&self, uname: &str, presented: &[u8]) -> bool {
        self.user_credential(uname).ct_eq(presented).into()
    }

    fn seal(&self, plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(IV_LEN + plaintext.len() + TAG_LEN);
        let mut iv = [0u8; IV_LEN];
        rand::thread_rng().fill_bytes(&mut iv);
        out.extend_from_slice(&iv);
        out.extend_from_slice(plaintext);
        let tag = crate::aead::encrypt_detached(&self.cipher, &iv, aad, &mut out[IV_LEN..]);
        out.extend_from_slice(&tag);
        out
    }

    fn open(&self, sealed: &[u8], aad: &[u8], what: &str) -> Result<Vec<u8>, MetadataError> {
        let bad = || MetadataError::Integrity(format!("cannot unseal {what}"));
        if sealed.len() < IV_LEN + TAG_LEN {
            return Err(bad());
        }
        let (iv, rest) = sealed.split_at(IV_LEN);
        let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
        let mut buf = ct.to_vec();
        if !crate::aead::decrypt_detached(&self.cipher, iv, aad, &mut buf, tag) {
            return Err(bad());
        }
        Ok(buf)
    }

    fn open_key(&self, sealed: &[u8], aad: &[u8]) -> Result<UserSecretKey, MetadataError> {
        let k = self.open(sealed, aad, "user key")?;
        if k.len() != KEY_LEN {
            return Err(MetadataError::Integrity("user key has wrong length".into()));
        }
        Ok(UserSecretKey::from_slice(&k).unwrap())
    }

    fn open_roles(&self, entry: &MemberEntry) -> Result<Roles, MetadataError> {
        let r = self.open(&entry.role_e, &entry.mname_e, "role")?;
        match r.as_slice() {
            [b] => Roles::from_bits(*b).ok_or_else(|| MetadataError::Integrity("bad role bits".into())),
            _ => Err(MetadataError::Integrity("bad role field".into())),
        }
    }

    // ---- users ----

    fn user_sig(&self, doc: &UserDocument) -> [u8; 32] {
        self.mac(&[&doc.uname_e, &doc.ukey_e])
    }

    pub fn put_user(&self, uname: &str, usk: &UserSecretKey) -> Result<(), MetadataError> {
        let uname_e = self.user_lookup_key(uname);
        let mut doc = UserDocument {
            uname_e,
            ukey_e: self.seal(usk.as_bytes(), &uname_e),
            usig: [0; 32],
        };
        doc.usig = self.user_sig(&doc);
        let record = Record { version: 1, bytes: doc.encode() };
        match self.backend.put_if_version(Collection::Users, &uname_e, record, None) {
            Ok(()) => Ok(()),
            Err(BackendError::Conflict) => Err(MetadataError::AlreadyExists("user")),
            Err(e) => Err(e.into()),
        }
    }

    fn verify_user_record(&self, key: &DocKey, record: &Record) -> Result<UserDocument, MetadataError> {
        let doc = UserDocument::decode(&record.bytes)?;
        if record.version != 1 || &doc.uname_e != key {
            return Err(MetadataError::Integrity("user record does not match its key".into()));
        }
        if !bool::from(self.user_sig(&doc).ct_eq(&doc.usig)) {
            return Err(MetadataError::Integrity("user signature mismatch".into()));
        }
        Ok(doc)
    }

    pub fn get_user_key(&self, uname: &str) -> Result<UserSecretKey, MetadataError> {
        let key = self.user_lookup_key(uname);
        let record = self
            .backend
            .get(Collection::Users, &key)?
            .ok_or(MetadataError::NotFound("user"))?;
        let doc = self.verify_user_record(&key, &record)?;
        self.open_key(&doc.ukey_e, &doc.uname_e)
    }

    pub fn user_exists(&self, uname: &str) -> Result<bool, MetadataError> {
        Ok(self
            .backend
            .get(Collection::Users, &self.user_lookup_key(uname))?
            .is_some())
    }

    // ---- groups ----

    fn sign_group(&self, doc: &mut GroupDocument) {
        doc.gsig = self.mac(&[b"group", &doc.signed_bytes()]);
    }

    fn verify_group_record(&self, key: &DocKey, record: &Record) -> Result<GroupDocument, MetadataError> {
        let doc = GroupDocument::decode(&record.bytes)?;
        if &doc.gname_e != key || doc.version != record.version {
            return Err(MetadataError::Integrity("group record does not match its key".into()));
        }
        let expected = self.mac(&[b"group", &doc.signed_bytes()]);
        if !bool::from(expected.ct_eq(&doc.gsig)) {
            return Err(MetadataError::Integrity("group signature mismatch".into()));
        }
        Ok(doc)
    }

    fn load_group(&self, gname: &str) -> Result<GroupDocument, MetadataError> {
        let key = self.group_lookup_key(gname);
        let record = self
            .backend
            .get(Collection::Groups, &key)?
            .ok_or(MetadataError::NotFound("group"))?;
        self.verify_group_record(&key, &record)
    }

    pub fn create_group(&self, gname: &str) -> Result<(), MetadataError> {
        let gname_e = self.group_lookup_key(gname);
        let mut doc = GroupDocument { gname_e, version: 1, members: Vec::new(), gsig: [0; 32] };
        self.sign_group(&mut doc);
        let record = Record { version: 1, bytes: doc.encode() };
        match self.backend.put_if_version(Collection::Groups, &gname_e, record, None) {
            Ok(()) => Ok(()),
            Err(BackendError::Conflict) => Err(MetadataError::AlreadyExists("group")),
            Err(e) => Err(e.into()),
        }
    }

    pub fn group_summary(&self, gname: &str) -> Result<GroupSummary, MetadataError> {
        let doc = self.load_group(gname)?;
        Ok(GroupSummary { version: doc.version, members: doc.members.len() })
    }

    /// Read-verify-modify-write with version CAS; an error from `modify`
    /// aborts without writing. Returns the committed version.
    fn mutate_group<F>(&self, gname: &str, mut modify: F) -> Result<u64, MetadataError>
    where
        F: FnMut(&mut GroupDocument) -> Result<(), MetadataError>,
    {
        let key = self.group_lookup_key(gname);
        for attempt in 0..self.retry.attempts {
            let mut doc = self.load_group(gname)?;
            let previous = doc.version;
            modify(&mut doc)?;
            doc.version = previous + 1;
            self.sign_group(&mut doc);
            let record = Record { version: doc.version, bytes: doc.encode() };
            match self.backend.put_if_version(Collection::Groups, &key, record, Some(previous)) {
                Ok(()) => return Ok(doc.version),
                Err(BackendError::Conflict) => self.backoff(attempt),
                Err(e) => return Err(e.into()),
            }
        }
        Err(MetadataError::Conflict)
    }

    fn backoff(&self, attempt: u32) {
        let exp = self.retry.base.saturating_mul(1 << attempt.min(16));
        let ceiling = exp.min(self.retry.cap);
        let jitter = rand::thread_rng().gen_range(0..=ceiling.as_micros() as u64);
        std::thread::sleep(Duration::from_micros(jitter));
    }

    /// Adds `uname` to `gname` or replaces its roles.
    pub fn upsert_member(&self, gname: &str, uname: &str, roles: Roles) -> Result<u64, MetadataError> {
        self.upsert_members(gname, &[(uname, roles)])
    }

    /// Applies several upserts in one read-modify-write cycle.
    pub fn upsert_members(&self, gname: &str, members: &[(&str, Roles)]) -> Result<u64, MetadataError> {
        let mut resolved = Vec::with_capacity(members.len());
        for (uname, roles) in members {
            resolved.push((self.member_id(gname, uname), self.get_user_key(uname)?, *roles));
        }
        self.mutate_group(gname, |doc| {
            let mut index: HashMap<[u8; 32], usize> =
                doc.members.iter().enumerate().map(|(i, m)| (m.mname_e, i)).collect();
            for (mname_e, usk, roles) in &resolved {
                let entry = MemberEntry {
                    mname_e: *mname_e,
                    mkey_e: self.seal(usk.as_bytes(), mname_e),
                    role_e: self.seal(&[roles.bits()], mname_e),
                };
                match index.get(mname_e) {
                    Some(&i) => doc.members[i] = entry,
                    None => {
                        index.insert(*mname_e, doc.members.len());
                        doc.members.push(entry);
                    }
                }
            }
            Ok(())
        })
    }

    pub fn remove_member(&self, gname: &str, uname: &str) -> Result<u64, MetadataError> {
        let mname_e = self.member_id(gname, uname);
        self.mutate_group(gname, |doc| {
            let before = doc.members.len();
            doc.members.retain(|m| m.mname_e != mname_e);
            if doc.members.len() == before {
                return Err(MetadataError::NotFound("member"));
            }
            Ok(())
        })
    }

    /// Keys of every member holding `role`, after verifying `gsig`.
    pub fn list_member_keys(&self, gname: &str, role: Role) -> Result<Vec<MemberKey>, MetadataError> {
        let doc = self.load_group(gname)?;
        let mut out = Vec::with_capacity(doc.members.len());
        for entry in &doc.members {
            if self.open_roles(entry)?.contains(role) {
                out.push(MemberKey {
                    member: entry.mname_e,
                    key: self.open_key(&entry.mkey_e, &entry.mname_e)?,
                });
            }
        }
        Ok(out)
    }

    pub fn member_roles(&self, gname: &str, uname: &str) -> Result<Option<Roles>, MetadataError> {
        let doc = self.load_group(gname)?;
        let mname_e = self.member_id(gname, uname);
        doc.members
            .iter()
            .find(|m| m.mname_e == mname_e)
            .map(|m| self.open_roles(m))
            .transpose()
    }

    pub fn check_role(&self, gname: &str, uname: &str, role: Role) -> Result<bool, MetadataError> {
        Ok(self
            .member_roles(gname, uname)?
            .is_some_and(|r| r.contains(role)))
    }

    /// Reads and verifies every stored document.
    pub fn audit(&self) -> Result<usize, MetadataError> {
        let records = self.backend.scan()?;
        for (collection, key, record) in &records {
            match collection {
                Collection::Users => {
                    let doc = self.verify_user_record(key, record)?;
                    self.open_key(&doc.ukey_e, &doc.uname_e)?;
                }
                Collection::Groups => {
                    let doc = self.verify_group_record(key, record)?;
                    for m in &doc.members {
                        self.open_roles(m)?;
                        self.open_key(&m.mkey_e, &m.mname_e)?;
                    }
                }
            }
        }
        Ok(records.len())
    }
}

fn hmac_parts(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

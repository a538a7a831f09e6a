//! Canonical binary encoding of sealed documents.
//!
//! Every field is `tag:u8 | len:u32 | bytes`, in a fixed order, so that a
//! document has exactly one encoding and signatures are byte-stable.

use super::MetadataError;

pub const HASH_LEN: usize = 32;

/// `iv:12 | ct | tag:16` under the master key.
pub type SealedField = Vec<u8>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserDocument {
    pub uname_e: [u8; HASH_LEN],
    pub ukey_e: SealedField,
    pub usig: [u8; HASH_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberEntry {
    pub mname_e: [u8; HASH_LEN],
    pub mkey_e: SealedField,
    pub role_e: SealedField,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupDocument {
    pub gname_e: [u8; HASH_LEN],
    pub version: u64,
    pub members: Vec<MemberEntry>,
    pub gsig: [u8; HASH_LEN],
}

mod tag {
    pub const NAME: u8 = 1;
    pub const KEY: u8 = 2;
    pub const SIG: u8 = 3;
    pub const VERSION: u8 = 4;
    pub const MEMBER: u8 = 5;
    pub const ROLE: u8 = 6;
}

fn put(out: &mut Vec<u8>, tag: u8, bytes: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn peek_tag(&self) -> Option<u8> {
        self.0.first().copied()
    }

    fn field(&mut self, tag: u8) -> Result<&'a [u8], MetadataError> {
        let bad = |m: String| MetadataError::Integrity(m);
        if self.0.len() < 5 {
            return Err(bad(format!("truncated field (expected tag {tag})")));
        }
        if self.0[0] != tag {
            return Err(bad(format!("expected tag {tag}, found {}", self.0[0])));
        }
        let len = u32::from_be_bytes(self.0[1..5].try_into().unwrap()) as usize;
        let rest = &self.0[5..];
        if rest.len() < len {
            return Err(bad("field length exceeds document".into()));
        }
        let (value, rest) = rest.split_at(len);
        self.0 = rest;
        Ok(value)
    }

    fn hash(&mut self, tag: u8) -> Result<[u8; HASH_LEN], MetadataError> {
        self.field(tag)?
            .try_into()
            .map_err(|_| MetadataError::Integrity("hash field must be 32 bytes".into()))
    }

    fn finish(self) -> Result<(), MetadataError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(MetadataError::Integrity("trailing bytes in document".into()))
        }
    }
}

impl UserDocument {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * 5 + 2 * HASH_LEN + self.ukey_e.len());
        put(&mut out, tag::NAME, &self.uname_e);
        put(&mut out, tag::KEY, &self.ukey_e);
        put(&mut out, tag::SIG, &self.usig);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MetadataError> {
        let mut r = Reader(bytes);
        let doc = UserDocument {
            uname_e: r.hash(tag::NAME)?,
            ukey_e: r.field(tag::KEY)?.to_vec(),
            usig: r.hash(tag::SIG)?,
        };
        r.finish()?;
        Ok(doc)
    }
}

impl MemberEntry {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut inner = Vec::with_capacity(3 * 5 + HASH_LEN + self.mkey_e.len() + self.role_e.len());
        put(&mut inner, tag::NAME, &self.mname_e);
        put(&mut inner, tag::KEY, &self.mkey_e);
        put(&mut inner, tag::ROLE, &self.role_e);
        put(out, tag::MEMBER, &inner);
    }

    fn decode(bytes: &[u8]) -> Result<Self, MetadataError> {
        let mut r = Reader(bytes);
        let e = MemberEntry {
            mname_e: r.hash(tag::NAME)?,
            mkey_e: r.field(tag::KEY)?.to_vec(),
            role_e: r.field(tag::ROLE)?.to_vec(),
        };
        r.finish()?;
        Ok(e)
    }
}

impl GroupDocument {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.members.len() * 140);
        put(&mut out, tag::NAME, &self.gname_e);
        put(&mut out, tag::VERSION, &self.version.to_be_bytes());
        for m in &self.members {
            m.encode_into(&mut out);
        }
        put(&mut out, tag::SIG, &self.gsig);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MetadataError> {
        let mut r = Reader(bytes);
        let gname_e = r.hash(tag::NAME)?;
        let version = u64::from_be_bytes(
            r.field(tag::VERSION)?
                .try_into()
                .map_err(|_| MetadataError::Integrity("version must be 8 bytes".into()))?,
        );
        let mut members = Vec::new();
        while r.peek_tag() == Some(tag::MEMBER) {
            members.push(MemberEntry::decode(r.field(tag::MEMBER)?)?);
        }
        let gsig = r.hash(tag::SIG)?;
        r.finish()?;
        Ok(GroupDocument { gname_e, version, members, gsig })
    }

    /// Bytes covered by `gsig`: name, version, then every member's fields.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.members.len() * 140);
        out.extend_from_slice(&self.gname_e);
        out.extend_from_slice(&self.version.to_be_bytes());
        for m in &self.members {
            out.extend_from_slice(&m.mname_e);
            out.extend_from_slice(&m.mkey_e);
            out.extend_from_slice(&m.role_e);
        }
        out
    }
}

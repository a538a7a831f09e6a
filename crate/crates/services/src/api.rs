//! JSON bodies exchanged with the services.

use serde::{Deserialize, Serialize};

use asky_core::metadata::Roles;
use asky_core::EnvelopeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    Reader,
    Writer,
}

pub fn roles_from_names(names: &[RoleName]) -> Option<Roles> {
    let roles = Roles {
        reader: names.contains(&RoleName::Reader),
        writer: names.contains(&RoleName::Writer),
    };
    (roles.reader || roles.writer).then_some(roles)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Linear,
    Indexed,
}

impl From<ModeName> for EnvelopeMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Linear => EnvelopeMode::Linear,
            ModeName::Indexed => EnvelopeMode::Indexed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ack {
    pub status: String,
}

impl Ack {
    pub fn ok() -> Self {
        Ack { status: "ok".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProvisionAccessControl {
    pub master_key: String,
    pub admin_credential: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpenSession {
    pub admin_credential: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateUser {
    pub uname: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreatedUser {
    pub uname: String,
    pub usk: String,
    pub credential: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserKey {
    pub usk: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateGroup {
    pub gname: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupInfo {
    pub gname: String,
    pub version: u64,
    pub members: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetMember {
    pub roles: Vec<RoleName>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MembershipChange {
    pub version: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeRequest {
    pub file_key: String,
    #[serde(default)]
    pub mode: ModeName,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeResponse {
    pub envelope: String,
    pub members: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CanWrite {
    pub can_write: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProvisionWriterShield {
    pub signing_seed: String,
    pub storage_endpoint: String,
    pub bucket: String,
    pub storage_secret: String,
    pub admin_credential: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredObject {
    pub bucket: String,
    pub key: String,
    pub etag: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenGrant {
    pub storage_endpoint: String,
    pub bucket: String,
    pub key: String,
    pub token: String,
    pub expires_at: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignDigest {
    pub digest: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DigestSignature {
    pub signature: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationKeyInfo {
    pub key: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PutResult {
    pub etag: String,
}

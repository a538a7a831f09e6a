//! Client library behind the `asky` command: writing files to a group,
//! reading them back, and the administrator flows.
//!
//! Reads touch only the object store. Writes ask the access-control service
//! for an envelope and then go through the write proxy, or, in token mode,
//! obtain a detached signature and an upload token and put the object
//! directly.

pub mod config;

use std::future::Future;
use std::time::Duration;

use sha2::{Digest, Sha256};

use asky_core::envelope::OpenTrace;
use asky_core::signing::package_digest;
use asky_core::{encrypt_content, frame_package, EnvelopeMode, FileKey, SignedPackage, UserSecretKey, VerificationKey};
use asky_services::tls::HttpClient;
use asky_services::{AccessControlClient, ClientError, ErrorCode, StorageClient, WriterShieldClient};

pub use config::{ClientConfig, Identity};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("{0}")]
    Integrity(String),
    #[error("not a recipient")]
    NotRecipient,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Permission(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::NotRecipient => 4,
            CliError::Transport(_) => 5,
            CliError::Config(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        if e.is_transport() {
            return CliError::Transport(e.to_string());
        }
        match e.code() {
            Some(
                ErrorCode::PermissionDenied
                | ErrorCode::Unauthorized
                | ErrorCode::TokenRejected
                | ErrorCode::TokenModeDisabled,
            ) => CliError::Permission(e.to_string()),
            Some(ErrorCode::Integrity) => CliError::Integrity(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<asky_core::Error> for CliError {
    fn from(e: asky_core::Error) -> Self {
        use asky_core::Error as E;
        match e {
            E::NotRecipient => CliError::NotRecipient,
            E::BadSignature | E::ContentAuthentication | E::Malformed(_) | E::ModeMismatch => {
                CliError::Integrity(e.to_string())
            }
            E::KeyLength { .. } | E::EmptyReaderSet => CliError::Other(e.to_string()),
        }
    }
}

pub const TRANSPORT_ATTEMPTS: u32 = 3;

/// Runs `op` up to three times while it fails at the transport level.
pub async fn with_retries<T, F, Fut>(mut op: F) -> Result<T, ClientError>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, ClientError>>,
{
    let mut attempt = 1;
    loop {
        match op().await {
            Err(e) if e.is_transport() && attempt < TRANSPORT_ATTEMPTS => {
                tokio::time::sleep(Duration::from_millis(100 << attempt)).await;
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteOptions {
    pub indexed: bool,
    pub token_mode: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteReceipt {
    pub object_key: String,
    pub etag: String,
}

/// Object keys are the hex SHA-256 of the package, so names carry no
/// information about the writer or the group.
pub fn object_key(package: &[u8]) -> String {
    hex::encode(Sha256::digest(package))
}

#[derive(Clone)]
pub struct AskyClient {
    pub access_control: AccessControlClient,
    pub writer_shield: WriterShieldClient,
    pub storage: StorageClient,
    pub bucket: String,
}

impl AskyClient {
    pub fn from_config(config: &ClientConfig) -> Result<Self, CliError> {
        let ca = std::fs::read_to_string(&config.ca_cert)
            .map_err(|e| CliError::Config(format!("{}: {e}", config.ca_cert.display())))?;
        let http = asky_services::tls::client(&ca).map_err(|e| CliError::Config(e.to_string()))?;
        Self::with_http(http, config)
    }

    pub fn with_http(http: HttpClient, config: &ClientConfig) -> Result<Self, CliError> {
        Ok(Self {
            access_control: AccessControlClient::with_http(http.clone(), &config.access_control_url)?,
            writer_shield: WriterShieldClient::with_http(http.clone(), &config.writer_shield_url)?,
            storage: StorageClient::with_http(http, &config.storage_url)?,
            bucket: config.bucket.clone(),
        })
    }

    /// Encrypts `plaintext` under a fresh file key for every reader of
    /// `group` and uploads it.
    pub async fn write_file(
        &self,
        id: &Identity,
        group: &str,
        plaintext: &[u8],
        opts: WriteOptions,
    ) -> Result<WriteReceipt, CliError> {
        let fk = FileKey::random();
        let mode = if opts.indexed { EnvelopeMode::Indexed } else { EnvelopeMode::Linear };
        let envelope = with_retries(|| self.access_control.envelope(&id.auth, group, &fk, mode)).await?;
        let package = frame_package(&envelope, &encrypt_content(&fk, plaintext));
        let key = object_key(&package);

        let etag = if opts.token_mode {
            let digest = package_digest(&package);
            let signature = with_retries(|| self.writer_shield.sign_digest(&id.auth, group, &digest)).await?;
            let grant = with_retries(|| self.writer_shield.token(&id.auth, group, &key)).await?;
            let object = SignedPackage { package, signature }.to_object_bytes();
            with_retries(|| self.storage.put_with_token(&grant.bucket, &key, &grant.token, object.clone())).await?
        } else {
            with_retries(|| self.writer_shield.proxy(&id.auth, group, &key, package.clone())).await?.etag
        };
        Ok(WriteReceipt { object_key: key, etag })
    }

    pub async fn read_file(
        &self,
        vk: &VerificationKey,
        usk: &UserSecretKey,
        object_key: &str,
    ) -> Result<Vec<u8>, CliError> {
        self.read_file_traced(vk, usk, object_key, &mut OpenTrace::default()).await
    }

    /// Downloads, verifies the signature, opens the envelope in whichever
    /// mode it was built, and decrypts.
    pub async fn read_file_traced(
        &self,
        vk: &VerificationKey,
        usk: &UserSecretKey,
        object_key: &str,
        trace: &mut OpenTrace,
    ) -> Result<Vec<u8>, CliError> {
        let object = with_retries(|| self.storage.get_object(&self.bucket, object_key))
            .await?
            .ok_or_else(|| CliError::Other(format!("object {object_key} not found")))?;
        Ok(asky_core::reader::read_object(vk, usk, &object, trace)?)
    }
}

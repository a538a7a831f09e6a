//! HTTPS clients for the three services.

use axum::http::header::CONTENT_TYPE;
use base64::Engine;
use reqwest::{Method, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use asky_core::signing::{PackageDigest, Signature, VerificationKey};
use asky_core::{Envelope, EnvelopeMode, FileKey, UserSecretKey};

use crate::api::*;
use crate::attest::{AttestationError, ChannelKeys, ClientHandshake, Quote, SESSION_HEADER};
use crate::auth::{UserAuth, OCTET_STREAM};
use crate::error::{ApiError, ErrorCode};
use crate::storage::CREDENTIAL_HEADER;
use crate::tls::{self, TlsError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{}", .0.message)]
    Api(ApiError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("attestation failed: {0}")]
    Attestation(#[from] AttestationError),
    #[error(transparent)]
    Tls(#[from] TlsError),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api(e) => Some(e.code),
            ClientError::Attestation(_) => Some(ErrorCode::AttestationFailed),
            _ => None,
        }
    }

    /// Connection-level failures that a retry may cure.
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Transport(_))
            || matches!(self, ClientError::Api(e) if e.code == ErrorCode::Upstream)
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_decode() {
            ClientError::Protocol(e.to_string())
        } else {
            ClientError::Transport(e.to_string())
        }
    }
}

async fn check(resp: Response) -> Result<Response, ClientError> {
    if resp.status().is_success() {
        return Ok(resp);
    }
    let status = resp.status();
    let body = resp.bytes().await?;
    Err(match serde_json::from_slice::<ApiError>(&body) {
        Ok(e) => ClientError::Api(e),
        Err(_) => ClientError::Protocol(format!("HTTP {status}: {}", String::from_utf8_lossy(&body))),
    })
}

async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, ClientError> {
    let resp = check(req.send().await?).await?;
    let body = resp.bytes().await?;
    serde_json::from_slice(&body).map_err(|e| ClientError::Protocol(e.to_string()))
}

fn unhex<const N: usize>(what: &str, s: &str) -> Result<[u8; N], ClientError> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| ClientError::Protocol(format!("{what} is not {N} hex bytes")))
}

fn join(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

fn require_https(url: &str) -> Result<(), ClientError> {
    if url.starts_with("https://") {
        Ok(())
    } else {
        Err(ClientError::Protocol(format!("refusing non-https endpoint {url}")))
    }
}

#[derive(Clone)]
pub struct AccessControlClient {
    http: reqwest::Client,
    base: String,
}

impl AccessControlClient {
    pub fn new(ca_pem: &str, base: &str) -> Result<Self, ClientError> {
        Self::with_http(tls::client(ca_pem)?, base)
    }

    pub fn with_http(http: reqwest::Client, base: &str) -> Result<Self, ClientError> {
        require_https(base)?;
        Ok(Self { http, base: base.to_owned() })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub async fn quote(&self, handshake: &ClientHandshake) -> Result<Quote, ClientError> {
        json(self.http.post(join(&self.base, "/attest")).json(&handshake.request())).await
    }

    /// Attests the service against `expected` and opens a sealed channel.
    pub async fn attest(&self, expected: &[u8; 32]) -> Result<AdminChannel, ClientError> {
        attest(&self.http, &self.base, expected).await
    }

    pub async fn fetch_user_key(&self, auth: &UserAuth) -> Result<UserSecretKey, ClientError> {
        let url = join(&self.base, &format!("/users/{}/key", auth.uname));
        let r: UserKey = json(self.http.get(url).header("authorization", auth.header_value())).await?;
        UserSecretKey::from_hex(&r.usk).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub async fn envelope(
        &self,
        auth: &UserAuth,
        gname: &str,
        fk: &FileKey,
        mode: EnvelopeMode,
    ) -> Result<Envelope, ClientError> {
        let mode = match mode {
            EnvelopeMode::Linear => ModeName::Linear,
            EnvelopeMode::Indexed => ModeName::Indexed,
        };
        let url = join(&self.base, &format!("/groups/{gname}/envelope"));
        let body = EnvelopeRequest { file_key: fk.to_hex(), mode };
        let r: EnvelopeResponse =
            json(self.http.post(url).header("authorization", auth.header_value()).json(&body)).await?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(r.envelope)
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        Envelope::from_bytes(&bytes).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub async fn can_write(&self, auth: &UserAuth, gname: &str) -> Result<bool, ClientError> {
        let url = join(&self.base, &format!("/groups/{gname}/can-write/{}", auth.uname));
        let r: CanWrite = json(self.http.get(url).header("authorization", auth.header_value())).await?;
        Ok(r.can_write)
    }
}

async fn attest(http: &reqwest::Client, base: &str, expected: &[u8; 32]) -> Result<AdminChannel, ClientError> {
    let handshake = ClientHandshake::new();
    let quote: Quote = json(http.post(join(base, "/attest")).json(&handshake.request())).await?;
    let keys = handshake.finish(expected, &quote)?;
    Ok(AdminChannel { http: http.clone(), base: base.to_owned(), keys })
}

/// A sealed admin channel to one service.
pub struct AdminChannel {
    http: reqwest::Client,
    base: String,
    keys: ChannelKeys,
}

impl AdminChannel {
    pub fn resume(http: reqwest::Client, base: &str, keys: ChannelKeys) -> Result<Self, ClientError> {
        require_https(base)?;
        Ok(Self { http, base: base.to_owned(), keys })
    }

    pub fn keys(&self) -> &ChannelKeys {
        &self.keys
    }

    pub async fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let plain = serde_json::to_vec(body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let (seq, sealed) = self.keys.seal_request(method.as_str(), path, &plain);
        let resp = self
            .http
            .request(method.clone(), join(&self.base, path))
            .header(SESSION_HEADER, self.keys.session_hex())
            .header(CONTENT_TYPE, OCTET_STREAM)
            .body(sealed)
            .send()
            .await?;
        let body = check(resp).await?.bytes().await?;
        let plain = self
            .keys
            .open_response(method.as_str(), path, seq, &body)
            .ok_or_else(|| ClientError::Protocol("admin response failed authentication".into()))?;
        serde_json::from_slice(&plain).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub async fn provision_access_control(&self, master_key: &[u8; 32], admin_credential: &[u8; 32]) -> Result<(), ClientError> {
        let body = ProvisionAccessControl {
            master_key: hex::encode(master_key),
            admin_credential: hex::encode(admin_credential),
        };
        self.call::<_, Ack>(Method::POST, "/provision", &body).await.map(drop)
    }

    pub async fn provision_writer_shield(&self, req: &ProvisionWriterShield) -> Result<(), ClientError> {
        self.call::<_, Ack>(Method::POST, "/provision", req).await.map(drop)
    }

    /// Authenticates this channel as an administrator.
    pub async fn login(&self, admin_credential: &[u8; 32]) -> Result<(), ClientError> {
        let body = OpenSession { admin_credential: hex::encode(admin_credential) };
        self.call::<_, Ack>(Method::POST, "/session", &body).await.map(drop)
    }

    pub async fn create_user(&self, uname: &str) -> Result<(UserSecretKey, UserAuth), ClientError> {
        let r: CreatedUser = self.call(Method::POST, "/users", &CreateUser { uname: uname.to_owned() }).await?;
        let usk = UserSecretKey::from_hex(&r.usk).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let credential = unhex::<32>("credential", &r.credential)?;
        Ok((usk, UserAuth { uname: r.uname, credential }))
    }

    pub async fn create_group(&self, gname: &str) -> Result<GroupInfo, ClientError> {
        self.call(Method::POST, "/groups", &CreateGroup { gname: gname.to_owned() }).await
    }

    pub async fn add_member(&self, gname: &str, uname: &str, roles: &[RoleName]) -> Result<u64, ClientError> {
        let r: MembershipChange = self
            .call(Method::PUT, &format!("/groups/{gname}/members/{uname}"), &SetMember { roles: roles.to_vec() })
            .await?;
        Ok(r.version)
    }

    pub async fn revoke_member(&self, gname: &str, uname: &str) -> Result<u64, ClientError> {
        let r: MembershipChange = self
            .call(Method::DELETE, &format!("/groups/{gname}/members/{uname}"), &serde_json::Value::Null)
            .await?;
        Ok(r.version)
    }
}

#[derive(Clone)]
pub struct WriterShieldClient {
    http: reqwest::Client,
    base: String,
}

impl WriterShieldClient {
    pub fn new(ca_pem: &str, base: &str) -> Result<Self, ClientError> {
        Self::with_http(tls::client(ca_pem)?, base)
    }

    pub fn with_http(http: reqwest::Client, base: &str) -> Result<Self, ClientError> {
        require_https(base)?;
        Ok(Self { http, base: base.to_owned() })
    }

    pub async fn attest(&self, expected: &[u8; 32]) -> Result<AdminChannel, ClientError> {
        attest(&self.http, &self.base, expected).await
    }

    pub async fn proxy(&self, auth: &UserAuth, gname: &str, object: &str, package: Vec<u8>) -> Result<StoredObject, ClientError> {
        let url = join(&self.base, &format!("/proxy/{gname}/{object}"));
        json(
            self.http
                .post(url)
                .header("authorization", auth.header_value())
                .header(CONTENT_TYPE, OCTET_STREAM)
                .body(package),
        )
        .await
    }

    pub async fn token(&self, auth: &UserAuth, gname: &str, object: &str) -> Result<TokenGrant, ClientError> {
        let url = join(&self.base, &format!("/tokens/{gname}/{object}"));
        json(self.http.post(url).header("authorization", auth.header_value())).await
    }

    pub async fn sign_digest(&self, auth: &UserAuth, gname: &str, digest: &PackageDigest) -> Result<Signature, ClientError> {
        let url = join(&self.base, &format!("/sign-digest/{gname}"));
        let body = SignDigest { digest: hex::encode(digest) };
        let r: DigestSignature =
            json(self.http.post(url).header("authorization", auth.header_value()).json(&body)).await?;
        Signature::from_hex(&r.signature).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub async fn verification_key(&self) -> Result<VerificationKey, ClientError> {
        let r: VerificationKeyInfo = json(self.http.get(join(&self.base, "/verification-key"))).await?;
        VerificationKey::from_hex(&r.key).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

#[derive(Clone)]
pub struct StorageClient {
    http: reqwest::Client,
    base: String,
}

impl StorageClient {
    pub fn new(ca_pem: &str, base: &str) -> Result<Self, ClientError> {
        Self::with_http(tls::client(ca_pem)?, base)
    }

    pub fn with_http(http: reqwest::Client, base: &str) -> Result<Self, ClientError> {
        require_https(base)?;
        Ok(Self { http, base: base.to_owned() })
    }

    fn url(&self, bucket: &str, key: &str) -> String {
        join(&self.base, &format!("/{bucket}/{key}"))
    }

    pub async fn put_object(&self, secret: &[u8], bucket: &str, key: &str, bytes: Vec<u8>) -> Result<String, ClientError> {
        let r: PutResult = json(
            self.http
                .put(self.url(bucket, key))
                .header(CREDENTIAL_HEADER, hex::encode(secret))
                .header(CONTENT_TYPE, OCTET_STREAM)
                .body(bytes),
        )
        .await?;
        Ok(r.etag)
    }

    pub async fn put_with_token(&self, bucket: &str, key: &str, token: &str, bytes: Vec<u8>) -> Result<String, ClientError> {
        let r: PutResult = json(
            self.http
                .put(self.url(bucket, key))
                .query(&[("token", token)])
                .header(CONTENT_TYPE, OCTET_STREAM)
                .body(bytes),
        )
        .await?;
        Ok(r.etag)
    }

    /// `None` if the object does not exist.
    pub async fn get_object(&self, bucket: &str, key: &str) -> Result<Option<Vec<u8>>, ClientError> {
        let resp = self.http.get(self.url(bucket, key)).send().await?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        Ok(Some(check(resp).await?.bytes().await?.to_vec()))
    }
}

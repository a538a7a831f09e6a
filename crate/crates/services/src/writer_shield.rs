//! The write proxy: permission check, package signing and upload, plus the
//! token path where clients upload directly with a detached signature.

use std::sync::{Arc, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::Semaphore;

use asky_core::signing::{sign_package, TaSigningKey, DIGEST_LEN};
use asky_core::token::TokenAuthority;

use crate::access_control::AccessControl;
use crate::api::*;
use crate::attest::{credential_matches, AttestRequest, Quote, Sessions};
use crate::auth::{HasSessions, Sealed, UserAuth};
use crate::client::{AccessControlClient, ClientError, StorageClient};
use crate::error::{ApiError, ErrorCode};
use crate::names;
use crate::request_log::{self, now_ms, RequestLog};

pub const SERVICE_NAME: &str = "writer-shield";

/// Answers "may this user write to this group?".
#[async_trait]
pub trait PermissionOracle: Send + Sync {
    async fn can_write(&self, auth: &UserAuth, gname: &str) -> Result<bool, ApiError>;
}

pub struct InProcessOracle(pub Arc<AccessControl>);

#[async_trait]
impl PermissionOracle for InProcessOracle {
    async fn can_write(&self, auth: &UserAuth, gname: &str) -> Result<bool, ApiError> {
        self.0.check_write_permission(auth, gname).await
    }
}

/// Asks a remote access-control service, forwarding the user's credential.
pub struct HttpOracle(pub AccessControlClient);

fn upstream(e: ClientError) -> ApiError {
    match e {
        ClientError::Api(api) => api,
        other => ApiError::new(ErrorCode::Upstream, other.to_string()),
    }
}

#[async_trait]
impl PermissionOracle for HttpOracle {
    async fn can_write(&self, auth: &UserAuth, gname: &str) -> Result<bool, ApiError> {
        self.0.can_write(auth, gname).await.map_err(upstream)
    }
}

#[async_trait]
pub trait ObjectUploader: Send + Sync {
    /// Stores `bytes` and returns the etag.
    async fn put(&self, bucket: &str, key: &str, bytes: Vec<u8>) -> Result<String, ApiError>;
}

pub struct HttpUploader {
    pub storage: StorageClient,
    pub secret: Vec<u8>,
}

#[async_trait]
impl ObjectUploader for HttpUploader {
    async fn put(&self, bucket: &str, key: &str, bytes: Vec<u8>) -> Result<String, ApiError> {
        self.storage
            .put_object(&self.secret, bucket, key, bytes)
            .await
            .map_err(|e| ApiError::new(ErrorCode::Upstream, format!("storage: {e}")))
    }
}

/// Storage access handed over at provisioning time.
#[derive(Clone)]
pub struct StorageCredentials {
    pub endpoint: String,
    pub bucket: String,
    pub secret: Vec<u8>,
}

pub type UploaderFactory =
    Arc<dyn Fn(&StorageCredentials) -> Result<Arc<dyn ObjectUploader>, ApiError> + Send + Sync>;

/// Builds [`HttpUploader`]s whose client trusts `ca_pem`.
pub fn http_uploader_factory(ca_pem: String) -> UploaderFactory {
    Arc::new(move |creds: &StorageCredentials| {
        let storage = StorageClient::new(&ca_pem, &creds.endpoint).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Arc::new(HttpUploader { storage, secret: creds.secret.clone() }) as Arc<dyn ObjectUploader>)
    })
}

#[derive(Clone, Debug)]
pub struct WriterShieldConfig {
    pub token_ttl: Duration,
    /// Whether clients may bypass the proxy with upload tokens.
    pub allow_token_mode: bool,
    pub max_in_flight: usize,
    pub allow_reprovision: bool,
    pub body_limit: usize,
}

impl Default for WriterShieldConfig {
    fn default() -> Self {
        Self {
            token_ttl: Duration::from_secs(60),
            allow_token_mode: true,
            max_in_flight: 256,
            allow_reprovision: true,
            body_limit: 64 << 20,
        }
    }
}

struct Provisioned {
    signing: TaSigningKey,
    uploader: Arc<dyn ObjectUploader>,
    tokens: TokenAuthority,
    storage_endpoint: String,
    bucket: String,
    admin_credential: [u8; 32],
}

pub struct WriterShield {
    oracle: Arc<dyn PermissionOracle>,
    uploaders: UploaderFactory,
    state: RwLock<Option<Arc<Provisioned>>>,
    sessions: Arc<Sessions>,
    in_flight: Semaphore,
    log: Arc<RequestLog>,
    config: WriterShieldConfig,
}

fn unhex<const N: usize>(field: &str, s: &str) -> Result<[u8; N], ApiError> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| ApiError::bad_request(format!("{field} must be {N} hex bytes")))
}

impl WriterShield {
    pub fn new(oracle: Arc<dyn PermissionOracle>, uploaders: UploaderFactory, config: WriterShieldConfig) -> Arc<Self> {
        Self::with_log(oracle, uploaders, config, RequestLog::new(SERVICE_NAME))
    }

    pub fn with_log(
        oracle: Arc<dyn PermissionOracle>,
        uploaders: UploaderFactory,
        config: WriterShieldConfig,
        log: Arc<RequestLog>,
    ) -> Arc<Self> {
        Arc::new(Self {
            oracle,
            uploaders,
            state: RwLock::new(None),
            sessions: Arc::new(Sessions::new(SERVICE_NAME)),
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            log,
            config,
        })
    }

    pub fn request_log(&self) -> &Arc<RequestLog> {
        &self.log
    }

    pub fn is_provisioned(&self) -> bool {
        self.state.read().unwrap().is_some()
    }

    fn provisioned(&self) -> Result<Arc<Provisioned>, ApiError> {
        self.state
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::new(ErrorCode::Unprovisioned, "service is not provisioned"))
    }

    pub fn provision(
        &self,
        signing: TaSigningKey,
        storage: StorageCredentials,
        admin_credential: [u8; 32],
    ) -> Result<(), ApiError> {
        names::validate("bucket", &storage.bucket)?;
        let uploader = (self.uploaders)(&storage)?;
        let mut state = self.state.write().unwrap();
        if state.is_some() && !self.config.allow_reprovision {
            return Err(ApiError::new(ErrorCode::AlreadyProvisioned, "service is already provisioned"));
        }
        *state = Some(Arc::new(Provisioned {
            signing,
            uploader,
            tokens: TokenAuthority::from_storage_secret(&storage.secret),
            storage_endpoint: storage.endpoint,
            bucket: storage.bucket,
            admin_credential,
        }));
        self.sessions.revoke_all_admin();
        Ok(())
    }

    pub fn verification_key(&self) -> Result<asky_core::VerificationKey, ApiError> {
        Ok(self.provisioned()?.signing.verification_key())
    }

    async fn require_writer(&self, auth: &UserAuth, gname: &str) -> Result<(), ApiError> {
        names::validate("group", gname)?;
        if self.oracle.can_write(auth, gname).await? {
            Ok(())
        } else {
            Err(ApiError::permission_denied(format!("{} may not write to {gname}", auth.uname)))
        }
    }

    /// Checks permission, signs `package` and uploads `package || σ || len`.
    pub async fn proxy_file(
        &self,
        auth: &UserAuth,
        gname: &str,
        object: &str,
        package: Vec<u8>,
    ) -> Result<StoredObject, ApiError> {
        let _permit = self.in_flight.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
        let p = self.provisioned()?;
        names::validate("object", object)?;
        self.require_writer(auth, gname).await?;
        let object_bytes = {
            let p = p.clone();
            tokio::task::spawn_blocking(move || sign_package(&p.signing, package).to_object_bytes()).await?
        };
        let etag = p.uploader.put(&p.bucket, object, object_bytes).await?;
        Ok(StoredObject { bucket: p.bucket.clone(), key: object.to_owned(), etag })
    }

    pub async fn issue_token(&self, auth: &UserAuth, gname: &str, object: &str) -> Result<TokenGrant, ApiError> {
        if !self.config.allow_token_mode {
            return Err(ApiError::new(ErrorCode::TokenModeDisabled, "token uploads are disabled"));
        }
        let p = self.provisioned()?;
        names::validate("object", object)?;
        self.require_writer(auth, gname).await?;
        let expires_at = now_ms() / 1000 + self.config.token_ttl.as_secs().max(1);
        let token = p.tokens.issue(&p.bucket, object, expires_at);
        Ok(TokenGrant {
            storage_endpoint: p.storage_endpoint.clone(),
            bucket: p.bucket.clone(),
            key: object.to_owned(),
            token: token.to_query_value(),
            expires_at,
        })
    }

    pub async fn sign_digest(
        &self,
        auth: &UserAuth,
        gname: &str,
        digest: &[u8; DIGEST_LEN],
    ) -> Result<asky_core::Signature, ApiError> {
        let p = self.provisioned()?;
        self.require_writer(auth, gname).await?;
        Ok(p.signing.sign_digest(digest))
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/attest", post(attest))
            .route("/provision", post(provision))
            .route("/session", post(open_session))
            .route("/proxy/{gname}/{object}", post(proxy))
            .route("/tokens/{gname}/{object}", post(token))
            .route("/sign-digest/{gname}", post(sign_digest))
            .route("/verification-key", get(verification_key))
            .layer(DefaultBodyLimit::max(self.config.body_limit))
            .layer(axum::middleware::from_fn_with_state(self.log.clone(), request_log::middleware))
            .with_state(self.clone())
    }
}

type Ws = State<Arc<WriterShield>>;

impl HasSessions for Arc<WriterShield> {
    fn sessions(&self) -> Arc<Sessions> {
        self.sessions.clone()
    }
}

async fn attest(State(ws): Ws, Json(req): Json<AttestRequest>) -> Result<Json<Quote>, ApiError> {
    Ok(Json(ws.sessions.attest(&req)?))
}

async fn provision(State(ws): Ws, req: Sealed<ProvisionWriterShield>) -> Result<Response, ApiError> {
    if ws.is_provisioned() {
        req.require_admin()?;
    }
    let v = &req.value;
    let signing = TaSigningKey::from_seed(&unhex::<32>("signing_seed", &v.signing_seed)?);
    let secret = hex::decode(&v.storage_secret).map_err(|_| ApiError::bad_request("storage_secret must be hex"))?;
    let storage = StorageCredentials { endpoint: v.storage_endpoint.clone(), bucket: v.bucket.clone(), secret };
    ws.provision(signing, storage, unhex::<32>("admin_credential", &v.admin_credential)?)?;
    ws.sessions.grant_admin(req.session());
    req.reply(&Ack::ok())
}

async fn open_session(State(ws): Ws, req: Sealed<OpenSession>) -> Result<Response, ApiError> {
    let p = ws.provisioned()?;
    if !credential_matches(&p.admin_credential, &req.value.admin_credential) {
        return Err(ApiError::unauthorized("bad admin credential"));
    }
    ws.sessions.grant_admin(req.session());
    req.reply(&Ack::ok())
}

async fn proxy(
    State(ws): Ws,
    Path((gname, object)): Path<(String, String)>,
    auth: UserAuth,
    body: Bytes,
) -> Result<Json<StoredObject>, ApiError> {
    Ok(Json(ws.proxy_file(&auth, &gname, &object, body.to_vec()).await?))
}

async fn token(
    State(ws): Ws,
    Path((gname, object)): Path<(String, String)>,
    auth: UserAuth,
) -> Result<Json<TokenGrant>, ApiError> {
    Ok(Json(ws.issue_token(&auth, &gname, &object).await?))
}

async fn sign_digest(
    State(ws): Ws,
    Path(gname): Path<String>,
    auth: UserAuth,
    Json(req): Json<SignDigest>,
) -> Result<Json<DigestSignature>, ApiError> {
    let digest = unhex::<DIGEST_LEN>("digest", &req.digest)?;
    let sig = ws.sign_digest(&auth, &gname, &digest).await?;
    Ok(Json(DigestSignature { signature: sig.to_hex() }))
}

async fn verification_key(State(ws): Ws) -> Result<Json<VerificationKeyInfo>, ApiError> {
    Ok(Json(VerificationKeyInfo { key: ws.verification_key()?.to_hex() }))
}

//! A minimal S3-style object store.
//!
//! `PUT /{bucket}/{key}` needs either the storage credential in the
//! `x-asky-credential` header or a scoped `?token=`; `GET /{bucket}/{key}`
//! is open on public-read buckets. Every request lands in an access log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::header::{CONTENT_TYPE, ETAG};
use axum::http::HeaderMap;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use asky_core::token::{TokenAuthority, UploadToken};

use crate::api::PutResult;
use crate::auth::OCTET_STREAM;
use crate::error::{ApiError, ErrorCode};
use crate::names;
use crate::request_log::now_ms;

pub const CREDENTIAL_HEADER: &str = "x-asky-credential";
/// Optional header a client may use to name itself; logged as the principal.
pub const USER_HEADER: &str = "x-asky-user";

pub fn etag(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub trait ObjectBackend: Send + Sync {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> std::io::Result<()>;
    fn get(&self, bucket: &str, key: &str) -> std::io::Result<Option<Vec<u8>>>;
}

#[derive(Default)]
pub struct MemoryObjectBackend {
    objects: RwLock<HashMap<(String, String), Arc<Vec<u8>>>>,
}

impl MemoryObjectBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ObjectBackend for MemoryObjectBackend {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.objects
            .write()
            .unwrap()
            .insert((bucket.to_owned(), key.to_owned()), Arc::new(bytes.to_vec()));
        Ok(())
    }

    fn get(&self, bucket: &str, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        Ok(self
            .objects
            .read()
            .unwrap()
            .get(&(bucket.to_owned(), key.to_owned()))
            .map(|b| b.as_ref().clone()))
    }
}

/// One directory per bucket; writes go to a temporary file and are renamed
/// into place, so readers see either the old or the new object.
pub struct FsObjectBackend {
    root: PathBuf,
}

impl FsObjectBackend {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn path(&self, bucket: &str, key: &str) -> PathBuf {
        self.root.join(bucket).join(key)
    }
}

impl ObjectBackend for FsObjectBackend {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> std::io::Result<()> {
        let dir = self.root.join(bucket);
        std::fs::create_dir_all(&dir)?;
        let mut suffix = [0u8; 8];
        rand::thread_rng().fill_bytes(&mut suffix);
        let tmp = dir.join(format!(".tmp-{}", hex::encode(suffix)));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            std::fs::rename(&tmp, self.path(bucket, key))
        })();
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        result
    }

    fn get(&self, bucket: &str, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.path(bucket, key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BucketPolicy {
    pub public_read: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthKind {
    Credential,
    Token,
    Anonymous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub ts_ms: u64,
    pub op: String,
    pub bucket: String,
    pub key: String,
    pub principal: Option<String>,
    pub auth: AuthKind,
    pub status: u16,
    pub bytes: usize,
    /// Names of the request headers, for auditing what a client revealed.
    pub headers: Vec<String>,
}

#[derive(Default)]
pub struct AccessLog {
    records: Mutex<Vec<AccessRecord>>,
    file: Mutex<Option<File>>,
}

impl AccessLog {
    pub fn with_file(path: &FsPath) -> std::io::Result<Self> {
        let log = Self::default();
        *log.file.lock().unwrap() = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(log)
    }

    fn record(&self, rec: AccessRecord) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let mut line = serde_json::to_vec(&rec).expect("record serializes");
            line.push(b'\n');
            if let Err(e) = f.write_all(&line) {
                tracing::warn!("access log write failed: {e}");
            }
        }
        self.records.lock().unwrap().push(rec);
    }

    pub fn snapshot(&self) -> Vec<AccessRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct StorageConfig {
    pub buckets: BTreeMap<String, BucketPolicy>,
    /// Secret for credentialed writes; upload tokens are keyed from it too.
    pub secret: Vec<u8>,
    pub body_limit: usize,
}

pub struct CloudStore {
    backend: Arc<dyn ObjectBackend>,
    buckets: BTreeMap<String, BucketPolicy>,
    secret: Vec<u8>,
    tokens: TokenAuthority,
    log: AccessLog,
    body_limit: usize,
}

#[derive(Deserialize)]
struct PutQuery {
    token: Option<String>,
}

fn unix_now() -> u64 {
    now_ms() / 1000
}

impl CloudStore {
    pub fn new(backend: Arc<dyn ObjectBackend>, config: StorageConfig, log: AccessLog) -> Arc<Self> {
        Arc::new(Self {
            backend,
            tokens: TokenAuthority::from_storage_secret(&config.secret),
            buckets: config.buckets,
            secret: config.secret,
            log,
            body_limit: config.body_limit,
        })
    }

    pub fn access_log(&self) -> &AccessLog {
        &self.log
    }

    fn bucket(&self, bucket: &str) -> Result<BucketPolicy, ApiError> {
        self.buckets
            .get(bucket)
            .copied()
            .ok_or_else(|| ApiError::new(ErrorCode::NotFound, "no such bucket"))
    }

    fn has_credential(&self, headers: &HeaderMap) -> bool {
        headers
            .get(CREDENTIAL_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| hex::decode(v).ok())
            .is_some_and(|v| bool::from(v.ct_eq(&self.secret)))
    }

    fn authorize_put(
        &self,
        bucket: &str,
        key: &str,
        headers: &HeaderMap,
        token: Option<&str>,
    ) -> Result<AuthKind, ApiError> {
        names::validate("bucket", bucket)?;
        names::validate("object", key)?;
        self.bucket(bucket)?;
        if let Some(t) = token {
            let token = UploadToken::from_query_value(bucket, key, t)
                .map_err(|e| ApiError::new(ErrorCode::TokenRejected, e.to_string()))?;
            return self
                .tokens
                .verify(&token, bucket, key, unix_now())
                .map(|()| AuthKind::Token)
                .map_err(|e| ApiError::new(ErrorCode::TokenRejected, e.to_string()));
        }
        if self.has_credential(headers) {
            Ok(AuthKind::Credential)
        } else {
            Err(ApiError::unauthorized("missing or bad storage credential"))
        }
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/{bucket}/{key}", get(get_object).put(put_object))
            .layer(DefaultBodyLimit::max(self.body_limit))
            .with_state(self.clone())
    }

    fn log_request(&self, op: &str, bucket: &str, key: &str, headers: &HeaderMap, auth: AuthKind, status: u16, bytes: usize) {
        self.log.record(AccessRecord {
            ts_ms: now_ms(),
            op: op.to_owned(),
            bucket: bucket.to_owned(),
            key: key.to_owned(),
            principal: headers.get(USER_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned),
            auth,
            status,
            bytes,
            headers: headers.keys().map(|k| k.as_str().to_owned()).collect(),
        });
    }
}

type Store = State<Arc<CloudStore>>;

async fn put_object(
    State(store): Store,
    Path((bucket, key)): Path<(String, String)>,
    Query(q): Query<PutQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let len = body.len();
    let (auth, result) = match store.authorize_put(&bucket, &key, &headers, q.token.as_deref()) {
        Err(e) => (AuthKind::Anonymous, Err(e)),
        Ok(auth) => {
            let (s, b, k) = (store.clone(), bucket.clone(), key.clone());
            let r = tokio::task::spawn_blocking(move || {
                s.backend.put(&b, &k, &body).map(|_| etag(&body))
            })
            .await
            .map_err(ApiError::from)
            .and_then(|r| r.map_err(|e| ApiError::internal(e.to_string())));
            (auth, r)
        }
    };
    let resp = match result {
        Ok(tag) => Json(PutResult { etag: tag }).into_response(),
        Err(e) => e.into_response(),
    };
    store.log_request("put", &bucket, &key, &headers, auth, resp.status().as_u16(), len);
    resp
}

async fn get_object(State(store): Store, Path((bucket, key)): Path<(String, String)>, headers: HeaderMap) -> Response {
    let result = async {
        names::validate("bucket", &bucket)?;
        names::validate("object", &key)?;
        let policy = store.bucket(&bucket)?;
        let auth = if store.has_credential(&headers) {
            AuthKind::Credential
        } else if policy.public_read {
            AuthKind::Anonymous
        } else {
            return Err(ApiError::unauthorized("bucket is not public"));
        };
        let (s, b, k) = (store.clone(), bucket.clone(), key.clone());
        let bytes = tokio::task::spawn_blocking(move || s.backend.get(&b, &k))
            .await?
            .map_err(|e| ApiError::internal(e.to_string()))?
            .ok_or_else(|| ApiError::new(ErrorCode::NotFound, "no such object"))?;
        Ok((auth, bytes))
    }
    .await;
    let (auth, resp, len) = match result {
        Ok((auth, bytes)) => {
            let len = bytes.len();
            let tag = etag(&bytes);
            (auth, ([(CONTENT_TYPE, OCTET_STREAM.to_owned()), (ETAG, tag)], bytes).into_response(), len)
        }
        Err(e) => (AuthKind::Anonymous, e.into_response(), 0),
    };
    store.log_request("get", &bucket, &key, &headers, auth, resp.status().as_u16(), len);
    resp
}

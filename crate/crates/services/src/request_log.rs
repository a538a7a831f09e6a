//! Per-service request log, kept in memory and optionally appended to a
//! JSON-lines file.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Request, State};
use axum::middleware::Next;
use axum::response::Response;
use serde::{Deserialize, Serialize};

use crate::auth::bearer_user;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub ts_ms: u64,
    pub service: String,
    pub method: String,
    pub path: String,
    /// User named in a bearer credential, if any.
    pub principal: Option<String>,
    /// True for sealed admin-channel requests.
    pub admin_channel: bool,
    pub status: u16,
}

pub struct RequestLog {
    service: String,
    records: Mutex<Vec<RequestRecord>>,
    file: Mutex<Option<File>>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl RequestLog {
    pub fn new(service: &str) -> Arc<Self> {
        Arc::new(Self {
            service: service.to_owned(),
            records: Mutex::new(Vec::new()),
            file: Mutex::new(None),
        })
    }

    pub fn with_file(service: &str, path: &Path) -> std::io::Result<Arc<Self>> {
        let log = Self::new(service);
        *log.file.lock().unwrap() = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(log)
    }

    pub fn record(&self, rec: RequestRecord) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let mut line = serde_json::to_vec(&rec).expect("record serializes");
            line.push(b'\n');
            if let Err(e) = f.write_all(&line) {
                tracing::warn!("request log write failed: {e}");
            }
        }
        self.records.lock().unwrap().push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<RequestRecord> {
        self.records.lock().unwrap().clone()
    }

    /// Records appended since the log held `mark` entries.
    pub fn since(&self, mark: usize) -> Vec<RequestRecord> {
        self.records.lock().unwrap().get(mark..).map(<[_]>::to_vec).unwrap_or_default()
    }
}

pub async fn middleware(State(log): State<Arc<RequestLog>>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let path = req.uri().path().to_owned();
    let principal = bearer_user(req.headers());
    let admin_channel = req.headers().contains_key(crate::attest::SESSION_HEADER);
    let resp = next.run(req).await;
    log.record(RequestRecord {
        ts_ms: now_ms(),
        service: log.service.clone(),
        method,
        path,
        principal,
        admin_channel,
        status: resp.status().as_u16(),
    });
    resp
}

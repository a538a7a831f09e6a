//! Request authentication: bearer user credentials and sealed admin bodies.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::HeaderMap;
use axum::response::{IntoResponse, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::attest::{OpenedRequest, Sessions, SESSION_HEADER};
use crate::error::ApiError;
use crate::names;

pub const OCTET_STREAM: &str = "application/octet-stream";

/// A user's bearer credential, `Authorization: Bearer <uname>:<hex>`.
#[derive(Clone, Debug)]
pub struct UserAuth {
    pub uname: String,
    pub credential: [u8; 32],
}

impl UserAuth {
    pub fn header_value(&self) -> String {
        format!("Bearer {}:{}", self.uname, hex::encode(self.credential))
    }
}

fn parse_bearer(headers: &HeaderMap) -> Option<(&str, &str)> {
    let v = headers.get(AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ")?.rsplit_once(':')
}

/// The user named by the bearer credential, without checking it.
pub fn bearer_user(headers: &HeaderMap) -> Option<String> {
    parse_bearer(headers).map(|(u, _)| u.to_owned())
}

impl<S: Send + Sync> FromRequestParts<S> for UserAuth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        let (uname, cred) =
            parse_bearer(&parts.headers).ok_or_else(|| ApiError::unauthorized("missing bearer credential"))?;
        names::validate("user", uname)?;
        let credential = hex::decode(cred)
            .ok()
            .and_then(|c| c.try_into().ok())
            .ok_or_else(|| ApiError::unauthorized("malformed credential"))?;
        Ok(UserAuth { uname: uname.to_owned(), credential })
    }
}

/// Router state that owns an attested-session table.
pub trait HasSessions {
    fn sessions(&self) -> Arc<Sessions>;
}

/// A request body sealed under an attested admin channel.
pub struct Sealed<T> {
    pub value: T,
    opened: OpenedRequest,
    method: String,
    path: String,
    sessions: Arc<Sessions>,
}

impl<T> Sealed<T> {
    pub fn session(&self) -> &[u8; 16] {
        &self.opened.session
    }

    pub fn require_admin(&self) -> Result<(), ApiError> {
        if self.sessions.is_admin(&self.opened.session) {
            Ok(())
        } else {
            Err(ApiError::unauthorized("admin session not authenticated"))
        }
    }

    /// Seals `value` as the response body.
    pub fn reply<R: Serialize>(&self, value: &R) -> Result<Response, ApiError> {
        let body = serde_json::to_vec(value).map_err(|e| ApiError::internal(e.to_string()))?;
        let sealed = self.sessions.seal_response(&self.opened, &self.method, &self.path, &body)?;
        Ok(([(CONTENT_TYPE, OCTET_STREAM)], sealed).into_response())
    }
}

impl<S, T> FromRequest<S> for Sealed<T>
where
    S: HasSessions + Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let sessions = state.sessions();
        let method = req.method().to_string();
        let path = req.uri().path().to_owned();
        let session = req
            .headers()
            .get(SESSION_HEADER)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthorized("missing admin session"))?
            .to_owned();
        let body = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let opened = sessions.open(&session, &method, &path, &body)?;
        let value = serde_json::from_slice(&opened.body)
            .map_err(|e| ApiError::bad_request(format!("sealed body: {e}")))?;
        Ok(Sealed { value, opened, method, path, sessions })
    }
}

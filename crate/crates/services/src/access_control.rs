//! The access-control service: provisioning, user keys, groups and key
//! enveloping.

use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::response::Response;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine;

use asky_core::metadata::{DocumentBackend, MasterKey, MetadataStore, Role, Roles};
use asky_core::{build_envelope, build_envelope_indexed, Envelope, EnvelopeMode, FileKey, UserSecretKey};

use crate::api::*;
use crate::attest::{credential_matches, AttestRequest, Quote, Sessions};
use crate::auth::{HasSessions, Sealed, UserAuth};
use crate::error::{ApiError, ErrorCode};
use crate::names;
use crate::request_log::{self, RequestLog};

pub const SERVICE_NAME: &str = "access-control";

#[derive(Clone, Debug)]
pub struct AccessControlConfig {
    pub allow_reprovision: bool,
    pub body_limit: usize,
}

impl Default for AccessControlConfig {
    fn default() -> Self {
        Self { allow_reprovision: false, body_limit: 1 << 20 }
    }
}

struct Provisioned {
    store: Arc<MetadataStore>,
    admin_credential: [u8; 32],
}

pub struct AccessControl {
    backend: Arc<dyn DocumentBackend>,
    state: RwLock<Option<Arc<Provisioned>>>,
    sessions: Arc<Sessions>,
    log: Arc<RequestLog>,
    config: AccessControlConfig,
}

fn hex32(field: &str, s: &str) -> Result<[u8; 32], ApiError> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| ApiError::bad_request(format!("{field} must be 32 hex bytes")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await?
}

impl AccessControl {
    pub fn new(backend: Arc<dyn DocumentBackend>, config: AccessControlConfig) -> Arc<Self> {
        Self::with_log(backend, config, RequestLog::new(SERVICE_NAME))
    }

    pub fn with_log(backend: Arc<dyn DocumentBackend>, config: AccessControlConfig, log: Arc<RequestLog>) -> Arc<Self> {
        Arc::new(Self {
            backend,
            state: RwLock::new(None),
            sessions: Arc::new(Sessions::new(SERVICE_NAME)),
            log,
            config,
        })
    }

    pub fn request_log(&self) -> &Arc<RequestLog> {
        &self.log
    }

    pub fn sessions(&self) -> &Arc<Sessions> {
        &self.sessions
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

    pub fn attest(&self, req: &AttestRequest) -> Result<Quote, ApiError> {
        self.sessions.attest(req)
    }

    /// Installs `M_k` and the admin credential. Refused when already
    /// provisioned unless the configuration allows re-provisioning.
    pub fn provision(&self, master: MasterKey, admin_credential: [u8; 32]) -> Result<(), ApiError> {
        let mut state = self.state.write().unwrap();
        if state.is_some() && !self.config.allow_reprovision {
            return Err(ApiError::new(ErrorCode::AlreadyProvisioned, "service is already provisioned"));
        }
        *state = Some(Arc::new(Provisioned {
            store: Arc::new(MetadataStore::new(master, self.backend.clone())),
            admin_credential,
        }));
        self.sessions.revoke_all_admin();
        Ok(())
    }

    fn authenticate(&self, p: &Provisioned, auth: &UserAuth) -> Result<(), ApiError> {
        if p.store.verify_user_credential(&auth.uname, &auth.credential) {
            Ok(())
        } else {
            Err(ApiError::unauthorized("bad user credential"))
        }
    }

    /// Returns the new key and the user's bootstrap credential.
    pub async fn create_user(&self, uname: &str) -> Result<(UserSecretKey, [u8; 32]), ApiError> {
        names::validate("user", uname)?;
        let p = self.provisioned()?;
        let uname = uname.to_owned();
        blocking(move || {
            let usk = UserSecretKey::random();
            p.store.put_user(&uname, &usk)?;
            Ok((usk, p.store.user_credential(&uname)))
        })
        .await
    }

    pub async fn fetch_user_key(&self, auth: &UserAuth) -> Result<UserSecretKey, ApiError> {
        let p = self.provisioned()?;
        let auth = auth.clone();
        blocking(move || {
            if !p.store.user_exists(&auth.uname)? {
                return Err(ApiError::new(ErrorCode::NotFound, "user not found"));
            }
            if !p.store.verify_user_credential(&auth.uname, &auth.credential) {
                return Err(ApiError::unauthorized("bad user credential"));
            }
            Ok(p.store.get_user_key(&auth.uname)?)
        })
        .await
    }

    pub async fn create_group(&self, gname: &str) -> Result<GroupInfo, ApiError> {
        names::validate("group", gname)?;
        let p = self.provisioned()?;
        let gname = gname.to_owned();
        blocking(move || {
            p.store.create_group(&gname)?;
            let s = p.store.group_summary(&gname)?;
            Ok(GroupInfo { gname, version: s.version, members: s.members })
        })
        .await
    }

    pub async fn add_member(&self, gname: &str, uname: &str, roles: Roles) -> Result<u64, ApiError> {
        let p = self.provisioned()?;
        let (g, u) = (gname.to_owned(), uname.to_owned());
        blocking(move || Ok(p.store.upsert_member(&g, &u, roles)?)).await
    }

    /// Bulk membership import in a single group update.
    pub async fn add_members(&self, gname: &str, members: Vec<(String, Roles)>) -> Result<u64, ApiError> {
        let p = self.provisioned()?;
        let g = gname.to_owned();
        blocking(move || {
            let refs: Vec<(&str, Roles)> = members.iter().map(|(u, r)| (u.as_str(), *r)).collect();
            Ok(p.store.upsert_members(&g, &refs)?)
        })
        .await
    }

    pub async fn revoke_member(&self, gname: &str, uname: &str) -> Result<u64, ApiError> {
        let p = self.provisioned()?;
        let (g, u) = (gname.to_owned(), uname.to_owned());
        blocking(move || Ok(p.store.remove_member(&g, &u)?)).await
    }

    /// Wraps `fk` for every reader of `gname`, provided `writer` may write.
    pub async fn key_enveloping(
        &self,
        writer: &UserAuth,
        gname: &str,
        fk: FileKey,
        mode: EnvelopeMode,
    ) -> Result<Envelope, ApiError> {
        let p = self.provisioned()?;
        self.authenticate(&p, writer)?;
        let (g, w) = (gname.to_owned(), writer.uname.clone());
        blocking(move || {
            if !p.store.check_role(&g, &w, Role::Writer)? {
                return Err(ApiError::permission_denied(format!("{w} may not write to {g}")));
            }
            let keys: Vec<UserSecretKey> =
                p.store.list_member_keys(&g, Role::Reader)?.into_iter().map(|m| m.key).collect();
            Ok(match mode {
                EnvelopeMode::Linear => build_envelope(&keys, &fk)?,
                EnvelopeMode::Indexed => build_envelope_indexed(&keys, &fk)?,
            })
        })
        .await
    }

    pub async fn check_write_permission(&self, auth: &UserAuth, gname: &str) -> Result<bool, ApiError> {
        let p = self.provisioned()?;
        self.authenticate(&p, auth)?;
        let (g, u) = (gname.to_owned(), auth.uname.clone());
        blocking(move || Ok(p.store.check_role(&g, &u, Role::Writer)?)).await
    }

    /// Full integrity sweep over the metadata backend.
    pub async fn audit(&self) -> Result<usize, ApiError> {
        let p = self.provisioned()?;
        blocking(move || Ok(p.store.audit()?)).await
    }

    pub fn router(self: &Arc<Self>) -> Router {
        let log = self.log.clone();
        let limit = self.config.body_limit;
        Router::new()
            .route("/attest", post(attest))
            .route("/provision", post(provision))
            .route("/session", post(open_session))
            .route("/users", post(create_user))
            .route("/users/{uname}/key", get(fetch_user_key))
            .route("/groups", post(create_group))
            .route("/groups/{gname}/members/{uname}", put(add_member).delete(revoke_member))
            .route("/groups/{gname}/envelope", post(envelope))
            .route("/groups/{gname}/can-write/{uname}", get(can_write))
            .layer(DefaultBodyLimit::max(limit))
            .layer(axum::middleware::from_fn_with_state(log, request_log::middleware))
            .with_state(self.clone())
    }
}

type Ac = State<Arc<AccessControl>>;

impl HasSessions for Arc<AccessControl> {
    fn sessions(&self) -> Arc<Sessions> {
        self.sessions.clone()
    }
}

async fn attest(State(ac): Ac, Json(req): Json<AttestRequest>) -> Result<Json<Quote>, ApiError> {
    Ok(Json(ac.attest(&req)?))
}

async fn provision(State(ac): Ac, req: Sealed<ProvisionAccessControl>) -> Result<Response, ApiError> {
    if ac.is_provisioned() {
        req.require_admin()?;
    }
    let master = MasterKey::from_bytes(hex32("master_key", &req.value.master_key)?);
    let credential = hex32("admin_credential", &req.value.admin_credential)?;
    ac.provision(master, credential)?;
    ac.sessions.grant_admin(req.session());
    req.reply(&Ack::ok())
}

async fn open_session(State(ac): Ac, req: Sealed<OpenSession>) -> Result<Response, ApiError> {
    let p = ac.provisioned()?;
    if !credential_matches(&p.admin_credential, &req.value.admin_credential) {
        return Err(ApiError::unauthorized("bad admin credential"));
    }
    ac.sessions.grant_admin(req.session());
    req.reply(&Ack::ok())
}

async fn create_user(State(ac): Ac, req: Sealed<CreateUser>) -> Result<Response, ApiError> {
    req.require_admin()?;
    let (usk, credential) = ac.create_user(&req.value.uname).await?;
    req.reply(&CreatedUser {
        uname: req.value.uname.clone(),
        usk: usk.to_hex(),
        credential: hex::encode(credential),
    })
}

async fn fetch_user_key(State(ac): Ac, Path(uname): Path<String>, auth: UserAuth) -> Result<Json<UserKey>, ApiError> {
    if auth.uname != uname {
        return Err(ApiError::permission_denied("credential is for another user"));
    }
    Ok(Json(UserKey { usk: ac.fetch_user_key(&auth).await?.to_hex() }))
}

async fn create_group(State(ac): Ac, req: Sealed<CreateGroup>) -> Result<Response, ApiError> {
    req.require_admin()?;
    let info = ac.create_group(&req.value.gname).await?;
    req.reply(&info)
}

async fn add_member(
    State(ac): Ac,
    Path((gname, uname)): Path<(String, String)>,
    req: Sealed<SetMember>,
) -> Result<Response, ApiError> {
    req.require_admin()?;
    let roles = roles_from_names(&req.value.roles).ok_or_else(|| ApiError::bad_request("no roles given"))?;
    let version = ac.add_member(&gname, &uname, roles).await?;
    req.reply(&MembershipChange { version })
}

async fn revoke_member(
    State(ac): Ac,
    Path((gname, uname)): Path<(String, String)>,
    req: Sealed<serde_json::Value>,
) -> Result<Response, ApiError> {
    req.require_admin()?;
    let version = ac.revoke_member(&gname, &uname).await?;
    req.reply(&MembershipChange { version })
}

async fn envelope(
    State(ac): Ac,
    Path(gname): Path<String>,
    auth: UserAuth,
    Json(req): Json<EnvelopeRequest>,
) -> Result<Json<EnvelopeResponse>, ApiError> {
    let fk = FileKey::from_bytes(hex32("file_key", &req.file_key)?);
    let env = ac.key_enveloping(&auth, &gname, fk, req.mode.into()).await?;
    Ok(Json(EnvelopeResponse {
        members: env.member_count() as u32,
        envelope: base64::engine::general_purpose::STANDARD.encode(env.to_bytes()),
    }))
}

async fn can_write(
    State(ac): Ac,
    Path((gname, uname)): Path<(String, String)>,
    auth: UserAuth,
) -> Result<Json<CanWrite>, ApiError> {
    if auth.uname != uname {
        return Err(ApiError::permission_denied("credential is for another user"));
    }
    Ok(Json(CanWrite { can_write: ac.check_write_permission(&auth, &gname).await? }))
}

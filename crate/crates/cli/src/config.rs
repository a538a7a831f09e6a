//! `key = value` configuration and key files.

use std::collections::BTreeMap;
use std::io::Write;
use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
use std::path::{Path, PathBuf};

use asky_core::{UserSecretKey, VerificationKey};
use asky_services::UserAuth;

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

pub fn render_kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Refuses files readable or writable by group or others.
pub fn check_private(path: &Path) -> Result<(), CliError> {
    let mode = std::fs::metadata(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .permissions()
        .mode();
    if mode & 0o077 != 0 {
        return Err(CliError::Config(format!(
            "{} has mode {:o}; key files must not be accessible to group or others (chmod 600)",
            path.display(),
            mode & 0o777
        )));
    }
    Ok(())
}

pub fn write_private(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)
        .map_err(io)?;
    f.set_permissions(std::fs::Permissions::from_mode(0o600)).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

pub fn read_private(path: &Path) -> Result<String, CliError> {
    check_private(path)?;
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_hex32(path: &Path) -> Result<[u8; 32], CliError> {
    hex::decode(read_private(path)?.trim())
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| CliError::Config(format!("{} must hold 32 hex bytes", path.display())))
}

#[derive(Clone, Debug, Default)]
pub struct ClientConfig {
    pub access_control_url: String,
    pub writer_shield_url: String,
    pub storage_url: String,
    pub bucket: String,
    pub ca_cert: PathBuf,
    pub user: Option<String>,
    pub key_file: Option<PathBuf>,
    pub verification_key: Option<String>,
    pub indexed: bool,
    pub token_mode: bool,
    pub admin_credential_file: Option<PathBuf>,
    pub session_dir: PathBuf,
}

fn flag(map: &BTreeMap<String, String>, key: &str) -> Result<bool, CliError> {
    match map.get(key).map(String::as_str) {
        None | Some("false") | Some("no") | Some("0") => Ok(false),
        Some("true") | Some("yes") | Some("1") => Ok(true),
        Some(v) => Err(CliError::Config(format!("{key}: expected true or false, got {v}"))),
    }
}

impl ClientConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let map = parse_kv(text)?;
        let known = [
            "access_control_url",
            "writer_shield_url",
            "storage_url",
            "bucket",
            "ca_cert",
            "user",
            "key_file",
            "verification_key",
            "indexed",
            "token_mode",
            "admin_credential_file",
            "session_dir",
        ];
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown setting {k}")));
        }
        let path = |k: &str| map.get(k).map(|p| base.join(p));
        let url = |k: &str| -> Result<String, CliError> {
            let v = map.get(k).ok_or_else(|| CliError::Config(format!("missing {k}")))?;
            if !v.starts_with("https://") {
                return Err(CliError::Config(format!("{k} must be an https:// URL")));
            }
            Ok(v.clone())
        };
        Ok(Self {
            access_control_url: url("access_control_url")?,
            writer_shield_url: url("writer_shield_url")?,
            storage_url: url("storage_url")?,
            bucket: map.get("bucket").cloned().unwrap_or_else(|| "files".into()),
            ca_cert: path("ca_cert").ok_or_else(|| CliError::Config("missing ca_cert".into()))?,
            user: map.get("user").cloned(),
            key_file: path("key_file"),
            verification_key: map.get("verification_key").cloned(),
            indexed: flag(&map, "indexed")?,
            token_mode: flag(&map, "token_mode")?,
            admin_credential_file: path("admin_credential_file"),
            session_dir: path("session_dir").unwrap_or_else(|| base.to_path_buf()),
        })
    }

    pub fn verification_key(&self) -> Result<VerificationKey, CliError> {
        let hex = self
            .verification_key
            .as_deref()
            .ok_or_else(|| CliError::Config("missing verification_key".into()))?;
        VerificationKey::from_hex(hex).map_err(|e| CliError::Config(format!("verification_key: {e}")))
    }

    pub fn identity(&self) -> Result<Identity, CliError> {
        let path = self.key_file.as_deref().ok_or_else(|| CliError::Config("missing key_file".into()))?;
        let id = Identity::load(path)?;
        if let Some(u) = &self.user {
            if u != &id.auth.uname {
                return Err(CliError::Config(format!("key file belongs to {}, not {u}", id.auth.uname)));
            }
        }
        Ok(id)
    }
}

/// A user's secret key and bootstrap credential.
#[derive(Clone, Debug)]
pub struct Identity {
    pub auth: UserAuth,
    pub usk: UserSecretKey,
}

impl Identity {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let map = parse_kv(&read_private(path)?)?;
        let get = |k: &str| map.get(k).ok_or_else(|| CliError::Config(format!("{}: missing {k}", path.display())));
        let usk = UserSecretKey::from_hex(get("usk")?).map_err(|e| CliError::Config(e.to_string()))?;
        let credential = hex::decode(get("credential")?)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| CliError::Config("credential must be 32 hex bytes".into()))?;
        Ok(Self { auth: UserAuth { uname: get("user")?.clone(), credential }, usk })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_private(
            path,
            &render_kv(&[
                ("user", self.auth.uname.clone()),
                ("usk", self.usk.to_hex()),
                ("credential", hex::encode(self.auth.credential)),
            ]),
        )
    }
}

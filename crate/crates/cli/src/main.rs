use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use asky_cli::config::{read_hex32, write_private};
use asky_cli::{AskyClient, CliError, ClientConfig, Identity, WriteOptions};
use asky_core::TaSigningKey;
use asky_services::api::{ProvisionWriterShield, RoleName};
use asky_services::attest::{measurement, ChannelKeys};
use asky_services::{access_control, writer_shield, AdminChannel, ErrorCode, UserAuth};

#[derive(Parser)]
#[command(name = "asky", version, about = "Anonymous group file sharing client")]
struct Cli {
    #[arg(long, env = "ASKY_CONFIG", default_value = "asky.conf", global = true)]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a file for a group and upload it; prints the object key.
    Write {
        #[arg(long)]
        group: String,
        /// Build a label-indexed envelope.
        #[arg(long)]
        indexed: bool,
        /// Upload directly with a token instead of through the proxy.
        #[arg(long)]
        token_mode: bool,
        path: PathBuf,
    },
    /// Download, verify and decrypt an object.
    Read {
        object_key: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Admin(Admin),
}

#[derive(Clone, Copy, ValueEnum)]
enum Service {
    AccessControl,
    WriterShield,
}

impl Service {
    fn name(self) -> &'static str {
        match self {
            Service::AccessControl => access_control::SERVICE_NAME,
            Service::WriterShield => writer_shield::SERVICE_NAME,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Reader,
    Writer,
}

#[derive(Subcommand)]
enum Admin {
    /// Attest a service and open a sealed admin session.
    Attest {
        #[arg(long, value_enum, default_value = "access-control")]
        service: Service,
        /// Expected measurement; defaults to this release's.
        #[arg(long)]
        expect: Option<String>,
    },
    /// Authenticate the saved session with the admin credential.
    Login {
        #[arg(long, value_enum, default_value = "access-control")]
        service: Service,
    },
    /// Write a fresh 32-byte secret as hex to a private file.
    GenSecret { out: PathBuf },
    ProvisionAccessControl {
        #[arg(long)]
        master_key_file: PathBuf,
    },
    ProvisionWriterShield {
        #[arg(long)]
        signing_key_file: PathBuf,
        #[arg(long)]
        storage_secret_file: PathBuf,
        /// Storage endpoint as seen by the proxy; defaults to `storage_url`.
        #[arg(long)]
        storage_endpoint: Option<String>,
    },
    /// Create a user and save their key file.
    CreateUser {
        uname: String,
        #[arg(long)]
        key_out: PathBuf,
    },
    CreateGroup { gname: String },
    AddMember {
        gname: String,
        uname: String,
        #[arg(long = "role", value_enum, default_values = ["reader"])]
        roles: Vec<RoleArg>,
    },
    RevokeMember { gname: String, uname: String },
    /// Fetch a user's key with their bootstrap credential.
    FetchKey {
        #[arg(long)]
        user: String,
        #[arg(long)]
        credential: String,
        #[arg(long)]
        key_out: PathBuf,
    },
    /// Print the write proxy's signature verification key.
    VerificationKey,
}

fn session_path(config: &ClientConfig, service: Service) -> PathBuf {
    config.session_dir.join(format!("{}.session", service.name()))
}

struct Session {
    channel: AdminChannel,
    path: PathBuf,
}

impl Session {
    fn load(client: &AskyClient, config: &ClientConfig, service: Service) -> Result<Self, CliError> {
        let path = session_path(config, service);
        let text = asky_cli::config::read_private(&path)
            .map_err(|_| CliError::Config(format!("no admin session for {}; run `asky admin attest`", service.name())))?;
        let keys = ChannelKeys::import(&text).ok_or_else(|| CliError::Config(format!("{} is corrupt", path.display())))?;
        let base = match service {
            Service::AccessControl => client.access_control.base().to_owned(),
            Service::WriterShield => config.writer_shield_url.clone(),
        };
        let http = asky_services::tls::client(&read_ca(config)?).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { channel: AdminChannel::resume(http, &base, keys)?, path })
    }

    /// Persists the advanced sequence number.
    fn save(&self) -> Result<(), CliError> {
        write_private(&self.path, &self.channel.keys().export())
    }
}

fn read_ca(config: &ClientConfig) -> Result<String, CliError> {
    std::fs::read_to_string(&config.ca_cert).map_err(|e| CliError::Config(format!("{}: {e}", config.ca_cert.display())))
}

fn admin_credential(config: &ClientConfig) -> Result<[u8; 32], CliError> {
    let path = config
        .admin_credential_file
        .as_deref()
        .ok_or_else(|| CliError::Config("missing admin_credential_file".into()))?;
    read_hex32(path)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Other(e.to_string());
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(io),
        None => std::io::stdout().write_all(bytes).map_err(io),
    }
}

async fn run_admin(cmd: Admin, config: &ClientConfig, client: &AskyClient) -> Result<(), CliError> {
    let with_session = |service| Session::load(client, config, service);
    match cmd {
        Admin::Attest { service, expect } => {
            let expected = match expect {
                Some(h) => hex::decode(&h)
                    .ok()
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| CliError::Config("--expect must be 32 hex bytes".into()))?,
                None => measurement(service.name()),
            };
            let channel = match service {
                Service::AccessControl => client.access_control.attest(&expected).await,
                Service::WriterShield => client.writer_shield.attest(&expected).await,
            }
            .map_err(|e| CliError::Permission(e.to_string()))?;
            std::fs::create_dir_all(&config.session_dir).map_err(|e| CliError::Config(e.to_string()))?;
            let session = Session { channel, path: session_path(config, service) };
            let mut status = "attested";
            if let Ok(cred) = admin_credential(config) {
                match session.channel.login(&cred).await {
                    Ok(()) => status = "attested and logged in",
                    Err(e) if e.code() == Some(ErrorCode::Unprovisioned) => status = "attested; service unprovisioned",
                    Err(e) => return Err(e.into()),
                }
            }
            session.save()?;
            println!("{} {status} (measurement {})", service.name(), hex::encode(expected));
        }
        Admin::Login { service } => {
            let s = with_session(service)?;
            let r = s.channel.login(&admin_credential(config)?).await;
            s.save()?;
            r?;
        }
        Admin::GenSecret { out } => {
            let mut b = [0u8; 32];
            rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut b);
            write_private(&out, &hex::encode(b))?;
        }
        Admin::ProvisionAccessControl { master_key_file } => {
            let s = with_session(Service::AccessControl)?;
            let r = s
                .channel
                .provision_access_control(&read_hex32(&master_key_file)?, &admin_credential(config)?)
                .await;
            s.save()?;
            r?;
        }
        Admin::ProvisionWriterShield { signing_key_file, storage_secret_file, storage_endpoint } => {
            let s = with_session(Service::WriterShield)?;
            let seed = read_hex32(&signing_key_file)?;
            let req = ProvisionWriterShield {
                signing_seed: hex::encode(seed),
                storage_endpoint: storage_endpoint.unwrap_or_else(|| config.storage_url.clone()),
                bucket: config.bucket.clone(),
                storage_secret: hex::encode(read_hex32(&storage_secret_file)?),
                admin_credential: hex::encode(admin_credential(config)?),
            };
            let r = s.channel.provision_writer_shield(&req).await;
            s.save()?;
            r?;
            println!("{}", TaSigningKey::from_seed(&seed).verification_key().to_hex());
        }
        Admin::CreateUser { uname, key_out } => {
            let s = with_session(Service::AccessControl)?;
            let r = s.channel.create_user(&uname).await;
            s.save()?;
            let (usk, auth) = r?;
            Identity { auth, usk }.save(&key_out)?;
        }
        Admin::CreateGroup { gname } => {
            let s = with_session(Service::AccessControl)?;
            let r = s.channel.create_group(&gname).await;
            s.save()?;
            r?;
        }
        Admin::AddMember { gname, uname, roles } => {
            let roles: Vec<RoleName> = roles
                .into_iter()
                .map(|r| match r {
                    RoleArg::Reader => RoleName::Reader,
                    RoleArg::Writer => RoleName::Writer,
                })
                .collect();
            let s = with_session(Service::AccessControl)?;
            let r = s.channel.add_member(&gname, &uname, &roles).await;
            s.save()?;
            r?;
        }
        Admin::RevokeMember { gname, uname } => {
            let s = with_session(Service::AccessControl)?;
            let r = s.channel.revoke_member(&gname, &uname).await;
            s.save()?;
            r?;
        }
        Admin::FetchKey { user, credential, key_out } => {
            let credential = hex::decode(&credential)
                .ok()
                .and_then(|v| v.try_into().ok())
                .ok_or_else(|| CliError::Config("--credential must be 32 hex bytes".into()))?;
            let auth = UserAuth { uname: user, credential };
            let usk = asky_cli::with_retries(|| client.access_control.fetch_user_key(&auth)).await?;
            Identity { auth, usk }.save(&key_out)?;
        }
        Admin::VerificationKey => {
            println!("{}", client.writer_shield.verification_key().await?.to_hex());
        }
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let config = ClientConfig::load(&cli.config)?;
    let client = AskyClient::from_config(&config)?;
    match cli.command {
        Command::Write { group, indexed, token_mode, path } => {
            let id = config.identity()?;
            let plaintext = std::fs::read(&path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
            let opts = WriteOptions { indexed: indexed || config.indexed, token_mode: token_mode || config.token_mode };
            let receipt = client.write_file(&id, &group, &plaintext, opts).await?;
            println!("{}", receipt.object_key);
        }
        Command::Read { object_key, out } => {
            let id = config.identity()?;
            let plaintext = client.read_file(&config.verification_key()?, &id.usk, &object_key).await?;
            write_output(out.as_deref(), &plaintext)?;
        }
        Command::Admin(cmd) => run_admin(cmd, &config, &client).await?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asky: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

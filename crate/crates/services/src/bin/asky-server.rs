use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use asky_core::metadata::{DocumentBackend, FileBackend, MemoryBackend};
use asky_services::access_control::{self, AccessControl, AccessControlConfig};
use asky_services::attest::measurement;
use asky_services::request_log::RequestLog;
use asky_services::storage::{AccessLog, BucketPolicy, CloudStore, FsObjectBackend, StorageConfig};
use asky_services::tls::{self, DevPki};
use asky_services::writer_shield::{self, http_uploader_factory, HttpOracle, WriterShield, WriterShieldConfig};
use asky_services::AccessControlClient;

#[derive(Parser)]
#[command(name = "asky-server", version, about = "Run an asky service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Listen {
    #[arg(long, env = "ASKY_LISTEN", default_value = "127.0.0.1:8443")]
    listen: SocketAddr,
    /// PEM certificate chain. Plaintext listeners are not supported.
    #[arg(long, env = "ASKY_TLS_CERT")]
    tls_cert: PathBuf,
    #[arg(long, env = "ASKY_TLS_KEY")]
    tls_key: PathBuf,
    /// Append every request to this JSON-lines file.
    #[arg(long, env = "ASKY_REQUEST_LOG")]
    request_log: Option<PathBuf>,
    #[arg(long, env = "ASKY_BODY_LIMIT", default_value_t = 64 << 20)]
    body_limit: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Object store.
    Storage {
        #[command(flatten)]
        listen: Listen,
        #[arg(long, env = "ASKY_STORAGE_DIR")]
        data_dir: PathBuf,
        /// File holding the hex storage secret.
        #[arg(long, env = "ASKY_STORAGE_SECRET_FILE")]
        secret_file: PathBuf,
        /// Comma-separated buckets; suffix `:public` enables anonymous reads.
        #[arg(long, env = "ASKY_BUCKETS", value_delimiter = ',', default_value = "files:public")]
        buckets: Vec<String>,
    },
    /// Access-control service.
    AccessControl {
        #[command(flatten)]
        listen: Listen,
        /// Append-only metadata log; in-memory when absent.
        #[arg(long, env = "ASKY_METADATA_PATH")]
        metadata_path: Option<PathBuf>,
        #[arg(long, env = "ASKY_ALLOW_REPROVISION")]
        allow_reprovision: bool,
    },
    /// Write proxy.
    WriterShield {
        #[command(flatten)]
        listen: Listen,
        #[arg(long, env = "ASKY_ACCESS_CONTROL_URL")]
        access_control_url: String,
        /// CA bundle trusted for outbound calls to access control and storage.
        #[arg(long, env = "ASKY_CA_CERT")]
        ca_cert: PathBuf,
        #[arg(long, env = "ASKY_TOKEN_TTL_SECS", default_value_t = 60)]
        token_ttl_secs: u64,
        #[arg(long, env = "ASKY_ALLOW_TOKEN_MODE", default_value_t = true, action = clap::ArgAction::Set)]
        allow_token_mode: bool,
        #[arg(long, env = "ASKY_MAX_IN_FLIGHT", default_value_t = 256)]
        max_in_flight: usize,
    },
    /// Print the measurement a genuine build of a service reports.
    Measurement {
        #[arg(value_parser = ["access-control", "writer-shield"])]
        service: String,
    },
    /// Write a development CA, server certificate and key.
    DevCert {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "name", default_values = ["localhost", "127.0.0.1"])]
        names: Vec<String>,
    },
}

fn write_private(path: &Path, contents: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)
        .with_context(|| format!("writing {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn request_log(service: &str, listen: &Listen) -> Result<Arc<RequestLog>> {
    Ok(match &listen.request_log {
        Some(p) => RequestLog::with_file(service, p).with_context(|| format!("opening {}", p.display()))?,
        None => RequestLog::new(service),
    })
}

async fn run(router: axum::Router, listen: &Listen) -> Result<()> {
    let config = tls::server_config_from_files(&listen.tls_cert, &listen.tls_key).context("loading TLS material")?;
    let server = tls::serve(router, listen.listen, config).await?;
    tracing::info!("listening on {}", server.url());
    tokio::signal::ctrl_c().await?;
    server.shutdown().await;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    match Cli::parse().command {
        Command::Storage { listen, data_dir, secret_file, buckets } => {
            let secret = hex::decode(std::fs::read_to_string(&secret_file)?.trim())
                .context("storage secret file must contain hex")?;
            if secret.len() < 16 {
                bail!("storage secret must be at least 16 bytes");
            }
            let mut policies = BTreeMap::new();
            for b in buckets {
                let (name, public) = match b.split_once(':') {
                    Some((n, "public")) => (n.to_owned(), true),
                    Some((_, other)) => bail!("unknown bucket option {other}"),
                    None => (b, false),
                };
                policies.insert(name, BucketPolicy { public_read: public });
            }
            let access_log = match &listen.request_log {
                Some(p) => AccessLog::with_file(p)?,
                None => AccessLog::default(),
            };
            let store = CloudStore::new(
                Arc::new(FsObjectBackend::new(data_dir)?),
                StorageConfig { buckets: policies, secret, body_limit: listen.body_limit },
                access_log,
            );
            run(store.router(), &listen).await
        }
        Command::AccessControl { listen, metadata_path, allow_reprovision } => {
            let backend: Arc<dyn DocumentBackend> = match metadata_path {
                Some(p) => Arc::new(FileBackend::open(&p).with_context(|| format!("opening {}", p.display()))?),
                None => Arc::new(MemoryBackend::new()),
            };
            let config = AccessControlConfig { allow_reprovision, body_limit: listen.body_limit };
            let ac = AccessControl::with_log(backend, config, request_log(access_control::SERVICE_NAME, &listen)?);
            run(ac.router(), &listen).await
        }
        Command::WriterShield { listen, access_control_url, ca_cert, token_ttl_secs, allow_token_mode, max_in_flight } => {
            let ca = std::fs::read_to_string(&ca_cert).with_context(|| format!("reading {}", ca_cert.display()))?;
            let oracle = Arc::new(HttpOracle(AccessControlClient::new(&ca, &access_control_url)?));
            let config = WriterShieldConfig {
                token_ttl: Duration::from_secs(token_ttl_secs),
                allow_token_mode,
                max_in_flight,
                allow_reprovision: true,
                body_limit: listen.body_limit,
            };
            let ws = WriterShield::with_log(
                oracle,
                http_uploader_factory(ca),
                config,
                request_log(writer_shield::SERVICE_NAME, &listen)?,
            );
            run(ws.router(), &listen).await
        }
        Command::Measurement { service } => {
            println!("{}", hex::encode(measurement(&service)));
            Ok(())
        }
        Command::DevCert { out_dir, names } => {
            std::fs::create_dir_all(&out_dir)?;
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let pki = DevPki::generate(&names)?;
            std::fs::write(out_dir.join("ca.pem"), &pki.ca_pem)?;
            std::fs::write(out_dir.join("cert.pem"), &pki.cert_pem)?;
            write_private(&out_dir.join("key.pem"), &pki.key_pem)?;
            println!("wrote ca.pem, cert.pem and key.pem to {}", out_dir.display());
            Ok(())
        }
    }
}

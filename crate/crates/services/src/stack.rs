//! Launches storage, access-control and write-proxy services in-process on
//! loopback ports, provisioned and ready. Used by tests and benchmarks.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use rand::RngCore;

use asky_core::metadata::{DocumentBackend, MemoryBackend};
use asky_core::{TaSigningKey, VerificationKey};

use crate::access_control::{self, AccessControl, AccessControlConfig};
use crate::api::ProvisionWriterShield;
use crate::attest::measurement;
use crate::client::{AccessControlClient, AdminChannel, ClientError, StorageClient, WriterShieldClient};
use crate::storage::{AccessLog, BucketPolicy, CloudStore, MemoryObjectBackend, ObjectBackend, StorageConfig};
use crate::tls::{self, DevPki, RunningServer, TlsError};
use crate::writer_shield::{self, http_uploader_factory, HttpOracle, WriterShield, WriterShieldConfig};

#[derive(Debug, thiserror::Error)]
pub enum StackError {
    #[error(transparent)]
    Tls(#[from] TlsError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub struct StackOptions {
    pub access_control_instances: usize,
    pub metadata: Arc<dyn DocumentBackend>,
    pub objects: Arc<dyn ObjectBackend>,
    pub access_control: AccessControlConfig,
    pub writer_shield: WriterShieldConfig,
    pub bucket: String,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self {
            access_control_instances: 1,
            metadata: Arc::new(MemoryBackend::new()),
            objects: Arc::new(MemoryObjectBackend::new()),
            access_control: AccessControlConfig::default(),
            writer_shield: WriterShieldConfig::default(),
            bucket: "files".into(),
        }
    }
}

pub struct LocalStack {
    pub pki: DevPki,
    pub http: reqwest::Client,
    pub access_control: Vec<Arc<AccessControl>>,
    pub writer_shield: Arc<WriterShield>,
    pub storage: Arc<CloudStore>,
    pub access_control_urls: Vec<String>,
    pub writer_shield_url: String,
    pub storage_url: String,
    pub bucket: String,
    pub admin_credential: [u8; 32],
    pub storage_secret: [u8; 32],
    pub verification_key: VerificationKey,
    servers: Vec<RunningServer>,
}

fn random32() -> [u8; 32] {
    let mut b = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut b);
    b
}

impl LocalStack {
    pub async fn start(opts: StackOptions) -> Result<Self, StackError> {
        let pki = DevPki::localhost()?;
        let server_tls = tls::server_config(&pki.cert_pem, &pki.key_pem)?;
        let http = tls::client(&pki.ca_pem)?;
        let loopback: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let mut servers = Vec::new();

        let storage_secret = random32();
        let storage = CloudStore::new(
            opts.objects,
            StorageConfig {
                buckets: BTreeMap::from([(opts.bucket.clone(), BucketPolicy { public_read: true })]),
                secret: storage_secret.to_vec(),
                body_limit: opts.writer_shield.body_limit,
            },
            AccessLog::default(),
        );
        servers.push(tls::serve(storage.router(), loopback, server_tls.clone()).await?);
        let storage_url = servers[0].url();

        let admin_credential = random32();
        let master = random32();
        let mut access_control = Vec::new();
        let mut access_control_urls = Vec::new();
        for _ in 0..opts.access_control_instances.max(1) {
            let ac = AccessControl::new(opts.metadata.clone(), opts.access_control.clone());
            let server = tls::serve(ac.router(), loopback, server_tls.clone()).await?;
            let url = server.url();
            servers.push(server);
            let admin = AccessControlClient::with_http(http.clone(), &url)?
                .attest(&measurement(access_control::SERVICE_NAME))
                .await?;
            admin.provision_access_control(&master, &admin_credential).await?;
            access_control.push(ac);
            access_control_urls.push(url);
        }

        let oracle = Arc::new(HttpOracle(AccessControlClient::with_http(http.clone(), &access_control_urls[0])?));
        let ws = WriterShield::new(oracle, http_uploader_factory(pki.ca_pem.clone()), opts.writer_shield);
        let server = tls::serve(ws.router(), loopback, server_tls.clone()).await?;
        let writer_shield_url = server.url();
        servers.push(server);
        let signing = TaSigningKey::generate();
        let ws_client = WriterShieldClient::with_http(http.clone(), &writer_shield_url)?;
        ws_client
            .attest(&measurement(writer_shield::SERVICE_NAME))
            .await?
            .provision_writer_shield(&ProvisionWriterShield {
                signing_seed: hex::encode(signing.seed()),
                storage_endpoint: storage_url.clone(),
                bucket: opts.bucket.clone(),
                storage_secret: hex::encode(storage_secret),
                admin_credential: hex::encode(admin_credential),
            })
            .await?;
        let verification_key = ws_client.verification_key().await?;

        Ok(Self {
            pki,
            http,
            access_control,
            writer_shield: ws,
            storage,
            access_control_urls,
            writer_shield_url,
            storage_url,
            bucket: opts.bucket,
            admin_credential,
            storage_secret,
            verification_key,
            servers,
        })
    }

    pub fn access_control_client(&self, instance: usize) -> AccessControlClient {
        AccessControlClient::with_http(self.http.clone(), &self.access_control_urls[instance]).unwrap()
    }

    pub fn writer_shield_client(&self) -> WriterShieldClient {
        WriterShieldClient::with_http(self.http.clone(), &self.writer_shield_url).unwrap()
    }

    pub fn storage_client(&self) -> StorageClient {
        StorageClient::with_http(self.http.clone(), &self.storage_url).unwrap()
    }

    /// An authenticated admin channel to access-control instance `instance`.
    pub async fn admin(&self, instance: usize) -> Result<AdminChannel, ClientError> {
        let ch = self
            .access_control_client(instance)
            .attest(&measurement(access_control::SERVICE_NAME))
            .await?;
        ch.login(&self.admin_credential).await?;
        Ok(ch)
    }

    pub async fn shutdown(self) {
        for s in self.servers {
            s.shutdown().await;
        }
    }
}

//! YCSB-style closed-loop workloads against a full local deployment.
//!
//! Updates are read-modify-write: the client downloads and decrypts a
//! record, then writes a new object under a fresh file key and points the
//! record at it. Keys are drawn uniformly.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use tokio::task::JoinSet;

use asky_cli::{AskyClient, ClientConfig, Identity, WriteOptions};
use asky_core::metadata::Roles;
use asky_services::api::RoleName;
use asky_services::stack::{LocalStack, StackOptions};
use asky_services::{AdminChannel, UserAuth};

use crate::report::{BenchReport, BenchRow};
use crate::stats::{percentile, Summary};
use crate::BenchError;

pub const SCENARIO: &str = "macro";
pub const GROUP: &str = "bench";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Workload {
    /// 50% reads, 50% read-modify-write.
    A,
    /// 95% reads, 5% read-modify-write.
    B,
    /// Reads only.
    C,
    /// New files only.
    Insert,
}

impl Workload {
    pub fn read_fraction(self) -> f64 {
        match self {
            Workload::A => 0.5,
            Workload::B => 0.95,
            Workload::C => 1.0,
            Workload::Insert => 0.0,
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workload::A => "A",
            Workload::B => "B",
            Workload::C => "C",
            Workload::Insert => "insert",
        })
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Workload::A),
            "b" => Ok(Workload::B),
            "c" => Ok(Workload::C),
            "insert" | "i" => Ok(Workload::Insert),
            _ => Err(format!("unknown workload {s:?} (expected A, B, C or insert)")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Read,
    Update,
    Insert,
}

/// Eight administrators alternating adds and revocations on the workload
/// group, so its size stays roughly constant.
#[derive(Clone, Debug)]
pub struct ChurnConfig {
    pub admins: usize,
    /// Users each administrator cycles through; half start as members.
    pub pool_per_admin: usize,
    /// Think time between one administrator's operations; zero is closed-loop.
    pub pause: Duration,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig { admins: 8, pool_per_admin: 8, pause: Duration::ZERO }
    }
}

#[derive(Clone, Debug)]
pub struct MacroSetup {
    pub clients: usize,
    /// Readers in the workload group; at least `clients`.
    pub group_size: usize,
    pub records: usize,
    pub churn: ChurnConfig,
    pub write: WriteOptions,
}

impl Default for MacroSetup {
    fn default() -> Self {
        MacroSetup {
            clients: 64,
            group_size: 100,
            records: 100,
            churn: ChurnConfig::default(),
            write: WriteOptions::default(),
        }
    }
}

/// One closed-loop run.
#[derive(Clone, Debug, Default)]
pub struct RunResult {
    pub ops: usize,
    pub errors: usize,
    pub first_error: Option<String>,
    pub elapsed: Duration,
    pub latencies_ms: Vec<f64>,
    pub admin_ops: usize,
    pub admin_errors: usize,
    /// Requests each service logged while the run was in progress.
    pub access_control_requests: usize,
    pub writer_shield_requests: usize,
    pub storage_requests: usize,
}

impl RunResult {
    pub fn ops_per_sec(&self) -> f64 {
        self.ops as f64 / self.elapsed.as_secs_f64()
    }

    pub fn bytes_per_sec(&self, file_size: usize) -> f64 {
        self.ops_per_sec() * file_size as f64
    }
}

struct Records {
    keys: Vec<Mutex<String>>,
}

/// A provisioned stack with the workload group, client identities and
/// churn administrators in place.
pub struct MacroBench {
    stack: LocalStack,
    client: AskyClient,
    users: Vec<Identity>,
    setup: MacroSetup,
    records: HashMap<usize, Arc<Records>>,
    churn_pools: Vec<Vec<String>>,
    churn_members: Vec<Arc<Mutex<Vec<bool>>>>,
    admins: Vec<Arc<AdminChannel>>,
}

impl MacroBench {
    pub async fn start(setup: MacroSetup) -> Result<Self, BenchError> {
        let stack = LocalStack::start(StackOptions::default()).await?;
        let ac = stack.access_control[0].clone();
        ac.create_group(GROUP).await?;

        let mut users = Vec::new();
        let mut members = Vec::new();
        for i in 0..setup.group_size.max(setup.clients) {
            let uname = format!("user-{i}");
            let (usk, credential) = ac.create_user(&uname).await?;
            users.push(Identity { auth: UserAuth { uname: uname.clone(), credential }, usk });
            members.push((uname, Roles::BOTH));
        }

        let mut churn_pools = Vec::new();
        let mut churn_members = Vec::new();
        for a in 0..setup.churn.admins {
            let mut pool = Vec::new();
            let mut flags = Vec::new();
            for j in 0..setup.churn.pool_per_admin {
                let uname = format!("churn-{a}-{j}");
                ac.create_user(&uname).await?;
                let member = j % 2 == 0;
                if member {
                    members.push((uname.clone(), Roles::READER));
                }
                pool.push(uname);
                flags.push(member);
            }
            churn_pools.push(pool);
            churn_members.push(Arc::new(Mutex::new(flags)));
        }
        ac.add_members(GROUP, members).await?;

        let mut admins = Vec::new();
        for _ in 0..setup.churn.admins {
            admins.push(Arc::new(stack.admin(0).await?));
        }
        let config = ClientConfig {
            access_control_url: stack.access_control_urls[0].clone(),
            writer_shield_url: stack.writer_shield_url.clone(),
            storage_url: stack.storage_url.clone(),
            bucket: stack.bucket.clone(),
            ..Default::default()
        };
        let client = AskyClient::with_http(stack.http.clone(), &config)?;
        Ok(MacroBench {
            stack,
            client,
            users,
            setup,
            records: HashMap::new(),
            churn_pools,
            churn_members,
            admins,
        })
    }

    pub fn stack(&self) -> &LocalStack {
        &self.stack
    }

    pub fn setup(&self) -> &MacroSetup {
        &self.setup
    }

    /// Writes the initial records for `file_size` if not done yet.
    pub async fn preload(&mut self, file_size: usize) -> Result<(), BenchError> {
        if self.records.contains_key(&file_size) {
            return Ok(());
        }
        let payload = payload(file_size, 0);
        let mut keys = Vec::with_capacity(self.setup.records);
        for i in 0..self.setup.records {
            let id = &self.users[i % self.users.len()];
            let r = self.client.write_file(id, GROUP, &payload, self.setup.write).await?;
            keys.push(Mutex::new(r.object_key));
        }
        self.records.insert(file_size, Arc::new(Records { keys }));
        Ok(())
    }

    fn service_counters(&self) -> (usize, usize, usize) {
        let ac = self.stack.access_control.iter().map(|a| a.request_log().len()).sum();
        (ac, self.stack.writer_shield.request_log().len(), self.stack.storage.access_log().len())
    }

    /// Runs `ops` operations of `workload` across the configured clients.
    pub async fn run(
        &mut self,
        workload: Workload,
        file_size: usize,
        ops: usize,
        admin_churn: bool,
    ) -> Result<RunResult, BenchError> {
        if workload != Workload::Insert {
            self.preload(file_size).await?;
        }
        let records = self.records.get(&file_size).cloned();
        let remaining = Arc::new(AtomicUsize::new(ops));
        let stop = Arc::new(AtomicBool::new(false));
        let payload = Arc::new(payload(file_size, 1));

        let churn = admin_churn.then(|| self.spawn_churn(stop.clone()));
        let before = self.service_counters();
        let start = Instant::now();

        let mut workers = JoinSet::new();
        for c in 0..self.setup.clients {
            let client = self.client.clone();
            let id = Identity { auth: self.users[c].auth.clone(), usk: self.users[c].usk.clone() };
            let vk = self.stack.verification_key.clone();
            let records = records.clone();
            let remaining = remaining.clone();
            let payload = payload.clone();
            let write = self.setup.write;
            workers.spawn(async move {
                let mut out = RunResult::default();
                let mut lat = Vec::new();
                while take(&remaining) {
                    let op = pick(workload);
                    let t = Instant::now();
                    let result = match op {
                        Op::Insert => client.write_file(&id, GROUP, &payload, write).await.map(drop),
                        Op::Read | Op::Update => {
                            let records = records.as_ref().expect("preloaded");
                            let r = rand::thread_rng().gen_range(0..records.keys.len());
                            let key = records.keys[r].lock().unwrap().clone();
                            match client.read_file(&vk, &id.usk, &key).await {
                                Ok(mut body) if matches!(op, Op::Update) => {
                                    if let Some(b) = body.first_mut() {
                                        *b = b.wrapping_add(1);
                                    }
                                    match client.write_file(&id, GROUP, &body, write).await {
                                        Ok(receipt) => {
                                            *records.keys[r].lock().unwrap() = receipt.object_key;
                                            Ok(())
                                        }
                                        Err(e) => Err(e),
                                    }
                                }
                                Ok(_) => Ok(()),
                                Err(e) => Err(e),
                            }
                        }
                    };
                    match result {
                        Ok(()) => {
                            out.ops += 1;
                            lat.push(t.elapsed().as_secs_f64() * 1e3);
                        }
                        Err(e) => {
                            out.errors += 1;
                            out.first_error.get_or_insert_with(|| e.to_string());
                        }
                    }
                }
                out.latencies_ms = lat;
                out
            });
        }

        let mut result = RunResult::default();
        while let Some(r) = workers.join_next().await {
            let r = r.map_err(|e| BenchError::Setup(e.to_string()))?;
            result.ops += r.ops;
            result.errors += r.errors;
            if result.first_error.is_none() {
                result.first_error = r.first_error;
            }
            result.latencies_ms.extend(r.latencies_ms);
        }
        result.elapsed = start.elapsed();
        let after = self.service_counters();
        stop.store(true, Ordering::Relaxed);
        if let Some(mut churn) = churn {
            while let Some(r) = churn.join_next().await {
                let (ok, failed) = r.map_err(|e| BenchError::Setup(e.to_string()))?;
                result.admin_ops += ok;
                result.admin_errors += failed;
            }
        }
        result.access_control_requests = after.0 - before.0;
        result.writer_shield_requests = after.1 - before.1;
        result.storage_requests = after.2 - before.2;
        Ok(result)
    }

    /// Each administrator alternates between adding one of its non-member
    /// users and revoking one of its members.
    fn spawn_churn(&self, stop: Arc<AtomicBool>) -> JoinSet<(usize, usize)> {
        let mut set = JoinSet::new();
        for (a, admin) in self.admins.iter().enumerate() {
            let admin = admin.clone();
            let pool = self.churn_pools[a].clone();
            let flags = self.churn_members[a].clone();
            let stop = stop.clone();
            let pause = self.setup.churn.pause;
            set.spawn(async move {
                let (mut ok, mut failed) = (0usize, 0usize);
                let mut add = true;
                while !stop.load(Ordering::Relaxed) {
                    let candidates: Vec<usize> = {
                        let f = flags.lock().unwrap();
                        (0..pool.len()).filter(|&i| f[i] != add).collect()
                    };
                    let choice = candidates.choose(&mut rand::thread_rng()).copied();
                    if let Some(i) = choice {
                        let r = if add {
                            admin.add_member(GROUP, &pool[i], &[RoleName::Reader]).await
                        } else {
                            admin.revoke_member(GROUP, &pool[i]).await
                        };
                        match r {
                            Ok(_) => {
                                flags.lock().unwrap()[i] = add;
                                ok += 1;
                            }
                            Err(_) => failed += 1,
                        }
                    }
                    add = !add;
                    tokio::time::sleep(pause).await;
                }
                (ok, failed)
            });
        }
        set
    }

    pub async fn shutdown(self) {
        self.stack.shutdown().await;
    }
}

fn take(remaining: &AtomicUsize) -> bool {
    remaining
        .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |n| n.checked_sub(1))
        .is_ok()
}

fn pick(w: Workload) -> Op {
    match w {
        Workload::Insert => Op::Insert,
        Workload::C => Op::Read,
        _ if rand::thread_rng().gen_bool(w.read_fraction()) => Op::Read,
        _ => Op::Update,
    }
}

fn payload(size: usize, salt: u8) -> Vec<u8> {
    (0..size).map(|i| (i as u8).wrapping_mul(31).wrapping_add(salt)).collect()
}

#[derive(Clone, Debug)]
pub struct MacroConfig {
    pub setup: MacroSetup,
    pub workloads: Vec<Workload>,
    pub file_sizes: Vec<usize>,
    pub ops: usize,
    pub repetitions: usize,
    pub admin_churn: Vec<bool>,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            setup: MacroSetup::default(),
            workloads: vec![Workload::A, Workload::B, Workload::C, Workload::Insert],
            file_sizes: vec![1 << 10, 100 << 10, 1 << 20],
            ops: 10_000,
            repetitions: 5,
            admin_churn: vec![false, true],
        }
    }
}

/// Per-variant samples gathered over interleaved repetitions.
#[derive(Default)]
struct VariantSamples {
    ops_per_sec: Vec<f64>,
    bytes_per_sec: Vec<f64>,
    p50: Vec<f64>,
    p99: Vec<f64>,
    admin_ops_per_sec: Vec<f64>,
    errors: Vec<f64>,
}

pub async fn macro_workload_bench(cfg: &MacroConfig) -> Result<BenchReport, BenchError> {
    let mut bench = MacroBench::start(cfg.setup.clone()).await?;
    let mut variants = Vec::new();
    for &w in &cfg.workloads {
        for &size in &cfg.file_sizes {
            for &churn in &cfg.admin_churn {
                variants.push((w, size, churn));
            }
        }
    }
    let mut samples: Vec<VariantSamples> = variants.iter().map(|_| VariantSamples::default()).collect();
    for _ in 0..cfg.repetitions.max(1) {
        for (i, &(w, size, churn)) in variants.iter().enumerate() {
            let r = bench.run(w, size, cfg.ops, churn).await?;
            let s = &mut samples[i];
            s.ops_per_sec.push(r.ops_per_sec());
            s.bytes_per_sec.push(r.bytes_per_sec(size));
            s.p50.push(percentile(&r.latencies_ms, 50.0));
            s.p99.push(percentile(&r.latencies_ms, 99.0));
            s.admin_ops_per_sec.push(r.admin_ops as f64 / r.elapsed.as_secs_f64());
            s.errors.push(r.errors as f64);
        }
    }
    bench.shutdown().await;

    let mut report = BenchReport::default();
    for ((w, size, churn), s) in variants.iter().zip(&samples) {
        let row = || {
            BenchRow::new(SCENARIO, "asky", &w.to_string(), "closed-loop")
                .file_size(*size)
                .group_size(cfg.setup.group_size)
                .clients(cfg.setup.clients)
                .admin_churn(*churn)
                .ops(cfg.ops)
        };
        report.push(row().metric("throughput", "ops/s", Summary::of(&s.ops_per_sec)));
        report.push(row().metric("throughput", "bytes/s", Summary::of(&s.bytes_per_sec)));
        report.push(row().metric("latency_p50", "ms", Summary::of(&s.p50)));
        report.push(row().metric("latency_p99", "ms", Summary::of(&s.p99)));
        report.push(row().metric("errors", "count", Summary::of(&s.errors)));
        if *churn {
            report.push(row().metric("admin_throughput", "ops/s", Summary::of(&s.admin_ops_per_sec)));
        }
    }
    Ok(report)
}

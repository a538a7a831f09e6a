//! Service throughput against the number of access-control instances.
//!
//! One stack runs the largest configured instance count over a shared
//! metadata backend; a measurement with `k` instances dispatches requests
//! round-robin over the first `k`. Clients are closed-loop.

use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::task::JoinSet;

use asky_core::metadata::Roles;
use asky_core::{EnvelopeMode, FileKey};
use asky_services::api::RoleName;
use asky_services::stack::{LocalStack, StackOptions};
use asky_services::{AccessControlClient, AdminChannel, ClientError, UserAuth};

use crate::micro::mode_name;
use crate::report::{BenchReport, BenchRow};
use crate::stats::{percentile, Summary};
use crate::BenchError;

pub const SCENARIO: &str = "scale";

#[derive(Clone, Debug)]
pub struct ScaleConfig {
    pub instances: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub clients: usize,
    /// Operations per measurement.
    pub ops: usize,
    pub repetitions: usize,
    pub modes: Vec<EnvelopeMode>,
    /// Concurrency levels for the latency/throughput sweep.
    pub sweep: Vec<usize>,
    /// Group size used by the sweep.
    pub sweep_group: usize,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            instances: vec![1, 2, 3, 4],
            group_sizes: vec![10, 100, 1000, 10000],
            clients: 16,
            ops: 1000,
            repetitions: 5,
            modes: vec![EnvelopeMode::Linear, EnvelopeMode::Indexed],
            sweep: vec![1, 2, 4, 8, 16, 32, 64],
            sweep_group: 100,
        }
    }
}

/// Result of one closed-loop measurement.
pub struct Measured {
    pub ops_per_sec: f64,
    pub latencies_ms: Vec<f64>,
    pub errors: usize,
}

/// Runs `ops` calls of `op(worker, i)` from `clients` concurrent workers.
pub async fn closed_loop<F, Fut>(clients: usize, ops: usize, op: F) -> Measured
where
    F: Fn(usize, usize) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = Result<(), ClientError>> + Send,
{
    let op = Arc::new(op);
    let next = Arc::new(AtomicUsize::new(0));
    let start = Instant::now();
    let mut set = JoinSet::new();
    for w in 0..clients.max(1) {
        let (op, next) = (op.clone(), next.clone());
        set.spawn(async move {
            let mut lat = Vec::new();
            let mut errors = 0;
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ops {
                    break;
                }
                let t = Instant::now();
                match op(w, i).await {
                    Ok(()) => lat.push(t.elapsed().as_secs_f64() * 1e3),
                    Err(_) => errors += 1,
                }
            }
            (lat, errors)
        });
    }
    let mut latencies_ms = Vec::with_capacity(ops);
    let mut errors = 0;
    while let Some(r) = set.join_next().await {
        let (lat, e) = r.expect("benchmark worker panicked");
        latencies_ms.extend(lat);
        errors += e;
    }
    let elapsed = start.elapsed().max(Duration::from_micros(1));
    Measured { ops_per_sec: latencies_ms.len() as f64 / elapsed.as_secs_f64(), latencies_ms, errors }
}

struct Fixture {
    stack: LocalStack,
    clients: Vec<AccessControlClient>,
    admins: Vec<Arc<AdminChannel>>,
    writer: UserAuth,
}

fn group_name(n: usize) -> String {
    format!("scale-{n}")
}

impl Fixture {
    async fn start(cfg: &ScaleConfig) -> Result<Self, BenchError> {
        let k = cfg.instances.iter().copied().max().unwrap_or(1);
        let stack = LocalStack::start(StackOptions { access_control_instances: k, ..Default::default() }).await?;
        let ac = stack.access_control[0].clone();
        let (_, credential) = ac.create_user("writer").await?;
        let writer = UserAuth { uname: "writer".into(), credential };

        let mut sizes = cfg.group_sizes.clone();
        sizes.push(cfg.sweep_group);
        sizes.sort_unstable();
        sizes.dedup();
        let largest = sizes.last().copied().unwrap_or(0);
        for i in 0..largest {
            ac.create_user(&format!("member-{i}")).await?;
        }
        for &n in &sizes {
            let g = group_name(n);
            ac.create_group(&g).await?;
            let mut members: Vec<(String, Roles)> = (0..n).map(|i| (format!("member-{i}"), Roles::READER)).collect();
            members.push(("writer".into(), Roles::WRITER));
            ac.add_members(&g, members).await?;
        }
        let clients = (0..k).map(|i| stack.access_control_client(i)).collect();
        let mut admins = Vec::new();
        for i in 0..k {
            admins.push(Arc::new(stack.admin(i).await?));
        }
        Ok(Fixture { stack, clients, admins, writer })
    }

    async fn envelope(&self, k: usize, n: usize, mode: EnvelopeMode, clients: usize, ops: usize) -> Measured {
        let targets: Arc<Vec<AccessControlClient>> = Arc::new(self.clients[..k].to_vec());
        let writer = self.writer.clone();
        let g = group_name(n);
        closed_loop(clients, ops, move |_, i| {
            let (targets, writer, g) = (targets.clone(), writer.clone(), g.clone());
            async move {
                let c = &targets[i % targets.len()];
                c.envelope(&writer, &g, &FileKey::random(), mode).await.map(drop)
            }
        })
        .await
    }

    /// Each operation adds a fresh user and revokes it again; counted as two.
    async fn add_revoke(&self, k: usize, n: usize, clients: usize, ops: usize, tag: &str) -> Result<Measured, BenchError> {
        let ac = &self.stack.access_control[0];
        let pool: Vec<String> = (0..clients).map(|w| format!("churn-{tag}-{n}-{w}")).collect();
        for u in &pool {
            ac.create_user(u).await?;
        }
        let admins: Arc<Vec<Arc<AdminChannel>>> = Arc::new(self.admins[..k].to_vec());
        let pool = Arc::new(pool);
        let g = group_name(n);
        let mut m = closed_loop(clients, ops.div_ceil(2), move |w, i| {
            let (admins, pool, g) = (admins.clone(), pool.clone(), g.clone());
            async move {
                let admin = &admins[i % admins.len()];
                admin.add_member(&g, &pool[w], &[RoleName::Reader]).await?;
                admin.revoke_member(&g, &pool[w]).await.map(drop)
            }
        })
        .await;
        m.ops_per_sec *= 2.0;
        Ok(m)
    }

    async fn create_user(&self, k: usize, clients: usize, ops: usize, tag: &str) -> Measured {
        let admins: Arc<Vec<Arc<AdminChannel>>> = Arc::new(self.admins[..k].to_vec());
        let tag = tag.to_owned();
        closed_loop(clients, ops, move |_, i| {
            let (admins, tag) = (admins.clone(), tag.clone());
            async move { admins[i % admins.len()].create_user(&format!("new-{tag}-{i}")).await.map(drop) }
        })
        .await
    }
}

#[derive(Default)]
struct Acc(Vec<f64>, Vec<f64>, Vec<f64>);

impl Acc {
    fn add(&mut self, m: &Measured) {
        self.0.push(m.ops_per_sec);
        self.1.push(percentile(&m.latencies_ms, 50.0));
        self.2.push(m.errors as f64);
    }

    fn rows(&self, report: &mut BenchReport, base: BenchRow, per_op_members: Option<usize>) {
        report.push(base.clone().metric("throughput", "ops/s", Summary::of(&self.0)));
        if let Some(n) = per_op_members {
            let members: Vec<f64> = self.0.iter().map(|x| x * n as f64).collect();
            report.push(base.clone().metric("throughput", "members/s", Summary::of(&members)));
        }
        report.push(base.clone().metric("latency_p50", "ms", Summary::of(&self.1)));
        report.push(base.metric("errors", "count", Summary::of(&self.2)));
    }
}

pub async fn service_scalability_bench(cfg: &ScaleConfig) -> Result<BenchReport, BenchError> {
    let fx = Fixture::start(cfg).await?;
    let mut report = BenchReport::default();
    let reps = cfg.repetitions.max(1);

    for &k in &cfg.instances {
        let mut env: Vec<Acc> = Vec::new();
        let mut admin: Vec<Acc> = cfg.group_sizes.iter().map(|_| Acc::default()).collect();
        let mut create = Acc::default();
        for _ in cfg.group_sizes.iter().flat_map(|_| cfg.modes.iter()) {
            env.push(Acc::default());
        }
        for rep in 0..reps {
            let mut e = env.iter_mut();
            for &n in &cfg.group_sizes {
                for &mode in &cfg.modes {
                    let m = fx.envelope(k, n, mode, cfg.clients, cfg.ops).await;
                    e.next().unwrap().add(&m);
                }
            }
            for (j, &n) in cfg.group_sizes.iter().enumerate() {
                let m = fx.add_revoke(k, n, cfg.clients.min(8), cfg.ops.min(200), &format!("{k}-{rep}")).await?;
                admin[j].add(&m);
            }
            create.add(&fx.create_user(k, cfg.clients, cfg.ops.min(500), &format!("{k}-{rep}")).await);
        }

        let mut e = env.iter();
        for &n in &cfg.group_sizes {
            for &mode in &cfg.modes {
                let base = BenchRow::new(SCENARIO, "asky", "envelope", mode_name(mode))
                    .group_size(n)
                    .instances(k)
                    .clients(cfg.clients)
                    .ops(cfg.ops);
                e.next().unwrap().rows(&mut report, base, Some(n));
            }
        }
        for (j, &n) in cfg.group_sizes.iter().enumerate() {
            let base = BenchRow::new(SCENARIO, "asky", "add-revoke", "")
                .group_size(n)
                .instances(k)
                .clients(cfg.clients.min(8))
                .ops(cfg.ops.min(200));
            admin[j].rows(&mut report, base, None);
        }
        let base = BenchRow::new(SCENARIO, "asky", "create-user", "")
            .instances(k)
            .clients(cfg.clients)
            .ops(cfg.ops.min(500));
        create.rows(&mut report, base, None);
    }

    // Closed-loop sweep: offered concurrency against achieved throughput.
    let k = cfg.instances.iter().copied().max().unwrap_or(1);
    for &c in &cfg.sweep {
        let mut acc = Acc::default();
        let mut p99 = Vec::new();
        for _ in 0..reps {
            let m = fx.envelope(k, cfg.sweep_group, EnvelopeMode::Linear, c, cfg.ops).await;
            p99.push(percentile(&m.latencies_ms, 99.0));
            acc.add(&m);
        }
        let base = BenchRow::new(SCENARIO, "asky", "envelope-sweep", "linear")
            .group_size(cfg.sweep_group)
            .instances(k)
            .clients(c)
            .ops(cfg.ops);
        report.push(base.clone().metric("latency_p99", "ms", Summary::of(&p99)));
        acc.rows(&mut report, base, None);
    }
    fx.stack.shutdown().await;
    Ok(report)
}

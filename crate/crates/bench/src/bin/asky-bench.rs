use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use asky_bench::micro::{micro_crypto_bench, MicroConfig};
use asky_bench::scale::{service_scalability_bench, ScaleConfig};
use asky_bench::workload::{macro_workload_bench, MacroConfig, Workload};
use asky_bench::{parse_size, BenchReport};
use asky_cli::WriteOptions;

#[derive(Parser)]
#[command(name = "asky-bench", about = "Benchmarks for asky", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Group sizes (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    groups: Vec<usize>,

    /// File sizes such as 1KiB,100KiB,1MiB.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_size)]
    sizes: Vec<usize>,

    /// Access-control instance counts.
    #[arg(long, global = true, value_delimiter = ',')]
    instances: Vec<usize>,

    /// Workloads: A, B, C, insert.
    #[arg(long, global = true, value_delimiter = ',')]
    workload: Vec<Workload>,

    /// Concurrent administrator churn; bare flag means on.
    #[arg(long, global = true, value_enum, num_args = 0..=1, default_missing_value = "on", default_value = "off")]
    admin_churn: Churn,

    /// CSV output; rows are also written next to it as .jsonl.
    #[arg(long, global = true, default_value = "bench.csv")]
    out: PathBuf,

    #[arg(long, global = true, default_value_t = 5)]
    repetitions: usize,

    /// Operations per measurement (scale and macro).
    #[arg(long, global = true)]
    ops: Option<usize>,

    /// Concurrent clients (scale and macro).
    #[arg(long, global = true)]
    clients: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Envelope and de-envelope throughput, asky against BBW.
    Micro {
        /// Largest group size BBW is run for.
        #[arg(long, default_value_t = 1000)]
        bbw_max_group: usize,
    },
    /// Access-control throughput against instance count.
    Scale,
    /// YCSB-style workloads over a full local deployment.
    Macro {
        #[arg(long)]
        indexed: bool,
        #[arg(long)]
        token_mode: bool,
        /// Milliseconds each churn administrator waits between operations.
        #[arg(long, default_value_t = 0)]
        churn_pause_ms: u64,
        #[arg(long)]
        records: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Churn {
    Off,
    On,
    Both,
}

impl Churn {
    fn variants(self) -> Vec<bool> {
        match self {
            Churn::Off => vec![false],
            Churn::On => vec![true],
            Churn::Both => vec![false, true],
        }
    }
}

fn or_default<T>(given: Vec<T>, default: Vec<T>) -> Vec<T> {
    if given.is_empty() {
        default
    } else {
        given
    }
}

async fn run(cli: Cli) -> Result<BenchReport, asky_bench::BenchError> {
    match cli.command {
        Command::Micro { bbw_max_group } => {
            let d = MicroConfig::default();
            let cfg = MicroConfig {
                group_sizes: or_default(cli.groups, d.group_sizes.clone()),
                repetitions: cli.repetitions,
                bbw_max_group,
                ..d
            };
            Ok(tokio::task::spawn_blocking(move || micro_crypto_bench(&cfg)).await.expect("micro bench panicked"))
        }
        Command::Scale => {
            let d = ScaleConfig::default();
            let cfg = ScaleConfig {
                instances: or_default(cli.instances, d.instances.clone()),
                group_sizes: or_default(cli.groups, d.group_sizes.clone()),
                clients: cli.clients.unwrap_or(d.clients),
                ops: cli.ops.unwrap_or(d.ops),
                repetitions: cli.repetitions,
                ..d
            };
            service_scalability_bench(&cfg).await
        }
        Command::Macro { indexed, token_mode, churn_pause_ms, records } => {
            let d = MacroConfig::default();
            let mut setup = d.setup.clone();
            setup.clients = cli.clients.unwrap_or(setup.clients);
            setup.group_size = cli.groups.first().copied().unwrap_or(setup.group_size);
            setup.records = records.unwrap_or(setup.records);
            setup.churn.pause = Duration::from_millis(churn_pause_ms);
            setup.write = WriteOptions { indexed, token_mode };
            let cfg = MacroConfig {
                setup,
                workloads: or_default(cli.workload, d.workloads.clone()),
                file_sizes: or_default(cli.sizes, d.file_sizes.clone()),
                ops: cli.ops.unwrap_or(d.ops),
                repetitions: cli.repetitions,
                admin_churn: cli.admin_churn.variants(),
            };
            macro_workload_bench(&cfg).await
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.clone();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = rt.block_on(run(cli)).and_then(|report| {
        report.save(&out)?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            for r in &report.rows {
                println!(
                    "{:<6} {:<5} {:<14} {:<11} n={:<6} size={:<8} k={:<2} c={:<3} churn={:<5} {:<18} {:>14.2} {:<9} [{:.2}, {:.2}]",
                    r.scenario,
                    r.system,
                    r.operation,
                    r.mode,
                    r.group_size.map_or("-".into(), |v| v.to_string()),
                    r.file_size.map_or("-".into(), |v| v.to_string()),
                    r.instances.map_or("-".into(), |v| v.to_string()),
                    r.clients.map_or("-".into(), |v| v.to_string()),
                    r.admin_churn.map_or("-".into(), |v| v.to_string()),
                    r.metric,
                    r.mean,
                    r.unit,
                    r.ci95_low,
                    r.ci95_high
                );
            }
            eprintln!("wrote {} and {}", out.display(), out.with_extension("jsonl").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("asky-bench: {e}");
            ExitCode::FAILURE
        }
    }
}

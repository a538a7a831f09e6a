//! Benchmarks for asky: in-process envelope throughput against the BBW
//! baseline, access-control scalability, and YCSB-style user workloads
//! over a full local deployment.

pub mod micro;
pub mod report;
pub mod scale;
pub mod stats;
pub mod workload;

pub use report::{BenchReport, BenchRow, RowFilter};
pub use stats::Summary;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Stack(#[from] asky_services::stack::StackError),
    #[error(transparent)]
    Client(#[from] asky_services::ClientError),
    #[error(transparent)]
    Api(#[from] asky_services::ApiError),
    #[error(transparent)]
    Cli(#[from] asky_cli::CliError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("{0}")]
    Setup(String),
}

/// Parses sizes such as `1024`, `1KiB`, `100k` or `1MiB`.
pub fn parse_size(s: &str) -> Result<usize, String> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: usize = num.parse().map_err(|_| format!("bad size {s:?}"))?;
    let mult = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        _ => return Err(format!("bad size unit in {s:?}")),
    };
    Ok(n * mult)
}

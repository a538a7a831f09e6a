//! Benchmark rows and their CSV / JSON-lines serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::stats::Summary;

/// One measured metric together with the parameters that produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub system: String,
    pub operation: String,
    pub mode: String,
    pub group_size: Option<usize>,
    pub file_size: Option<usize>,
    pub instances: Option<usize>,
    pub clients: Option<usize>,
    pub admin_churn: Option<bool>,
    pub ops: Option<usize>,
    pub metric: String,
    pub unit: String,
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl BenchRow {
    pub fn new(scenario: &str, system: &str, operation: &str, mode: &str) -> Self {
        BenchRow {
            scenario: scenario.into(),
            system: system.into(),
            operation: operation.into(),
            mode: mode.into(),
            ..Default::default()
        }
    }

    pub fn group_size(mut self, n: usize) -> Self {
        self.group_size = Some(n);
        self
    }

    pub fn file_size(mut self, bytes: usize) -> Self {
        self.file_size = Some(bytes);
        self
    }

    pub fn instances(mut self, k: usize) -> Self {
        self.instances = Some(k);
        self
    }

    pub fn clients(mut self, c: usize) -> Self {
        self.clients = Some(c);
        self
    }

    pub fn admin_churn(mut self, on: bool) -> Self {
        self.admin_churn = Some(on);
        self
    }

    pub fn ops(mut self, ops: usize) -> Self {
        self.ops = Some(ops);
        self
    }

    pub fn metric(mut self, metric: &str, unit: &str, s: Summary) -> Self {
        self.metric = metric.into();
        self.unit = unit.into();
        self.samples = s.samples;
        self.mean = s.mean;
        self.median = s.median;
        self.ci95_low = s.ci95_low;
        self.ci95_high = s.ci95_high;
        self
    }

    /// A metric that is exact rather than sampled.
    pub fn exact(self, metric: &str, unit: &str, value: f64) -> Self {
        self.metric(metric, unit, Summary::of(&[value]))
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Clone, Debug, Default)]
pub struct RowFilter<'a> {
    pub scenario: Option<&'a str>,
    pub system: Option<&'a str>,
    pub operation: Option<&'a str>,
    pub mode: Option<&'a str>,
    pub group_size: Option<usize>,
    pub file_size: Option<usize>,
    pub instances: Option<usize>,
    pub admin_churn: Option<bool>,
    pub metric: Option<&'a str>,
}

impl RowFilter<'_> {
    fn matches(&self, r: &BenchRow) -> bool {
        self.scenario.is_none_or(|v| r.scenario == v)
            && self.system.is_none_or(|v| r.system == v)
            && self.operation.is_none_or(|v| r.operation == v)
            && self.mode.is_none_or(|v| r.mode == v)
            && self.group_size.is_none_or(|v| r.group_size == Some(v))
            && self.file_size.is_none_or(|v| r.file_size == Some(v))
            && self.instances.is_none_or(|v| r.instances == Some(v))
            && self.admin_churn.is_none_or(|v| r.admin_churn == Some(v))
            && self.metric.is_none_or(|v| r.metric == v)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchReport {
    pub fn push(&mut self, row: BenchRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: BenchReport) {
        self.rows.extend(other.rows);
    }

    pub fn find(&self, filter: &RowFilter) -> Option<&BenchRow> {
        self.rows.iter().find(|r| filter.matches(r))
    }

    pub fn select<'a>(&'a self, filter: &'a RowFilter) -> impl Iterator<Item = &'a BenchRow> {
        self.rows.iter().filter(|r| filter.matches(r))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ReportError> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n").map_err(serde_json::Error::io)?;
        }
        Ok(())
    }

    /// Writes `path` as CSV and the same rows to `path` with a `.jsonl`
    /// extension.
    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let create = |p: &Path| {
            File::create(p)
                .map(BufWriter::new)
                .map_err(|source| ReportError::Io { path: p.to_owned(), source })
        };
        self.write_csv(create(path)?)?;
        let jsonl = path.with_extension("jsonl");
        let mut w = create(&jsonl)?;
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|source| ReportError::Io { path: jsonl, source })
    }
}

//! Parameter sweeps over the NTT and base-conversion kernels and latency
//! benchmarks of the CKKS mechanisms, with CSV or JSON reports.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub mod mechanism;
pub mod stats;
pub mod sweep;

pub use mechanism::{run_mechanism_bench, Mechanism, MechanismBench, MechanismRow};
pub use stats::Stats;
pub use sweep::{run_sweep, Config, Grid, SweepOp, SweepReport, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] ckks_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Run description written ahead of the rows.
#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub version: &'static str,
    pub cores: usize,
    pub threads: usize,
    pub op: String,
    pub n: usize,
    pub l: usize,
    pub alpha: usize,
    pub delta_bits: u32,
    pub seed: u64,
    pub basis_hash: String,
}

impl Metadata {
    pub fn new(op: &str, n: usize, l: usize, alpha: usize, delta_bits: u32, seed: u64, basis_hash: u64) -> Self {
        Metadata {
            version: env!("CARGO_PKG_VERSION"),
            cores: std::thread::available_parallelism().map_or(1, |c| c.get()),
            threads: rayon::current_num_threads(),
            op: op.to_string(),
            n,
            l,
            alpha,
            delta_bits,
            seed,
            basis_hash: format!("{basis_hash:016x}"),
        }
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("version", self.version.to_string()),
            ("cores", self.cores.to_string()),
            ("threads", self.threads.to_string()),
            ("op", self.op.clone()),
            ("n", self.n.to_string()),
            ("l", self.l.to_string()),
            ("alpha", self.alpha.to_string()),
            ("delta_bits", self.delta_bits.to_string()),
            ("seed", self.seed.to_string()),
            ("basis_hash", self.basis_hash.clone()),
        ]
    }
}

/// Writes `# key: value` metadata lines and a CSV table (header always
/// present), or one JSON object with `metadata` and `rows`.
pub fn write_report<T: Serialize, W: Write>(
    mut out: W,
    format: Format,
    meta: &Metadata,
    headers: &[&str],
    rows: &[T],
) -> Result<(), BenchError> {
    match format {
        Format::Csv => {
            for (k, v) in meta.pairs() {
                writeln!(out, "# {k}: {v}")?;
            }
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(headers)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a, T> {
                metadata: &'a Metadata,
                rows: &'a [T],
            }
            serde_json::to_writer_pretty(&mut out, &Doc { metadata: meta, rows })?;
            writeln!(out)?;
        }
    }
    Ok(())
}

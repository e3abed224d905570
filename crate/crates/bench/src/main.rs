use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use ckks_bench::{
    run_sweep, write_report, Format, Grid, Mechanism, MechanismBench, MechanismRow, Metadata, SweepOp, SweepRow,
    SweepSpec,
};
use ckks_core::ckks::CkksParams;
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Op {
    Ntt,
    Intt,
    Bconv,
    Hadd,
    Padd,
    Pmult,
    Rescale,
    Hmult,
    Hrot,
    Modup,
    Moddown,
}

impl Op {
    fn sweep(self) -> Option<SweepOp> {
        match self {
            Op::Ntt => Some(SweepOp::Ntt),
            Op::Intt => Some(SweepOp::Intt),
            Op::Bconv => Some(SweepOp::Bconv),
            _ => None,
        }
    }

    fn mechanism(self) -> Option<Mechanism> {
        Some(match self {
            Op::Hadd => Mechanism::HAdd,
            Op::Padd => Mechanism::PAdd,
            Op::Pmult => Mechanism::PMult,
            Op::Rescale => Mechanism::Rescale,
            Op::Hmult => Mechanism::HMult,
            Op::Hrot => Mechanism::HRot,
            Op::Modup => Mechanism::ModUp,
            Op::Moddown => Mechanism::ModDown,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

/// Kernel parameter sweeps and CKKS mechanism benchmarks.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum)]
    op: Op,
    #[arg(long, default_value_t = 1 << 16)]
    n: usize,
    #[arg(long, default_value_t = 54)]
    l: usize,
    #[arg(long, default_value_t = 14)]
    alpha: usize,
    #[arg(long = "delta-bits", default_value_t = 48)]
    delta_bits: u32,
    /// JSON grid file replacing the default grid; absent lists are empty.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Comma-separated levels. Sweeps default to full and half, mechanisms
    /// to full.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 2 if any grid point is skipped or any mechanism fails.
    #[arg(long)]
    strict: bool,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: &Args) -> Result<bool> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring threads")?;
    }
    let format = match args.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let name = format!("{:?}", args.op).to_lowercase();
    if let Some(op) = args.op.sweep() {
        let mut grid = match &args.grid {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<Grid>(&text).context("parsing the grid file")?
            }
            None => Grid::default_for(op),
        };
        if !args.levels.is_empty() {
            grid.levels = Some(args.levels.clone());
        }
        let spec = SweepSpec {
            grid,
            reps: args.reps,
            warmup: args.warmup,
            seed: args.seed,
            ..SweepSpec::new(op, args.n, args.l, args.alpha, args.delta_bits)
        };
        let report = run_sweep(&spec)?;
        let meta = Metadata::new(&name, args.n, args.l, args.alpha, args.delta_bits, args.seed, report.basis_hash);
        write_report(output(&args.out)?, format, &meta, &SweepRow::HEADERS, &report.rows)?;
        return Ok(report.skipped() == 0);
    }
    let m = args.op.mechanism().expect("every op is a sweep or a mechanism");
    let levels = if args.levels.is_empty() { vec![args.l] } else { args.levels.clone() };
    let params = CkksParams::new(args.n, args.l, args.alpha, args.delta_bits);
    let (rows, hash) = match MechanismBench::new(params, args.seed, &[m]) {
        Ok(mut bench) => {
            let hash = bench.context().basis().hash();
            let rows: Vec<MechanismRow> = levels
                .iter()
                .map(|&level| {
                    bench
                        .run(m, level, args.reps, args.warmup)
                        .unwrap_or_else(|e| MechanismRow::failed(m, level, args.reps, args.warmup, e.to_string()))
                })
                .collect();
            (rows, hash)
        }
        Err(e) => {
            let rows = levels.iter().map(|&l| MechanismRow::failed(m, l, args.reps, args.warmup, e.to_string())).collect();
            (rows, 0)
        }
    };
    let meta = Metadata::new(&name, args.n, args.l, args.alpha, args.delta_bits, args.seed, hash);
    write_report(output(&args.out)?, format, &meta, &MechanismRow::HEADERS, &rows)?;
    Ok(rows.iter().all(|r| r.error.is_empty()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(clean) if !clean && args.strict => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

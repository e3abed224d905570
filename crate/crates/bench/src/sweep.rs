use std::sync::Arc;
use std::time::Instant;

use ckks_core::bconv::{bconv_part2, BConvTable, BConvTiling};
use ckks_core::ntt::{NttParams, NttPlan};
use ckks_core::poly::{Domain, Polynomial, PrimeSet};
use ckks_core::rns::RnsBasis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::Stats;
use crate::BenchError;

/// Kernel swept over a parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepOp {
    Ntt,
    Intt,
    Bconv,
}

impl SweepOp {
    pub fn name(self) -> &'static str {
        match self {
            SweepOp::Ntt => "ntt",
            SweepOp::Intt => "intt",
            SweepOp::Bconv => "bconv",
        }
    }
}

/// Parameter lists; the swept points are their cartesian product. Fields
/// that do not apply to the operation are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    /// Levels (main prime counts) to run every point at.
    pub levels: Option<Vec<usize>>,
    /// NTT pass sizes `(n1, n2)`.
    pub shapes: Vec<(usize, usize)>,
    pub g1: Vec<usize>,
    pub g2: Vec<usize>,
    pub b_k1: Vec<usize>,
    pub ot: Vec<bool>,
    /// BConv workers per group along the limb axis; `n_b = block / l_b`.
    pub l_b: Vec<usize>,
    pub l_t: Vec<usize>,
    pub n_t: Vec<usize>,
    pub block: Option<usize>,
}

impl Grid {
    /// Pass sizes and granularities around the default `N = 2^16` plan.
    pub fn ntt_default() -> Self {
        Grid {
            shapes: vec![(64, 1024), (128, 512), (256, 256)],
            g1: vec![8, 16],
            g2: vec![8, 16],
            b_k1: vec![16],
            ot: vec![false],
            ..Grid::default()
        }
    }

    /// Tilings with `l_b * n_b = 256`.
    pub fn bconv_default() -> Self {
        Grid {
            l_b: vec![1, 2, 4, 8],
            l_t: vec![1, 2, 3, 4],
            n_t: vec![1, 2, 4, 8],
            block: Some(256),
            ..Grid::default()
        }
    }

    pub fn default_for(op: SweepOp) -> Self {
        match op {
            SweepOp::Ntt | SweepOp::Intt => Self::ntt_default(),
            SweepOp::Bconv => Self::bconv_default(),
        }
    }
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Config {
    Ntt(NttParams),
    Bconv(BConvTiling),
}

impl Config {
    pub fn describe(&self) -> String {
        match self {
            Config::Ntt(p) => format!(
                "n1={} n2={} g1={} g2={} b_k1={} ot={}",
                p.n1, p.n2, p.g1, p.g2, p.b_k1, p.ot
            ),
            Config::Bconv(t) => format!("l_b={} n_b={} l_t={} n_t={} v={}", t.l_b, t.n_b, t.l_t, t.n_t, t.v),
        }
    }
}

/// A full sweep request.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub op: SweepOp,
    pub n: usize,
    pub l: usize,
    pub alpha: usize,
    pub delta_bits: u32,
    pub grid: Grid,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// Full and half level with the default grid of `op`.
    pub fn new(op: SweepOp, n: usize, l: usize, alpha: usize, delta_bits: u32) -> Self {
        SweepSpec {
            op,
            n,
            l,
            alpha,
            delta_bits,
            grid: Grid::default_for(op),
            reps: 5,
            warmup: 1,
            seed: 0,
        }
    }

    pub fn levels(&self) -> Vec<usize> {
        self.grid.levels.clone().unwrap_or_else(|| vec![self.l, (self.l / 2).next_multiple_of(2)])
    }

    /// Grid points in report order.
    pub fn points(&self) -> Vec<Config> {
        let g = &self.grid;
        let mut out = Vec::new();
        match self.op {
            SweepOp::Ntt | SweepOp::Intt => {
                let base = NttParams::default_for(self.n);
                for &(n1, n2) in &g.shapes {
                    for &g1 in &g.g1 {
                        for &g2 in &g.g2 {
                            for &b_k1 in &g.b_k1 {
                                for &ot in &g.ot {
                                    out.push(Config::Ntt(NttParams { n1, n2, g1, g2, b_k1, ot, ..base }));
                                }
                            }
                        }
                    }
                }
            }
            SweepOp::Bconv => {
                let block = g.block.unwrap_or(256);
                for &l_b in &g.l_b {
                    for &l_t in &g.l_t {
                        for &n_t in &g.n_t {
                            let v = if n_t % 4 == 0 { 4 } else if n_t % 2 == 0 { 2 } else { 1 };
                            let n_b = if l_b == 0 { 0 } else { block / l_b };
                            out.push(Config::Bconv(BConvTiling { l_t, n_t, l_b, n_b, v }));
                        }
                    }
                }
            }
        }
        out
    }
}

/// One report row. Skipped and mismatching points carry no timings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub op: &'static str,
    pub level: usize,
    pub params: String,
    pub valid: bool,
    pub bit_exact: Option<bool>,
    pub median_ns: Option<u64>,
    pub min_ns: Option<u64>,
    pub p99_ns: Option<u64>,
    pub reps: usize,
    /// Position by median among the timed rows of the same level.
    pub rank: Option<usize>,
    /// Median over the best median of the same level.
    pub relative: Option<f64>,
    pub reason: String,
}

impl SweepRow {
    pub const HEADERS: [&'static str; 12] = [
        "op", "level", "params", "valid", "bit_exact", "median_ns", "min_ns", "p99_ns", "reps", "rank", "relative",
        "reason",
    ];

    fn skipped(op: SweepOp, level: usize, params: String, reason: String) -> Self {
        SweepRow {
            op: op.name(),
            level,
            params,
            valid: false,
            bit_exact: None,
            median_ns: None,
            min_ns: None,
            p99_ns: None,
            reps: 0,
            rank: None,
            relative: None,
            reason,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub basis_hash: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn skipped(&self) -> usize {
        self.rows.iter().filter(|r| !r.valid).count()
    }
}

fn random_poly(basis: &Arc<RnsBasis>, rows: &PrimeSet, domain: Domain, mont: bool, rng: &mut ChaCha8Rng) -> Polynomial {
    let data: Vec<Vec<u32>> = rows
        .indices()
        .iter()
        .map(|&i| {
            let q = basis.modulus(i);
            (0..basis.n()).map(|_| rng.random_range(0..q)).collect()
        })
        .collect();
    Polynomial::from_rows(basis.clone(), rows.clone(), &data, domain, mont).expect("canonical rows")
}

/// A kernel bound to one level: reference output and a runner per config.
struct Kernel {
    input: Polynomial,
    reference: Vec<Vec<u32>>,
    run: Box<dyn Fn(&Config, &Polynomial) -> Result<Polynomial, String>>,
}

fn ntt_kernel(op: SweepOp, basis: &Arc<RnsBasis>, base: &Arc<NttPlan>, level: usize, rng: &mut ChaCha8Rng) -> Result<Kernel, String> {
    let rows = PrimeSet::prefix(level);
    let inverse = op == SweepOp::Intt;
    let input = if inverse {
        random_poly(basis, &rows, Domain::Evaluation, true, rng)
    } else {
        random_poly(basis, &rows, Domain::Coefficient, false, rng)
    };
    let default = Config::Ntt(*base.params());
    let base = base.clone();
    let run = move |c: &Config, x: &Polynomial| -> Result<Polynomial, String> {
        let Config::Ntt(p) = c else { return Err("not an NTT configuration".into()) };
        let plan = base.with_params(*p).map_err(|e| e.to_string())?;
        let mut y = x.clone();
        if inverse { plan.inverse(&mut y) } else { plan.forward(&mut y) }.map_err(|e| e.to_string())?;
        Ok(y)
    };
    let reference = run(&default, &input)?.to_canonical_rows();
    Ok(Kernel { input, reference, run: Box::new(run) })
}

fn bconv_kernel(basis: &Arc<RnsBasis>, level: usize, rng: &mut ChaCha8Rng) -> Result<Kernel, String> {
    let alpha = basis.alpha();
    if level <= alpha {
        return Err(format!("level {level} leaves no target rows beyond a digit of {alpha}"));
    }
    let src = PrimeSet::new((0..alpha).collect());
    let dst = PrimeSet::new((alpha..level).chain(basis.aux_indices()).collect());
    let table = Arc::new(BConvTable::new(basis.clone(), src.clone(), dst).map_err(|e| e.to_string())?);
    let input = random_poly(basis, &src, Domain::Coefficient, false, rng);
    let run = move |c: &Config, x: &Polynomial| -> Result<Polynomial, String> {
        let Config::Bconv(t) = c else { return Err("not a BConv configuration".into()) };
        let mut y = bconv_part2(x, &table, t).map_err(|e| e.to_string())?;
        y.canonicalize();
        Ok(y)
    };
    let reference = run(&Config::Bconv(BConvTiling::default()), &input)?.to_canonical_rows();
    Ok(Kernel { input, reference, run: Box::new(run) })
}

fn validate(op: SweepOp, c: &Config, n: usize) -> Result<(), String> {
    match (op, c) {
        (SweepOp::Ntt | SweepOp::Intt, Config::Ntt(p)) => p.validate(n).map_err(|e| e.to_string()),
        (SweepOp::Bconv, Config::Bconv(t)) => {
            t.validate().map_err(|e| e.to_string())?;
            if t.n_b == 0 {
                return Err("n_b must be positive".into());
            }
            Ok(())
        }
        _ => Err("configuration does not match the operation".into()),
    }
}

/// Runs every grid point at every level. Each point is first compared
/// bit-exactly against the default configuration and only timed when
/// equal.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, BenchError> {
    let basis = Arc::new(RnsBasis::generate(spec.n, spec.l, spec.alpha, spec.delta_bits)?);
    let base = Arc::new(NttPlan::new(basis.clone(), NttParams::default_for(spec.n))?);
    let points = spec.points();
    let mut rows = Vec::new();
    for level in spec.levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ level as u64);
        let kernel = if level == 0 || level > spec.l || level % 2 != 0 {
            Err(format!("level {level} is not an even level in [2, {}]", spec.l))
        } else {
            match spec.op {
                SweepOp::Ntt | SweepOp::Intt => ntt_kernel(spec.op, &basis, &base, level, &mut rng),
                SweepOp::Bconv => bconv_kernel(&basis, level, &mut rng),
            }
        };
        let first = rows.len();
        for c in &points {
            let params = c.describe();
            let kernel = match &kernel {
                Ok(k) => k,
                Err(reason) => {
                    rows.push(SweepRow::skipped(spec.op, level, params, reason.clone()));
                    continue;
                }
            };
            if let Err(reason) = validate(spec.op, c, spec.n) {
                rows.push(SweepRow::skipped(spec.op, level, params, reason));
                continue;
            }
            let out = match (kernel.run)(c, &kernel.input) {
                Ok(out) => out,
                Err(reason) => {
                    rows.push(SweepRow::skipped(spec.op, level, params, reason));
                    continue;
                }
            };
            if out.to_canonical_rows() != kernel.reference {
                let mut row = SweepRow::skipped(spec.op, level, params, "output differs from the default configuration".into());
                row.bit_exact = Some(false);
                rows.push(row);
                continue;
            }
            let mut samples = Vec::with_capacity(spec.reps);
            for i in 0..spec.warmup + spec.reps {
                let t = Instant::now();
                let _ = (kernel.run)(c, &kernel.input);
                if i >= spec.warmup {
                    samples.push(t.elapsed().as_nanos() as u64);
                }
            }
            let stats = Stats::from_samples(samples);
            rows.push(SweepRow {
                op: spec.op.name(),
                level,
                params,
                valid: true,
                bit_exact: Some(true),
                median_ns: stats.map(|s| s.median_ns),
                min_ns: stats.map(|s| s.min_ns),
                p99_ns: stats.map(|s| s.p99_ns),
                reps: spec.reps,
                rank: None,
                relative: None,
                reason: String::new(),
            });
        }
        rank(&mut rows[first..]);
    }
    Ok(SweepReport { basis_hash: basis.hash(), rows })
}

fn rank(rows: &mut [SweepRow]) {
    let mut timed: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].median_ns.is_some()).collect();
    timed.sort_by_key(|&i| rows[i].median_ns);
    let Some(&best) = timed.first() else { return };
    let best = rows[best].median_ns.unwrap_or(1).max(1) as f64;
    for (r, &i) in timed.iter().enumerate() {
        rows[i].rank = Some(r + 1);
        rows[i].relative = rows[i].median_ns.map(|m| m as f64 / best);
    }
}

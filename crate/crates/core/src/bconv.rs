//! Fast base conversion and the modulus-switching routines built on it.
//!
//! For a source set with product `P` and a target prime `q_i`,
//!
//! ```text
//! conv(a)_i = sum_j [a_j * (P/P_j)^-1]_{P_j} * (P/P_j)  mod q_i
//! ```
//!
//! which equals `a + e*P` for an integer `0 <= e < |source|`. Part 1 (the
//! per-row constant) is merged into the inverse NTT exit stage; part 2 is a
//! tiled matrix product with one signed Montgomery reduction per output.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::counters::Counters;
use crate::error::{Error, Result};
use crate::modarith::mont_reduce;
use crate::ntt::NttPlan;
use crate::poly::{Domain, FusedPipeline, Polynomial, PrimeSet, Stage};
use crate::rns::RnsBasis;

/// Constants for converting from `src` rows to `dst` rows.
#[derive(Debug)]
pub struct BConvTable {
    basis: Arc<RnsBasis>,
    src: PrimeSet,
    dst: PrimeSet,
    /// `dst.len() x src.len()`, entry `(P/P_j) * 2^32 mod q_i`, centered.
    c: Vec<i32>,
    /// `(P/P_j)^-1 mod P_j`, plain.
    inv_p_hat: Vec<u32>,
    reduce_every: Option<usize>,
}

impl BConvTable {
    pub fn new(basis: Arc<RnsBasis>, src: PrimeSet, dst: PrimeSet) -> Result<Self> {
        if src.is_empty() || dst.is_empty() {
            return Err(Error::InvalidInput("base conversion needs non-empty source and target".into()));
        }
        let all = src.indices().iter().chain(dst.indices());
        if all.clone().any(|&i| i >= basis.len()) {
            return Err(Error::BasisMismatch);
        }
        if src.indices().iter().any(|&i| dst.contains(i)) {
            return Err(Error::InvalidInput("source and target sets overlap".into()));
        }
        let p = basis.product(src.indices());
        let inv_p_hat = src
            .indices()
            .iter()
            .map(|&j| {
                let ctx = basis.prime(j);
                let hat: BigUint = (&p / ctx.q()) % ctx.q();
                ctx.inv_mod(hat.to_u64().expect("residue fits")) as u32
            })
            .collect();
        let mut c = Vec::with_capacity(dst.len() * src.len());
        for &i in dst.indices() {
            let ctx = basis.prime(i);
            let q = ctx.q() as u64;
            let r = (1u64 << 32) % q;
            for &j in src.indices() {
                let hat = src
                    .indices()
                    .iter()
                    .filter(|&&k| k != j)
                    .fold(1u64, |acc, &k| ctx.mul_mod(acc, basis.modulus(k) as u64 % q));
                let v = ctx.mul_mod(hat, r);
                c.push(if v > q / 2 { v as i64 - q as i64 } else { v as i64 } as i32);
            }
        }
        // Without mid-reductions |sum| <= sum_j (P_j - 1) * (q_i - 1) / 2,
        // which must stay below q_i * 2^31 for the final Montgomery step.
        let src_sum: u64 = src.moduli(&basis).iter().map(|&q| q as u64 - 1).sum();
        let reduce_every = if src_sum < 1 << 32 {
            None
        } else {
            let max_src = src.moduli(&basis).into_iter().max().unwrap_or(1) as u64;
            Some(((1u64 << 31) / max_src).max(1) as usize)
        };
        Ok(Self { basis, src, dst, c, inv_p_hat, reduce_every })
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    pub fn src(&self) -> &PrimeSet {
        &self.src
    }

    pub fn dst(&self) -> &PrimeSet {
        &self.dst
    }

    /// Centered `(P/P_j) * 2^32 mod q_i` for target row `i`, source row `j`.
    pub fn entry(&self, i: usize, j: usize) -> i32 {
        self.c[i * self.src.len() + j]
    }

    pub fn inv_p_hat(&self) -> &[u32] {
        &self.inv_p_hat
    }

    /// Accumulation length between intermediate reductions, if the static
    /// bound requires them.
    pub fn reduce_every(&self) -> Option<usize> {
        self.reduce_every
    }

    /// Largest accumulator magnitude reachable before a reduction.
    pub fn accumulator_bound(&self) -> u128 {
        let srcs = self.src.moduli(&self.basis);
        let terms = self.reduce_every.unwrap_or(srcs.len()).min(srcs.len());
        let max_src = *srcs.iter().max().unwrap_or(&0) as u128;
        let max_dst = self.dst.moduli(&self.basis).into_iter().max().unwrap_or(0) as u128;
        let carry = if self.reduce_every.is_some() { max_dst } else { 0 };
        carry + terms as u128 * max_src * (max_dst / 2)
    }
}

/// Part-2 tiling: each worker produces an `l_t x n_t` output tile, a work
/// group holds `l_b x n_b` workers, and the grid covers all rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BConvTiling {
    pub l_t: usize,
    pub n_t: usize,
    pub l_b: usize,
    pub n_b: usize,
    /// Vector width hint for column access: 1, 2 or 4.
    pub v: usize,
}

impl Default for BConvTiling {
    fn default() -> Self {
        Self { l_t: 3, n_t: 4, l_b: 1, n_b: 256, v: 4 }
    }
}

impl BConvTiling {
    pub fn validate(&self) -> Result<()> {
        if self.l_t == 0 || self.n_t == 0 || self.l_b == 0 || self.n_b == 0 {
            return Err(Error::InvalidTiling("tile and group sizes must be positive".into()));
        }
        if !matches!(self.v, 1 | 2 | 4) {
            return Err(Error::InvalidTiling(format!("vector width {} not in {{1, 2, 4}}", self.v)));
        }
        if self.n_t % self.v != 0 {
            return Err(Error::InvalidTiling(format!("n_t = {} is not a multiple of v = {}", self.n_t, self.v)));
        }
        Ok(())
    }

    /// Grid shape `(l_g, n_g)` covering `l` rows and `n` columns.
    pub fn grid(&self, l: usize, n: usize) -> (usize, usize) {
        (l.div_ceil(self.l_t * self.l_b), n.div_ceil(self.n_t * self.n_b))
    }
}

/// Standalone part 1: row `j` times `(P/P_j)^-1 mod P_j`. Output canonical.
pub fn bconv_part1(t: &Polynomial, table: &BConvTable) -> Result<Polynomial> {
    if t.rows() != table.src() {
        return Err(Error::BasisMismatch);
    }
    if t.domain() != Domain::Coefficient {
        return Err(Error::DomainMismatch { expected: Domain::Coefficient, found: t.domain() });
    }
    if t.is_mont() {
        return Err(Error::FormMismatch("base conversion expects plain residues"));
    }
    let consts: Vec<i32> = t
        .rows()
        .indices()
        .iter()
        .zip(table.inv_p_hat())
        .map(|(&b, &c)| t.basis().prime(b).mont_canonical(c as u64))
        .collect();
    let mut out = t.clone();
    out.mul_const_assign(&consts)?;
    out.canonicalize();
    Ok(out)
}

/// Part 2: `out_i = sum_j t_j * c[i][j]`, reduced once per output (or at
/// fixed intermediate points for long sums). Output rows lie in `(-q, q)`.
pub fn bconv_part2(t: &Polynomial, table: &BConvTable, tiling: &BConvTiling) -> Result<Polynomial> {
    tiling.validate()?;
    if t.rows() != table.src() {
        return Err(Error::BasisMismatch);
    }
    if t.domain() != Domain::Coefficient {
        return Err(Error::DomainMismatch { expected: Domain::Coefficient, found: t.domain() });
    }
    if t.is_mont() {
        return Err(Error::FormMismatch("base conversion expects plain residues"));
    }
    let n = t.n();
    let dst = table.dst();
    let mut out = t.zero_like(dst.clone(), Domain::Coefficient, false);
    let width = tiling.n_t * tiling.n_b;
    let (_, n_g) = tiling.grid(dst.len(), n);
    let mut per_col: Vec<Vec<&mut [i32]>> = (0..n_g).map(|_| Vec::with_capacity(dst.len())).collect();
    for row in out.data_mut().chunks_mut(n) {
        for (g, seg) in row.chunks_mut(width).enumerate() {
            per_col[g].push(seg);
        }
    }
    let src: Vec<&[i32]> = (0..t.num_rows()).map(|j| t.row(j)).collect();
    let kernel = match tiling.v {
        1 => group_kernel::<1>,
        2 => group_kernel::<2>,
        _ => group_kernel::<4>,
    };
    per_col.par_iter_mut().enumerate().for_each_init(Vec::new, |stage, (g, segs)| {
        kernel(segs, &src, g * width, table, tiling, stage);
    });
    Ok(out)
}

/// All work groups of one grid column: `segs[i]` is target row `i` restricted
/// to the column range starting at `col0`.
fn group_kernel<const V: usize>(
    segs: &mut [&mut [i32]],
    src: &[&[i32]],
    col0: usize,
    table: &BConvTable,
    tiling: &BConvTiling,
    stage: &mut Vec<i32>,
) {
    let alpha = src.len();
    let width = segs.first().map_or(0, |s| s.len());
    let staged = tiling.l_b > 1;
    if staged {
        stage.clear();
        for s in src {
            stage.extend_from_slice(&s[col0..col0 + width]);
        }
    }
    let basis = table.basis();
    let band = tiling.l_t * tiling.l_b;
    for (gl, rows) in segs.chunks_mut(band).enumerate() {
        for (wl, tile_rows) in rows.chunks_mut(tiling.l_t).enumerate() {
            let row0 = gl * band + wl * tiling.l_t;
            for (r, out) in tile_rows.iter_mut().enumerate() {
                let i = row0 + r;
                let ctx = basis.prime(table.dst().indices()[i]);
                let q = ctx.q_i32() as i64;
                let coeffs = &table.c[i * alpha..(i + 1) * alpha];
                for wn in 0..tiling.n_b {
                    let start = wn * tiling.n_t;
                    if start >= width {
                        break;
                    }
                    let end = (start + tiling.n_t).min(width);
                    let load = |j: usize, cs: usize, ce: usize| -> &[i32] {
                        if staged {
                            &stage[j * width + cs..j * width + ce]
                        } else {
                            &src[j][col0 + cs..col0 + ce]
                        }
                    };
                    for cs in (start..end).step_by(V) {
                        let ce = (cs + V).min(end);
                        let mut acc = [0i64; V];
                        for (j, &c) in coeffs.iter().enumerate() {
                            if let Some(k) = table.reduce_every {
                                if j > 0 && j % k == 0 {
                                    acc.iter_mut().for_each(|a| *a %= q);
                                }
                            }
                            let c = c as i64;
                            for (a, &x) in acc.iter_mut().zip(load(j, cs, ce)) {
                                *a += x as i64 * c;
                            }
                        }
                        for (d, &a) in out[cs..ce].iter_mut().zip(&acc) {
                            *d = mont_reduce(a, ctx);
                        }
                    }
                }
            }
        }
    }
}

/// Modulus switching and divide-and-round on top of the NTT and base
/// conversion, with a cache of conversion tables.
pub struct BaseConverter {
    plan: Arc<NttPlan>,
    tiling: BConvTiling,
    counters: Arc<Counters>,
    tables: Mutex<HashMap<(PrimeSet, PrimeSet), Arc<BConvTable>>>,
}

impl std::fmt::Debug for BaseConverter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaseConverter").field("tiling", &self.tiling).finish()
    }
}

impl BaseConverter {
    pub fn new(plan: Arc<NttPlan>, tiling: BConvTiling, counters: Arc<Counters>) -> Result<Self> {
        tiling.validate()?;
        Ok(Self { plan, tiling, counters, tables: Mutex::new(HashMap::new()) })
    }

    pub fn plan(&self) -> &Arc<NttPlan> {
        &self.plan
    }

    pub fn tiling(&self) -> &BConvTiling {
        &self.tiling
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.counters
    }

    /// Cached table for the `(src, dst)` pair.
    pub fn table(&self, src: &PrimeSet, dst: &PrimeSet) -> Result<Arc<BConvTable>> {
        let key = (src.clone(), dst.clone());
        if let Some(t) = self.tables.lock().expect("table cache").get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(BConvTable::new(self.plan.basis().clone(), src.clone(), dst.clone())?);
        self.tables.lock().expect("table cache").insert(key, t.clone());
        Ok(t)
    }

    /// INTT (with part 1 merged), part 2, NTT. Input and output are in the
    /// evaluation domain, Montgomery form.
    pub fn mod_switch(&self, a: &Polynomial, dst: &PrimeSet) -> Result<Polynomial> {
        self.mod_switch_shifted(a, dst, None, false)
    }

    /// Mod switch of `a + h` (with `h` added to every coefficient), minus
    /// `h` on the target rows. With `exact`, the overflow multiple of the
    /// source product is estimated in floating point and removed.
    fn mod_switch_shifted(&self, a: &Polynomial, dst: &PrimeSet, h: Option<&BigUint>, exact: bool) -> Result<Polynomial> {
        if a.domain() != Domain::Evaluation {
            return Err(Error::DomainMismatch { expected: Domain::Evaluation, found: a.domain() });
        }
        if !a.is_mont() {
            return Err(Error::FormMismatch("mod switch expects Montgomery-form input"));
        }
        let table = self.table(a.rows(), dst)?;
        let mut t = a.clone();
        self.plan.inverse_scaled(&mut t, table.inv_p_hat())?;
        self.counters.intt(1);
        if let Some(h) = h {
            let basis = a.basis();
            let shifts: Vec<u64> = a
                .rows()
                .indices()
                .iter()
                .zip(table.inv_p_hat())
                .map(|(&j, &inv)| basis.prime(j).mul_mod(residue(h, basis.modulus(j)), inv as u64))
                .collect();
            add_to_coefficients(&mut t, &shifts, false);
        }
        if exact {
            t.canonicalize();
        }
        let overflow = exact.then(|| overflow_estimate(&t));
        let mut out = bconv_part2(&t, &table, &self.tiling)?;
        self.counters.bconv(1);
        if let Some(eps) = overflow {
            let d = a.basis().product(a.rows().indices());
            let d_mod: Vec<u64> = dst.indices().iter().map(|&i| residue(&d, a.basis().modulus(i))).collect();
            subtract_multiples(&mut out, &eps, &d_mod);
        }
        if let Some(h) = h {
            let shifts: Vec<u64> = dst.indices().iter().map(|&i| residue(h, a.basis().modulus(i))).collect();
            add_to_coefficients(&mut out, &shifts, true);
        }
        self.plan.forward(&mut out)?;
        self.counters.ntt(1);
        Ok(out)
    }

    /// `round(x / D)` over the remaining rows, where `D` is the product of
    /// the `drop` rows. The conversion overflow is removed with a
    /// floating-point estimate, so the result is exact unless a sum lands
    /// within rounding distance of an integer (then it is off by one).
    pub fn divide_round(&self, x: &Polynomial, drop: &PrimeSet) -> Result<Polynomial> {
        let (keep, d) = self.split(x, drop)?;
        let half = &d >> 1usize;
        let conv = self.mod_switch_shifted(&x.select(drop)?, &keep, Some(&half), true)?;
        finish_division(x, &conv, &keep, &d)
    }

    /// Exact `round(x / (q_a * q_b))` for a two-prime `drop` set: the
    /// residue modulo `q_a * q_b` is lifted without error before conversion.
    pub fn rescale_exact(&self, x: &Polynomial, drop: &PrimeSet) -> Result<Polynomial> {
        let &[a, b] = drop.indices() else {
            return Err(Error::InvalidInput("exact rescale drops exactly two primes".into()));
        };
        let (keep, d) = self.split(x, drop)?;
        let half = &d >> 1usize;
        let mut pair = x.select(drop)?;
        self.plan.inverse(&mut pair)?;
        self.counters.intt(1);
        let basis = x.basis();
        let (qa, qb) = (basis.modulus(a) as u64, basis.modulus(b) as u64);
        add_to_coefficients(&mut pair, &[residue(&half, qa as u32), residue(&half, qb as u32)], false);
        let qa_inv = basis.prime(b).inv_mod(qa % qb);
        let n = x.n();
        let (xa, xb) = (pair.row(0), pair.row(1));
        // Garner: y = x_a + q_a * ((x_b - x_a) * q_a^-1 mod q_b) < q_a * q_b.
        let lift: Vec<u64> = xa
            .par_iter()
            .zip(xb.par_iter())
            .map(|(&ra, &rb)| {
                let (ra, rb) = (ra as u64, rb as u64);
                let k = (rb + qb - ra % qb) % qb * qa_inv % qb;
                ra + qa * k
            })
            .collect();
        let mut conv = x.zero_like(keep.clone(), Domain::Coefficient, false);
        conv.data_mut().par_chunks_mut(n).zip(keep.indices().par_iter()).for_each(|(row, &i)| {
            let q = basis.modulus(i) as u64;
            let h = residue(&half, q as u32);
            for (dst, &v) in row.iter_mut().zip(&lift) {
                *dst = ((v % q + q - h) % q) as i32;
            }
        });
        self.plan.forward(&mut conv)?;
        self.counters.ntt(1);
        finish_division(x, &conv, &keep, &d)
    }

    /// Kept rows and the product `D` of the dropped ones.
    fn split(&self, x: &Polynomial, drop: &PrimeSet) -> Result<(PrimeSet, BigUint)> {
        if x.domain() != Domain::Evaluation || !x.is_mont() {
            return Err(Error::FormMismatch("division expects evaluation-domain Montgomery input"));
        }
        if drop.is_empty() || !drop.is_subset_of(x.rows()) {
            return Err(Error::BasisMismatch);
        }
        let keep = x.rows().difference(drop);
        if keep.is_empty() {
            return Err(Error::InvalidInput("division would leave no rows".into()));
        }
        Ok((keep, x.basis().product(drop.indices())))
    }
}

fn residue(v: &BigUint, q: u32) -> u64 {
    let r: BigUint = v % q;
    r.to_u64().expect("residue fits")
}

/// Adds (or subtracts) `shifts[i]` to every coefficient of row `i`.
fn add_to_coefficients(p: &mut Polynomial, shifts: &[u64], subtract: bool) {
    let n = p.n();
    let basis = p.basis().clone();
    let rows = p.rows().clone();
    p.data_mut().par_chunks_mut(n).zip(rows.indices().par_iter()).zip(shifts.par_iter()).for_each(
        |((row, &i), &s)| {
            let q = basis.modulus(i) as i32;
            let s = if subtract { -(s as i32) } else { s as i32 };
            row.iter_mut().for_each(|x| *x = crate::modarith::reduce_lazy2(*x + s, q));
        },
    );
}

/// `floor(sum_j y_j / p_j)` per coefficient for canonical part-1 output
/// `y`: the multiple of the source product that part 2 overshoots by.
fn overflow_estimate(t: &Polynomial) -> Vec<u8> {
    let n = t.n();
    let inv: Vec<f64> = t.rows().moduli(t.basis()).iter().map(|&p| 1.0 / p as f64).collect();
    let mut sums = vec![0f64; n];
    sums.par_chunks_mut(1024).enumerate().for_each(|(c, acc)| {
        let start = c * 1024;
        for (j, &w) in inv.iter().enumerate() {
            let row = &t.row(j)[start..start + acc.len()];
            for (a, &y) in acc.iter_mut().zip(row) {
                *a += y as f64 * w;
            }
        }
    });
    sums.into_iter().map(|v| v.floor() as u8).collect()
}

/// `row_i -= eps * d_mod[i]` for every coefficient.
fn subtract_multiples(p: &mut Polynomial, eps: &[u8], d_mod: &[u64]) {
    let n = p.n();
    let basis = p.basis().clone();
    let rows = p.rows().clone();
    p.data_mut().par_chunks_mut(n).zip(rows.indices().par_iter()).zip(d_mod.par_iter()).for_each(
        |((row, &i), &dm)| {
            let q = basis.modulus(i) as i64;
            let dm = dm as i64;
            for (x, &e) in row.iter_mut().zip(eps) {
                *x = ((*x as i64 - e as i64 * dm) % q) as i32;
            }
        },
    );
}

/// `(x - conv) * D^-1` on the kept rows.
fn finish_division(x: &Polynomial, conv: &Polynomial, keep: &PrimeSet, d: &BigUint) -> Result<Polynomial> {
    let basis = x.basis();
    let d_inv: Vec<i32> = keep
        .indices()
        .iter()
        .map(|&i| {
            let ctx = basis.prime(i);
            ctx.mont_canonical(ctx.inv_mod(residue(d, ctx.q())))
        })
        .collect();
    FusedPipeline::new(vec![Stage::Sub(1), Stage::MulConst(d_inv.into())])?.execute(&[x, conv], keep)
}

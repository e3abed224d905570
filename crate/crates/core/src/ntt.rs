//! Negacyclic NTT over each limb, computed as a two-pass decomposition.
//!
//! A limb of length `N = n1 * n2` is viewed as `n1` rows of `n2` elements.
//! The forward transform (Cooley-Tukey, large strides first) runs a
//! length-`n1` pass down each column, then a length-`n2` pass along each row,
//! and leaves its output in bit-reversed order. The inverse (Gentleman-Sande)
//! runs the passes in the opposite order.
//!
//! Each pass is split into phases of `log2(g)` butterfly stages. In one phase
//! a worker loads `g` strided elements, runs its stages locally and writes
//! them back. Column batches of `b_k1` columns are copied into a staging
//! buffer first.
//!
//! Butterfly `(j, j + t)` uses twiddle index `N/(2t) + j/(2t)` into tables
//! holding `psi^brev(k)` in Montgomery form. Forward input is plain; the first
//! stage multiplies by `R^2`-folded constants so the output lands in
//! Montgomery form. The last inverse stage multiplies by `N^-1` (times an
//! optional per-row scalar) and leaves the output plain and canonical.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modarith::{canonical_from_lazy, mont_mul, reduce_lazy2, PrimeContext};
use crate::poly::{Domain, Polynomial};
use crate::rns::RnsBasis;

/// Reverses the low `bits` bits of `x`.
#[inline]
pub fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Transform shape and twiddle-generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NttParams {
    pub n1: usize,
    pub n2: usize,
    pub g1: usize,
    pub g2: usize,
    pub b_k1: usize,
    /// Generate row-pass twiddles on the fly.
    pub ot: bool,
    /// Split point of the on-the-fly twiddle exponent.
    pub lsb_size: usize,
}

impl NttParams {
    /// `(128, 512, 16, 8, 16)` at `N = 2^16`; a proportionate split otherwise.
    pub fn default_for(n: usize) -> Self {
        let log_n = n.trailing_zeros();
        if n == 1 << 16 {
            return Self { n1: 128, n2: 512, g1: 16, g2: 8, b_k1: 16, ot: false, lsb_size: 256 };
        }
        let n1 = 1usize << (log_n / 2).max(1);
        let n2 = (n / n1).max(2);
        Self {
            n1,
            n2,
            g1: n1.min(16),
            g2: n2.min(8),
            b_k1: n2.min(16),
            ot: false,
            lsb_size: 1 << log_n.div_ceil(2),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let pow2 = |x: usize| x.is_power_of_two();
        let fail = |msg: String| Err(Error::InvalidPlan(msg));
        if !pow2(self.n1) || !pow2(self.n2) || self.n1 < 2 || self.n2 < 2 {
            return fail(format!("pass sizes {}x{} must be powers of two >= 2", self.n1, self.n2));
        }
        if self.n1 * self.n2 != n {
            return fail(format!("{} * {} != N = {n}", self.n1, self.n2));
        }
        if !pow2(self.g1) || self.g1 < 2 || self.g1 > self.n1 {
            return fail(format!("g1 = {} must be a power of two in [2, n1]", self.g1));
        }
        if !pow2(self.g2) || self.g2 < 2 || self.g2 > self.n2 {
            return fail(format!("g2 = {} must be a power of two in [2, n2]", self.g2));
        }
        if !pow2(self.b_k1) || self.b_k1 > self.n2 {
            return fail(format!("b_k1 = {} must be a power of two dividing n2", self.b_k1));
        }
        if !pow2(self.lsb_size) || self.lsb_size > n {
            return fail(format!("lsb_size = {} must be a power of two <= N", self.lsb_size));
        }
        Ok(())
    }
}

struct PrimeTables {
    ctx: PrimeContext,
    /// `Mont(psi^brev(k))`, canonical.
    fwd: Vec<i32>,
    /// `Mont(psi^-brev(k))`, canonical.
    inv: Vec<i32>,
    /// `psi^brev(1) * R^2 mod q`, for the merged entry stage.
    entry_v: i32,
    /// Plain `N^-1 mod q`.
    n_inv: u64,
    /// Plain `psi^-brev(1) * N^-1 mod q`.
    exit_v: u64,
    psi: u64,
}

/// Twiddle tables for every prime of a basis.
pub struct NttTables {
    basis: Arc<RnsBasis>,
    primes: Vec<PrimeTables>,
}

/// Finds the smallest-generator primitive `2n`-th root of unity modulo `q`.
pub fn primitive_root(ctx: &PrimeContext, two_n: u64) -> u64 {
    let q = ctx.q() as u64;
    assert_eq!((q - 1) % two_n, 0, "q = {q} is not 1 mod {two_n}");
    for g in 2..q {
        let psi = ctx.pow_mod(g, (q - 1) / two_n);
        if ctx.pow_mod(psi, two_n / 2) == q - 1 {
            return psi;
        }
    }
    unreachable!("no primitive root found")
}

impl NttTables {
    pub fn new(basis: Arc<RnsBasis>) -> Self {
        let n = basis.n();
        let log_n = basis.log_n();
        let primes = basis
            .primes()
            .par_iter()
            .map(|ctx| {
                let psi = primitive_root(ctx, 2 * n as u64);
                let psi_inv = ctx.inv_mod(psi);
                let powers = |base: u64| {
                    let mut v = Vec::with_capacity(n);
                    let mut x = 1u64;
                    for _ in 0..n {
                        v.push(x);
                        x = ctx.mul_mod(x, base);
                    }
                    v
                };
                let pw = powers(psi);
                let pw_inv = powers(psi_inv);
                let fwd: Vec<i32> = (0..n).map(|k| ctx.mont_canonical(pw[bit_reverse(k, log_n)])).collect();
                let inv: Vec<i32> = (0..n).map(|k| ctx.mont_canonical(pw_inv[bit_reverse(k, log_n)])).collect();
                let w1 = pw[bit_reverse(1, log_n)];
                let entry_v = ctx.mont_canonical(ctx.mont_canonical(w1) as u64);
                let n_inv = ctx.inv_mod(n as u64);
                let exit_v = ctx.mul_mod(pw_inv[bit_reverse(1, log_n)], n_inv);
                PrimeTables { ctx: *ctx, fwd, inv, entry_v, n_inv, exit_v, psi }
            })
            .collect();
        Self { basis, primes }
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    /// Forward and inverse twiddle tables of basis prime `idx`.
    pub fn twiddles(&self, idx: usize) -> (&[i32], &[i32]) {
        (&self.primes[idx].fwd, &self.primes[idx].inv)
    }

    /// The primitive `2N`-th root used for basis prime `idx`.
    pub fn psi(&self, idx: usize) -> u64 {
        self.primes[idx].psi
    }
}

/// LSB/MSB twiddle components: `lsb[i] = Mont(w^i)`, `msb[i] = Mont(w^(s*i))`.
struct OtPrime {
    fwd_lsb: Vec<i32>,
    fwd_msb: Vec<i32>,
    inv_lsb: Vec<i32>,
    inv_msb: Vec<i32>,
}

struct OtTables {
    lsb_size: usize,
    primes: Vec<OtPrime>,
}

impl OtTables {
    fn new(tables: &NttTables, lsb_size: usize) -> Self {
        let n = tables.basis.n();
        let primes = tables
            .primes
            .par_iter()
            .map(|t| {
                let ctx = &t.ctx;
                let psi_inv = ctx.inv_mod(t.psi);
                let build = |base: u64, count: usize, step: u64| {
                    let b = ctx.pow_mod(base, step);
                    let mut x = 1u64;
                    (0..count)
                        .map(|_| {
                            let m = ctx.mont_canonical(x);
                            x = ctx.mul_mod(x, b);
                            m
                        })
                        .collect::<Vec<_>>()
                };
                OtPrime {
                    fwd_lsb: build(t.psi, lsb_size, 1),
                    fwd_msb: build(t.psi, n / lsb_size, lsb_size as u64),
                    inv_lsb: build(psi_inv, lsb_size, 1),
                    inv_msb: build(psi_inv, n / lsb_size, lsb_size as u64),
                }
            })
            .collect();
        Self { lsb_size, primes }
    }
}

/// One phase worker's position: elements `base + k * lo` for `k < gp`.
#[derive(Clone, Copy)]
struct Phase {
    len: usize,
    prefix: usize,
    lo: usize,
    gp: usize,
}

impl Phase {
    /// First twiddle index for local stride `h` of worker group `high`.
    #[inline]
    fn twiddle_start(&self, h: usize, high: usize) -> usize {
        let t = h * self.lo;
        self.prefix * (self.len / (2 * t)) + high * self.gp / (2 * h)
    }
}

struct PassCtx<'a> {
    ctx: &'a PrimeContext,
    table: &'a [i32],
    ot: Option<(&'a [i32], &'a [i32], usize)>,
    log_n: u32,
}

impl PassCtx<'_> {
    /// Twiddle lists of one worker for local strides `1, 2, .., gp/2`,
    /// concatenated in that order.
    fn phase_twiddles(&self, ph: &Phase, high: usize, out: &mut Vec<i32>) {
        out.clear();
        let q = self.ctx.q_i32();
        match self.ot {
            None => {
                let mut h = 1;
                while h < ph.gp {
                    let s = ph.twiddle_start(h, high);
                    out.extend_from_slice(&self.table[s..s + ph.gp / (2 * h)]);
                    h *= 2;
                }
            }
            Some((lsb, msb, s)) => {
                let start = ph.twiddle_start(1, high);
                for u in 0..ph.gp / 2 {
                    let e = bit_reverse(start + u, self.log_n);
                    out.push(canonical_from_lazy(mont_mul(lsb[e % s], msb[e / s], self.ctx), q));
                }
                // Preceding stages by squaring: w^brev(i) = (w^brev(2i))^2.
                let mut prev = 0;
                let mut count = ph.gp / 2;
                while count > 1 {
                    for u in 0..count / 2 {
                        let w = out[prev + 2 * u];
                        out.push(canonical_from_lazy(mont_mul(w, w, self.ctx), q));
                    }
                    prev += count;
                    count /= 2;
                }
            }
        }
    }
}

#[inline(always)]
fn ct_butterflies(a: &mut [i32], b: &mut [i32], w: i32, ctx: &PrimeContext) {
    let q = ctx.q_i32();
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let u = *x;
        let v = mont_mul(*y, w, ctx);
        *x = reduce_lazy2(u + v, q);
        *y = reduce_lazy2(u - v, q);
    }
}

#[inline(always)]
fn gs_butterflies(a: &mut [i32], b: &mut [i32], w: i32, ctx: &PrimeContext) {
    let q = ctx.q_i32();
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (u, v) = (*x, *y);
        *x = reduce_lazy2(u + v, q);
        *y = mont_mul(u - v, w, ctx);
    }
}

/// First forward stage: `U * R^2` and `V * w * R^2`, both Montgomery-reduced,
/// so the outputs enter Montgomery form.
fn ct_entry_butterflies(a: &mut [i32], b: &mut [i32], r2: i32, ev: i32, ctx: &PrimeContext) {
    let q = ctx.q_i32();
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let u = mont_mul(*x, r2, ctx);
        let v = mont_mul(*y, ev, ctx);
        *x = reduce_lazy2(u + v, q);
        *y = reduce_lazy2(u - v, q);
    }
}

/// Last inverse stage with the merged `N^-1` (and scalar) constants.
fn gs_exit_butterflies(a: &mut [i32], b: &mut [i32], c0: i32, c1: i32, ctx: &PrimeContext) {
    let q = ctx.q_i32();
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (u, v) = (*x, *y);
        *x = canonical_from_lazy(mont_mul(reduce_lazy2(u + v, q), c0, ctx), q);
        *y = canonical_from_lazy(mont_mul(u - v, c1, ctx), q);
    }
}

/// Splits a pass of `len` points into phases of at most `log g` stages.
/// Yields `(lo, gp)`: each phase block spans `lo * gp` points and runs the
/// stages with butterfly spans `lo * gp / 2, .., lo` (forward order).
fn phases(len: usize, g: usize, inverse: bool) -> Vec<(usize, usize)> {
    let log_g = g.trailing_zeros();
    let mut out = Vec::new();
    if inverse {
        let mut lo = 1;
        while lo < len {
            let gp = 1usize << log_g.min((len / lo).trailing_zeros());
            out.push((lo, gp));
            lo *= gp;
        }
    } else {
        let mut t_top = len / 2;
        while t_top >= 1 {
            let gp = 1usize << log_g.min(t_top.trailing_zeros() + 1);
            let lo = 2 * t_top / gp;
            out.push((lo, gp));
            t_top = lo / 2;
        }
    }
    out
}

/// Twiddle list of one stage of one phase block.
#[inline(always)]
fn stage_list<'a>(pc: &'a PassCtx<'_>, ph: &Phase, tw: &'a [i32], h: usize, high: usize, offset: usize) -> &'a [i32] {
    let count = ph.gp / (2 * h);
    if pc.ot.is_some() {
        &tw[offset..offset + count]
    } else {
        let st = ph.twiddle_start(h, high);
        &pc.table[st..st + count]
    }
}

/// Forward pass over one contiguous row.
fn forward_row(v: &mut [i32], prefix: usize, g: usize, pc: &PassCtx<'_>, tw: &mut Vec<i32>) {
    let len = v.len();
    for (lo, gp) in phases(len, g, false) {
        let ph = Phase { len, prefix, lo, gp };
        for (high, block) in v.chunks_exact_mut(lo * gp).enumerate() {
            if pc.ot.is_some() {
                pc.phase_twiddles(&ph, high, tw);
            }
            // Stage lists are stored for strides 1, 2, .., gp/2.
            let mut offset = gp - 1;
            let mut h = gp / 2;
            while h >= 1 {
                offset -= gp / (2 * h);
                let list = stage_list(pc, &ph, tw, h, high, offset);
                let t = h * lo;
                for (chunk, &w) in block.chunks_exact_mut(2 * t).zip(list) {
                    let (a, b) = chunk.split_at_mut(t);
                    ct_butterflies(a, b, w, pc.ctx);
                }
                h /= 2;
            }
        }
    }
}

/// Inverse pass over one contiguous row.
fn inverse_row(v: &mut [i32], prefix: usize, g: usize, pc: &PassCtx<'_>, tw: &mut Vec<i32>) {
    let len = v.len();
    for (lo, gp) in phases(len, g, true) {
        let ph = Phase { len, prefix, lo, gp };
        for (high, block) in v.chunks_exact_mut(lo * gp).enumerate() {
            if pc.ot.is_some() {
                pc.phase_twiddles(&ph, high, tw);
            }
            let mut offset = 0;
            let mut h = 1;
            while h < gp {
                let list = stage_list(pc, &ph, tw, h, high, offset);
                let t = h * lo;
                for (chunk, &w) in block.chunks_exact_mut(2 * t).zip(list) {
                    let (a, b) = chunk.split_at_mut(t);
                    gs_butterflies(a, b, w, pc.ctx);
                }
                offset += gp / (2 * h);
                h *= 2;
            }
        }
    }
}

/// Butterflies between segment lists `a[i]` and `b[i]`.
#[inline(always)]
fn seg_pairs(a: &mut [&mut [i32]], b: &mut [&mut [i32]], mut f: impl FnMut(&mut [i32], &mut [i32])) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        f(x, y);
    }
}

/// Forward column pass over one batch: `segs[x]` is the batch's slice of
/// row `x`. Contains the global first stage.
fn forward_cols(segs: &mut [&mut [i32]], g: usize, pc: &PassCtx<'_>, (r2, ev): (i32, i32)) {
    let len = segs.len();
    for (lo, gp) in phases(len, g, false) {
        let ph = Phase { len, prefix: 1, lo, gp };
        for (high, block) in segs.chunks_exact_mut(lo * gp).enumerate() {
            let mut h = gp / 2;
            while h >= 1 {
                let t = h * lo;
                if t == len / 2 {
                    let (a, b) = block.split_at_mut(t);
                    seg_pairs(a, b, |x, y| ct_entry_butterflies(x, y, r2, ev, pc.ctx));
                } else {
                    let list = stage_list(pc, &ph, &[], h, high, 0);
                    for (chunk, &w) in block.chunks_exact_mut(2 * t).zip(list) {
                        let (a, b) = chunk.split_at_mut(t);
                        seg_pairs(a, b, |x, y| ct_butterflies(x, y, w, pc.ctx));
                    }
                }
                h /= 2;
            }
        }
    }
}

/// Inverse column pass over one batch. Contains the global last stage.
fn inverse_cols(segs: &mut [&mut [i32]], g: usize, pc: &PassCtx<'_>, (c0, c1): (i32, i32)) {
    let len = segs.len();
    for (lo, gp) in phases(len, g, true) {
        let ph = Phase { len, prefix: 1, lo, gp };
        for (high, block) in segs.chunks_exact_mut(lo * gp).enumerate() {
            let mut h = 1;
            while h < gp {
                let t = h * lo;
                if t == len / 2 {
                    let (a, b) = block.split_at_mut(t);
                    seg_pairs(a, b, |x, y| gs_exit_butterflies(x, y, c0, c1, pc.ctx));
                } else {
                    let list = stage_list(pc, &ph, &[], h, high, 0);
                    for (chunk, &w) in block.chunks_exact_mut(2 * t).zip(list) {
                        let (a, b) = chunk.split_at_mut(t);
                        seg_pairs(a, b, |x, y| gs_butterflies(x, y, w, pc.ctx));
                    }
                }
                h *= 2;
            }
        }
    }
}

/// Precomputed transform for one basis under one parameter choice.
#[derive(Clone)]
pub struct NttPlan {
    params: NttParams,
    tables: Arc<NttTables>,
    ot: Option<Arc<OtTables>>,
}

impl std::fmt::Debug for NttPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NttPlan").field("params", &self.params).finish()
    }
}

impl NttPlan {
    pub fn new(basis: Arc<RnsBasis>, params: NttParams) -> Result<Self> {
        params.validate(basis.n())?;
        let tables = Arc::new(NttTables::new(basis));
        Self::with_tables(tables, params)
    }

    /// Plan reusing already built twiddle tables.
    pub fn with_tables(tables: Arc<NttTables>, params: NttParams) -> Result<Self> {
        params.validate(tables.basis.n())?;
        let ot = params.ot.then(|| Arc::new(OtTables::new(&tables, params.lsb_size)));
        Ok(Self { params, tables, ot })
    }

    /// Same tables, different parameters.
    pub fn with_params(&self, params: NttParams) -> Result<Self> {
        Self::with_tables(self.tables.clone(), params)
    }

    pub fn params(&self) -> &NttParams {
        &self.params
    }

    pub fn tables(&self) -> &Arc<NttTables> {
        &self.tables
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.tables.basis
    }

    fn pass_ctx(&self, idx: usize, inverse: bool, row_pass: bool) -> PassCtx<'_> {
        let t = &self.tables.primes[idx];
        let ot = match (&self.ot, row_pass) {
            (Some(o), true) => {
                let p = &o.primes[idx];
                Some(if inverse {
                    (&p.inv_lsb[..], &p.inv_msb[..], o.lsb_size)
                } else {
                    (&p.fwd_lsb[..], &p.fwd_msb[..], o.lsb_size)
                })
            }
            _ => None,
        };
        PassCtx {
            ctx: &t.ctx,
            table: if inverse { &t.inv } else { &t.fwd },
            ot,
            log_n: self.tables.basis.log_n(),
        }
    }

    fn column_pass(&self, limb: &mut [i32], pc: &PassCtx<'_>, inverse: bool, consts: (i32, i32)) {
        let NttParams { n1, n2, g1, b_k1, .. } = self.params;
        let batches = n2 / b_k1;
        let mut per_batch: Vec<Vec<&mut [i32]>> = (0..batches).map(|_| Vec::with_capacity(n1)).collect();
        for (k, seg) in limb.chunks_mut(b_k1).enumerate() {
            per_batch[k % batches].push(seg);
        }
        per_batch.par_iter_mut().for_each(|segs| {
            if inverse {
                inverse_cols(segs, g1, pc, consts);
            } else {
                forward_cols(segs, g1, pc, consts);
            }
        });
    }

    fn row_pass(&self, limb: &mut [i32], pc: &PassCtx<'_>, inverse: bool) {
        let NttParams { n1, n2, g2, .. } = self.params;
        limb.par_chunks_mut(n2).enumerate().for_each_init(Vec::new, |tw, (r, row)| {
            if inverse {
                inverse_row(row, n1 + r, g2, pc, tw);
            } else {
                forward_row(row, n1 + r, g2, pc, tw);
            }
        });
    }

    /// Forward transform of one plain limb of basis prime `idx`, in place.
    /// Output is in Montgomery form and bit-reversed order.
    pub fn forward_limb(&self, limb: &mut [i32], idx: usize) {
        debug_assert_eq!(limb.len(), self.tables.basis.n());
        let t = &self.tables.primes[idx];
        let col = self.pass_ctx(idx, false, false);
        self.column_pass(limb, &col, false, (t.ctx.r2(), t.entry_v));
        let row = self.pass_ctx(idx, false, true);
        self.row_pass(limb, &row, false);
    }

    /// Inverse transform of one Montgomery-form limb, multiplied by the plain
    /// residue `scalar`. Output is plain and canonical.
    pub fn inverse_limb(&self, limb: &mut [i32], idx: usize, scalar: u32) {
        debug_assert_eq!(limb.len(), self.tables.basis.n());
        let t = &self.tables.primes[idx];
        let row = self.pass_ctx(idx, true, true);
        self.row_pass(limb, &row, true);
        let c0 = t.ctx.mul_mod(t.n_inv, scalar as u64) as i32;
        let c1 = t.ctx.mul_mod(t.exit_v, scalar as u64) as i32;
        let col = self.pass_ctx(idx, true, false);
        self.column_pass(limb, &col, true, (c0, c1));
    }

    fn check_rows(&self, p: &Polynomial) -> Result<()> {
        if p.basis().moduli() != self.tables.basis.moduli() {
            return Err(Error::BasisMismatch);
        }
        Ok(())
    }

    /// Coefficient domain (plain) to evaluation domain (Montgomery).
    pub fn forward(&self, p: &mut Polynomial) -> Result<()> {
        self.check_rows(p)?;
        if p.domain() != Domain::Coefficient {
            return Err(Error::DomainMismatch { expected: Domain::Coefficient, found: p.domain() });
        }
        if p.is_mont() {
            return Err(Error::FormMismatch("forward NTT expects plain input"));
        }
        let n = p.n();
        let rows = p.rows().clone();
        p.data_mut()
            .par_chunks_mut(n)
            .zip(rows.indices().par_iter())
            .for_each(|(limb, &idx)| self.forward_limb(limb, idx));
        p.set_domain(Domain::Evaluation);
        p.set_mont(true);
        Ok(())
    }

    /// Evaluation domain (Montgomery) to coefficient domain (plain, canonical).
    pub fn inverse(&self, p: &mut Polynomial) -> Result<()> {
        let ones = vec![1u32; p.num_rows()];
        self.inverse_scaled(p, &ones)
    }

    /// Inverse transform with row `i` additionally multiplied by the plain
    /// residue `scalars[i]`.
    pub fn inverse_scaled(&self, p: &mut Polynomial, scalars: &[u32]) -> Result<()> {
        self.check_rows(p)?;
        if p.domain() != Domain::Evaluation {
            return Err(Error::DomainMismatch { expected: Domain::Evaluation, found: p.domain() });
        }
        if !p.is_mont() {
            return Err(Error::FormMismatch("inverse NTT expects Montgomery-form input"));
        }
        if scalars.len() != p.num_rows() {
            return Err(Error::InvalidInput("one scalar per row required".into()));
        }
        let n = p.n();
        let rows = p.rows().clone();
        p.data_mut()
            .par_chunks_mut(n)
            .zip(rows.indices().par_iter())
            .zip(scalars.par_iter())
            .for_each(|((limb, &idx), &s)| self.inverse_limb(limb, idx, s));
        p.set_domain(Domain::Coefficient);
        p.set_mont(false);
        Ok(())
    }

    /// Twiddle lists (strides `1, 2, .., gp/2` of one phase worker) as the
    /// row pass would use them: generated on the fly if enabled, otherwise
    /// loaded from the tables.
    pub fn row_phase_twiddles(&self, idx: usize, inverse: bool, row: usize, lo: usize, gp: usize, high: usize) -> Vec<Vec<i32>> {
        let pc = self.pass_ctx(idx, inverse, true);
        let ph = Phase { len: self.params.n2, prefix: self.params.n1 + row, lo, gp };
        let mut flat = Vec::new();
        pc.phase_twiddles(&ph, high, &mut flat);
        let mut out = Vec::new();
        let mut offset = 0;
        let mut h = 1;
        while h < gp {
            let count = gp / (2 * h);
            out.push(flat[offset..offset + count].to_vec());
            offset += count;
            h *= 2;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modarith::correct;
    use crate::poly::PrimeSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(n: usize) -> Arc<RnsBasis> {
        Arc::new(RnsBasis::generate(n, 2, 1, 40).unwrap())
    }

    fn random_coeff(b: &Arc<RnsBasis>, rng: &mut impl Rng) -> Polynomial {
        let rows = PrimeSet::prefix(b.len());
        let data: Vec<Vec<u32>> = (0..b.len()).map(|i| (0..b.n()).map(|_| rng.random_range(0..b.modulus(i))).collect()).collect();
        Polynomial::from_rows(b.clone(), rows, &data, Domain::Coefficient, false).unwrap()
    }

    fn naive_dft(coeffs: &[u32], ctx: &PrimeContext, psi: u64) -> Vec<u64> {
        let n = coeffs.len();
        let log_n = n.trailing_zeros();
        let mut out = vec![0u64; n];
        for j in 0..n {
            let root = ctx.pow_mod(psi, 2 * j as u64 + 1);
            let mut acc = 0u64;
            let mut x = 1u64;
            for &c in coeffs {
                acc = (acc + ctx.mul_mod(c as u64, x)) % ctx.q() as u64;
                x = ctx.mul_mod(x, root);
            }
            out[bit_reverse(j, log_n)] = acc;
        }
        out
    }

    #[test]
    fn plan_validation() {
        assert!(NttParams { n1: 128, n2: 512, g1: 16, g2: 8, b_k1: 16, ot: false, lsb_size: 256 }.validate(1 << 16).is_ok());
        assert!(NttParams { n1: 2, n2: 2, g1: 2, g2: 2, b_k1: 2, ot: false, lsb_size: 2 }.validate(4).is_ok());
        let bad = NttParams { n1: 64, n2: 512, g1: 16, g2: 8, b_k1: 16, ot: false, lsb_size: 256 };
        assert!(matches!(bad.validate(1 << 16), Err(Error::InvalidPlan(_))));
        let bad_g = NttParams { n1: 4, n2: 4, g1: 8, g2: 2, b_k1: 2, ot: false, lsb_size: 4 };
        assert!(bad_g.validate(16).is_err());
    }

    #[test]
    fn primitive_root_order() {
        let b = basis(64);
        let t = NttTables::new(b.clone());
        for i in 0..b.len() {
            let ctx = b.prime(i);
            let q = ctx.q() as u64;
            assert_eq!(ctx.pow_mod(t.psi(i), 128), 1);
            assert_eq!(ctx.pow_mod(t.psi(i), 64), q - 1);
        }
    }

    #[test]
    fn forward_matches_bit_reversed_dft() {
        for n in [4usize, 16, 64, 256] {
            let b = basis(n);
            let plan = NttPlan::new(b.clone(), NttParams::default_for(n)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let p = random_coeff(&b, &mut rng);
            let mut f = p.clone();
            plan.forward(&mut f).unwrap();
            let rows = p.to_canonical_rows();
            for (i, row) in rows.iter().enumerate() {
                let ctx = b.prime(i);
                let want = naive_dft(row, ctx, plan.tables().psi(i));
                let r_inv = ctx.inv_mod((1u64 << 32) % ctx.q() as u64);
                for (k, &got) in f.row(i).iter().enumerate() {
                    assert_eq!(ctx.mul_mod(correct(got as i64, ctx.q()) as u64, r_inv), want[k], "n={n} row={i} k={k}");
                }
            }
        }
    }

    #[test]
    fn toy_n4_merged_constants() {
        // N = 4: the only column stage is the merged entry stage, the only row
        // stage uses psi^brev(2) and psi^brev(3).
        let b = basis(4);
        let plan = NttPlan::new(b.clone(), NttParams { n1: 2, n2: 2, g1: 2, g2: 2, b_k1: 2, ot: false, lsb_size: 2 }).unwrap();
        let ctx = b.prime(0);
        let q = ctx.q() as u64;
        let psi = plan.tables().psi(0);
        let (fwd, _) = plan.tables().twiddles(0);
        assert_eq!(fwd[1] as u64, ctx.mont_canonical(ctx.pow_mod(psi, 2) as u64) as u64);
        assert_eq!(fwd[2] as u64, ctx.mont_canonical(psi) as u64);
        assert_eq!(fwd[3] as u64, ctx.mont_canonical(ctx.pow_mod(psi, 3)) as u64);
        let coeffs = [3u32, 1, 4, 1];
        let mut p = Polynomial::from_rows(b.clone(), PrimeSet::prefix(1), &[coeffs.to_vec()], Domain::Coefficient, false).unwrap();
        plan.forward(&mut p).unwrap();
        let want = naive_dft(&coeffs, ctx, psi);
        for k in 0..4 {
            assert_eq!(correct(p.row(0)[k] as i64, ctx.q()) as u64, ctx.mont_canonical(want[k]) as u64 % q);
        }
        plan.inverse(&mut p).unwrap();
        assert_eq!(p.to_canonical_rows()[0], coeffs.to_vec());
    }

    #[test]
    fn roundtrip_is_exact() {
        for n in [16usize, 1024, 1 << 16] {
            let b = Arc::new(RnsBasis::generate(n, 2, 1, 48).unwrap());
            let plan = NttPlan::new(b.clone(), NttParams::default_for(n)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let p = random_coeff(&b, &mut rng);
            let mut f = p.clone();
            plan.forward(&mut f).unwrap();
            assert_eq!(f.domain(), Domain::Evaluation);
            assert!(f.is_mont());
            plan.inverse(&mut f).unwrap();
            assert_eq!(f.data(), p.data());
        }
    }

    #[test]
    fn constant_evaluation_vector_inverts_to_constant() {
        let b = basis(64);
        let plan = NttPlan::new(b.clone(), NttParams::default_for(64)).unwrap();
        let c = 12345u32;
        let rows = PrimeSet::prefix(b.len());
        let data: Vec<Vec<u32>> = (0..b.len()).map(|i| vec![b.prime(i).mont_canonical(c as u64) as u32; 64]).collect();
        let mut p = Polynomial::from_rows(b.clone(), rows, &data, Domain::Evaluation, true).unwrap();
        plan.inverse(&mut p).unwrap();
        for row in p.to_canonical_rows() {
            assert_eq!(row[0], c);
            assert!(row[1..].iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn domain_and_form_errors() {
        let b = basis(16);
        let plan = NttPlan::new(b.clone(), NttParams::default_for(16)).unwrap();
        let mut p = Polynomial::zero(b.clone(), PrimeSet::prefix(1), Domain::Evaluation, true);
        assert!(matches!(plan.forward(&mut p), Err(Error::DomainMismatch { .. })));
        let mut c = Polynomial::zero(b, PrimeSet::prefix(1), Domain::Coefficient, false);
        assert!(matches!(plan.inverse(&mut c), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn scaled_inverse_matches_separate_scaling() {
        let b = basis(256);
        let plan = NttPlan::new(b.clone(), NttParams::default_for(256)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_coeff(&b, &mut rng);
        plan.forward(&mut p).unwrap();
        let scalars: Vec<u32> = (0..b.len()).map(|i| rng.random_range(1..b.modulus(i))).collect();
        let mut fused = p.clone();
        plan.inverse_scaled(&mut fused, &scalars).unwrap();
        let mut plain = p.clone();
        plan.inverse(&mut plain).unwrap();
        for (i, row) in plain.to_canonical_rows().iter().enumerate() {
            let ctx = b.prime(i);
            let want: Vec<u32> = row.iter().map(|&x| ctx.mul_mod(x as u64, scalars[i] as u64) as u32).collect();
            assert_eq!(fused.to_canonical_rows()[i], want);
        }
    }

    #[test]
    fn otf_twiddles_match_tables() {
        let n = 1 << 12;
        let b = basis(n);
        let base = NttParams { n1: 64, n2: 64, g1: 8, g2: 8, b_k1: 16, ot: false, lsb_size: 64 };
        let table_plan = NttPlan::new(b.clone(), base).unwrap();
        for lsb_size in [1, 8, 64, n] {
            let ot_plan = table_plan.with_params(NttParams { ot: true, lsb_size, ..base }).unwrap();
            for idx in 0..b.len() {
                for inverse in [false, true] {
                    for row in [0, 5, 63] {
                        // Phases of the 64-point row pass with g = 8: lo = 1 and lo = 8.
                        for lo in [1, 8] {
                            for high in 0..64 / (8 * lo) {
                                assert_eq!(
                                    ot_plan.row_phase_twiddles(idx, inverse, row, lo, 8, high),
                                    table_plan.row_phase_twiddles(idx, inverse, row, lo, 8, high)
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn negacyclic_convolution() {
        for n in [16usize, 64, 256] {
            let b = basis(n);
            let plan = NttPlan::new(b.clone(), NttParams::default_for(n)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64 + 1);
            let x = random_coeff(&b, &mut rng);
            let y = random_coeff(&b, &mut rng);
            let (mut fx, mut fy) = (x.clone(), y.clone());
            plan.forward(&mut fx).unwrap();
            plan.forward(&mut fy).unwrap();
            let mut z = fx.ew_mul(&fy).unwrap();
            plan.inverse(&mut z).unwrap();
            let (xr, yr, zr) = (x.to_canonical_rows(), y.to_canonical_rows(), z.to_canonical_rows());
            for i in 0..b.len() {
                let q = b.modulus(i) as u64;
                let mut want = vec![0u64; n];
                for a in 0..n {
                    for c in 0..n {
                        let prod = xr[i][a] as u64 * yr[i][c] as u64 % q;
                        let k = a + c;
                        if k < n {
                            want[k] = (want[k] + prod) % q;
                        } else {
                            want[k - n] = (want[k - n] + q - prod) % q;
                        }
                    }
                }
                assert_eq!(zr[i].iter().map(|&v| v as u64).collect::<Vec<_>>(), want);
            }
        }
    }

    fn params_strategy(log_n: u32) -> impl Strategy<Value = NttParams> {
        (1..log_n).prop_flat_map(move |l1| {
            let l2 = log_n - l1;
            (1..=l1, 1..=l2, 0..=l2, any::<bool>(), 0..=log_n).prop_map(move |(lg1, lg2, lb, ot, ls)| NttParams {
                n1: 1 << l1,
                n2: 1 << l2,
                g1: 1 << lg1,
                g2: 1 << lg2,
                b_k1: 1 << lb,
                ot,
                lsb_size: 1 << ls,
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_plan_matches_default(params in params_strategy(10), seed in any::<u64>()) {
            let b = basis(1024);
            let reference = NttPlan::new(b.clone(), NttParams::default_for(1024)).unwrap();
            let plan = reference.with_params(params).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_coeff(&b, &mut rng);
            let (mut a, mut c) = (p.clone(), p.clone());
            reference.forward(&mut a).unwrap();
            plan.forward(&mut c).unwrap();
            prop_assert_eq!(a.data(), c.data());
            reference.inverse(&mut a).unwrap();
            plan.inverse(&mut c).unwrap();
            prop_assert_eq!(a.data(), c.data());
            prop_assert_eq!(c.data(), p.data());
        }

        #[test]
        fn linearity(seed in any::<u64>()) {
            let b = basis(256);
            let plan = NttPlan::new(b.clone(), NttParams::default_for(256)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_coeff(&b, &mut rng);
            let y = random_coeff(&b, &mut rng);
            let mut s = x.ew_add(&y).unwrap();
            let (mut fx, mut fy) = (x.clone(), y.clone());
            plan.forward(&mut s).unwrap();
            plan.forward(&mut fx).unwrap();
            plan.forward(&mut fy).unwrap();
            prop_assert_eq!(s.to_canonical_rows(), fx.ew_add(&fy).unwrap().to_canonical_rows());
        }
    }
}

//! Polynomials over an RNS basis, stored as a contiguous row-major
//! `rows x N` matrix of signed 32-bit residues.
//!
//! Evaluation-domain rows hold NTT outputs in bit-reversed order and are
//! kept in Montgomery form. Coefficient-domain rows are plain.

mod fuse;
mod pool;

use std::sync::Arc;

use rayon::prelude::*;

pub use fuse::{execute_sequential, FusedPipeline, Stage};
pub use pool::{BufferPool, PoolStats};

use crate::error::{Error, Result};
use crate::modarith::{canonical_from_lazy, correct, mont_mul, reduce_lazy2, PrimeContext};
use crate::rns::{prime_set_hash, ByteReader, RnsBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Coefficient,
    Evaluation,
}

/// Ordered list of basis indices that a polynomial's rows live on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PrimeSet(Arc<[usize]>);

impl PrimeSet {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices.into())
    }

    /// Basis indices `0..len`.
    pub fn prefix(len: usize) -> Self {
        Self::new((0..len).collect())
    }

    /// Main primes `0..level` followed by every auxiliary prime.
    pub fn extended(basis: &RnsBasis, level: usize) -> Self {
        Self::new((0..level).chain(basis.aux_indices()).collect())
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Row position of basis index `idx`.
    pub fn position(&self, idx: usize) -> Option<usize> {
        self.0.iter().position(|&i| i == idx)
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.contains(&idx)
    }

    pub fn is_subset_of(&self, other: &PrimeSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    /// Indices of `self` not present in `other`, in order.
    pub fn difference(&self, other: &PrimeSet) -> PrimeSet {
        Self::new(self.0.iter().copied().filter(|&i| !other.contains(i)).collect())
    }

    pub fn moduli(&self, basis: &RnsBasis) -> Vec<u32> {
        self.0.iter().map(|&i| basis.modulus(i)).collect()
    }
}

impl From<std::ops::Range<usize>> for PrimeSet {
    fn from(r: std::ops::Range<usize>) -> Self {
        Self::new(r.collect())
    }
}

const MAGIC: &[u8; 4] = b"RPLY";
const VERSION: u16 = 1;

/// RNS polynomial. Residues are lazy (in `(-q, q)`) unless canonicalized.
pub struct Polynomial {
    basis: Arc<RnsBasis>,
    rows: PrimeSet,
    data: Vec<i32>,
    domain: Domain,
    mont: bool,
    pool: Option<Arc<BufferPool>>,
}

impl std::fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Polynomial")
            .field("n", &self.n())
            .field("rows", &self.rows.indices())
            .field("domain", &self.domain)
            .field("mont", &self.mont)
            .finish()
    }
}

impl Clone for Polynomial {
    fn clone(&self) -> Self {
        let mut data = match &self.pool {
            Some(pool) => pool.acquire(self.rows.len()),
            None => vec![0; self.data.len()],
        };
        data.copy_from_slice(&self.data);
        Self {
            basis: self.basis.clone(),
            rows: self.rows.clone(),
            data,
            domain: self.domain,
            mont: self.mont,
            pool: self.pool.clone(),
        }
    }
}

impl Drop for Polynomial {
    fn drop(&mut self) {
        if let Some(pool) = self.pool.take() {
            pool.release(std::mem::take(&mut self.data));
        }
    }
}

impl PartialEq for Polynomial {
    /// Equality of the represented residues (representatives may differ).
    fn eq(&self, other: &Self) -> bool {
        self.basis.moduli() == other.basis.moduli()
            && self.rows == other.rows
            && self.domain == other.domain
            && self.mont == other.mont
            && self.to_canonical_rows() == other.to_canonical_rows()
    }
}

impl Polynomial {
    pub fn zero(basis: Arc<RnsBasis>, rows: PrimeSet, domain: Domain, mont: bool) -> Self {
        Self::zero_in(basis, rows, domain, mont, None)
    }

    /// Zero polynomial whose storage comes from (and returns to) `pool`.
    pub fn zero_in(
        basis: Arc<RnsBasis>,
        rows: PrimeSet,
        domain: Domain,
        mont: bool,
        pool: Option<&Arc<BufferPool>>,
    ) -> Self {
        let n = basis.n();
        let data = match pool {
            Some(p) => {
                debug_assert_eq!(p.n(), n);
                p.acquire(rows.len())
            }
            None => vec![0; rows.len() * n],
        };
        Self { basis, rows, data, domain, mont, pool: pool.cloned() }
    }

    /// Polynomial with no rows.
    pub fn empty(basis: Arc<RnsBasis>, domain: Domain, mont: bool) -> Self {
        Self::zero(basis, PrimeSet::empty(), domain, mont)
    }

    /// Coefficient-domain polynomial from signed integer coefficients.
    pub fn from_signed(basis: Arc<RnsBasis>, rows: PrimeSet, coeffs: &[i64]) -> Result<Self> {
        let n = basis.n();
        if coeffs.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} coefficients, got {}", coeffs.len())));
        }
        let mut p = Self::zero(basis, rows, Domain::Coefficient, false);
        p.fill_signed(coeffs);
        Ok(p)
    }

    pub(crate) fn fill_signed(&mut self, coeffs: &[i64]) {
        let n = self.n();
        let basis = self.basis.clone();
        let rows = self.rows.clone();
        self.data.par_chunks_mut(n).zip(rows.indices().par_iter()).for_each(|(row, &b)| {
            let q = basis.modulus(b);
            for (dst, &c) in row.iter_mut().zip(coeffs) {
                *dst = correct(c, q) as i32;
            }
        });
    }

    /// Polynomial from canonical residue rows.
    pub fn from_rows(
        basis: Arc<RnsBasis>,
        rows: PrimeSet,
        data: &[Vec<u32>],
        domain: Domain,
        mont: bool,
    ) -> Result<Self> {
        let n = basis.n();
        if data.len() != rows.len() || data.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("row data does not match the prime set".into()));
        }
        let mut p = Self::zero(basis, rows, domain, mont);
        for (i, src) in data.iter().enumerate() {
            let q = p.basis.modulus(p.rows.indices()[i]);
            if src.iter().any(|&x| x >= q) {
                return Err(Error::InvalidInput(format!("residue not canonical for q = {q}")));
            }
            for (dst, &x) in p.row_mut(i).iter_mut().zip(src) {
                *dst = x as i32;
            }
        }
        Ok(p)
    }

    /// Allocates a zero polynomial with the same basis and pool.
    pub fn zero_like(&self, rows: PrimeSet, domain: Domain, mont: bool) -> Self {
        Self::zero_in(self.basis.clone(), rows, domain, mont, self.pool.as_ref())
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    pub fn rows(&self) -> &PrimeSet {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_mont(&self) -> bool {
        self.mont
    }

    pub fn pool(&self) -> Option<&Arc<BufferPool>> {
        self.pool.as_ref()
    }

    pub(crate) fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    pub(crate) fn set_mont(&mut self, mont: bool) {
        self.mont = mont;
    }

    /// Prime context of row `i`.
    pub fn row_prime(&self, i: usize) -> &PrimeContext {
        self.basis.prime(self.rows.indices()[i])
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[i32] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [i32] {
        let n = self.n();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Row holding basis index `idx`, if present.
    pub fn row_by_index(&self, idx: usize) -> Option<&[i32]> {
        self.rows.position(idx).map(|i| self.row(i))
    }

    /// Borrowed rows for each index in `rows`, which must be a subset of
    /// this polynomial's prime set.
    pub fn view(&self, rows: &PrimeSet) -> Result<Vec<&[i32]>> {
        rows.indices().iter().map(|&b| self.row_by_index(b).ok_or(Error::BasisMismatch)).collect()
    }

    /// Copy of the rows listed in `rows`.
    pub fn select(&self, rows: &PrimeSet) -> Result<Polynomial> {
        let mut out = self.zero_like(rows.clone(), self.domain, self.mont);
        let n = self.n();
        for (i, src) in self.view(rows)?.into_iter().enumerate() {
            out.data[i * n..(i + 1) * n].copy_from_slice(src);
        }
        Ok(out)
    }

    /// Overwrites rows of `self` with the matching rows of `src`.
    pub fn copy_rows_from(&mut self, src: &Polynomial, rows: &PrimeSet) -> Result<()> {
        let n = self.n();
        for &b in rows.indices() {
            let dst = self.rows.position(b).ok_or(Error::BasisMismatch)?;
            let s = src.row_by_index(b).ok_or(Error::BasisMismatch)?;
            self.data[dst * n..(dst + 1) * n].copy_from_slice(s);
        }
        Ok(())
    }

    /// Maps every residue into `[0, q)`.
    pub fn canonicalize(&mut self) {
        let n = self.n();
        let basis = self.basis.clone();
        let rows = self.rows.clone();
        self.data.par_chunks_mut(n).zip(rows.indices().par_iter()).for_each(|(row, &b)| {
            let q = basis.modulus(b) as i32;
            for x in row.iter_mut() {
                *x = canonical_from_lazy(*x, q);
            }
        });
    }

    pub fn to_canonical_rows(&self) -> Vec<Vec<u32>> {
        (0..self.num_rows())
            .map(|i| {
                let q = self.row_prime(i).q_i32();
                self.row(i).iter().map(|&x| canonical_from_lazy(x, q) as u32).collect()
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.to_canonical_rows().iter().all(|r| r.iter().all(|&x| x == 0))
    }

    fn check_compatible(&self, other: &Polynomial) -> Result<()> {
        if !Arc::ptr_eq(&self.basis, &other.basis) && *self.basis != *other.basis {
            return Err(Error::BasisMismatch);
        }
        if self.rows != other.rows {
            return Err(Error::BasisMismatch);
        }
        if self.domain != other.domain {
            return Err(Error::DomainMismatch { expected: self.domain, found: other.domain });
        }
        Ok(())
    }

    /// Applies `f(row_self, row_other, prime)` to each row pair in parallel.
    fn zip_rows(&mut self, other: &Polynomial, f: impl Fn(&mut [i32], &[i32], &PrimeContext) + Sync + Send) {
        let n = self.n();
        let basis = self.basis.clone();
        let rows = self.rows.clone();
        self.data
            .par_chunks_mut(n)
            .zip(other.data.par_chunks(n))
            .zip(rows.indices().par_iter())
            .for_each(|((a, b), &idx)| f(a, b, basis.prime(idx)));
    }

    fn map_rows(&mut self, f: impl Fn(usize, &mut [i32], &PrimeContext) + Sync + Send) {
        let n = self.n();
        let basis = self.basis.clone();
        let rows = self.rows.clone();
        self.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, a)| f(i, a, basis.prime(rows.indices()[i])));
    }

    pub fn add_assign(&mut self, other: &Polynomial) -> Result<()> {
        self.check_compatible(other)?;
        if self.mont != other.mont {
            return Err(Error::FormMismatch("addition requires equal Montgomery flags"));
        }
        self.zip_rows(other, |a, b, ctx| {
            let q = ctx.q_i32();
            for (x, &y) in a.iter_mut().zip(b) {
                *x = reduce_lazy2(*x + y, q);
            }
        });
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Polynomial) -> Result<()> {
        self.check_compatible(other)?;
        if self.mont != other.mont {
            return Err(Error::FormMismatch("subtraction requires equal Montgomery flags"));
        }
        self.zip_rows(other, |a, b, ctx| {
            let q = ctx.q_i32();
            for (x, &y) in a.iter_mut().zip(b) {
                *x = reduce_lazy2(*x - y, q);
            }
        });
        Ok(())
    }

    pub fn neg_assign(&mut self) {
        self.map_rows(|_, a, _| a.iter_mut().for_each(|x| *x = -*x));
    }

    /// Element-wise product. At least one operand must be in Montgomery
    /// form; the result takes the form of the other operand.
    pub fn mul_assign(&mut self, other: &Polynomial) -> Result<()> {
        self.check_compatible(other)?;
        let mont = product_form(self.mont, other.mont)?;
        self.zip_rows(other, |a, b, ctx| {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = mont_mul(*x, y, ctx);
            }
        });
        self.mont = mont;
        Ok(())
    }

    /// Multiplies row `i` by `consts[i]`, a Montgomery-form constant.
    pub fn mul_const_assign(&mut self, consts: &[i32]) -> Result<()> {
        if consts.len() != self.num_rows() {
            return Err(Error::InvalidInput("one constant per row required".into()));
        }
        self.map_rows(|i, a, ctx| {
            let c = consts[i];
            a.iter_mut().for_each(|x| *x = mont_mul(*x, c, ctx));
        });
        Ok(())
    }

    /// Adds `consts[i]` (in this polynomial's form) to every element of row `i`.
    pub fn add_const_assign(&mut self, consts: &[i32]) -> Result<()> {
        if consts.len() != self.num_rows() {
            return Err(Error::InvalidInput("one constant per row required".into()));
        }
        self.map_rows(|i, a, ctx| {
            let q = ctx.q_i32();
            let c = consts[i];
            a.iter_mut().for_each(|x| *x = reduce_lazy2(*x + c, q));
        });
        Ok(())
    }

    pub fn ew_add(&self, other: &Polynomial) -> Result<Polynomial> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn ew_sub(&self, other: &Polynomial) -> Result<Polynomial> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    pub fn ew_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        let mut out = self.clone();
        out.mul_assign(other)?;
        Ok(out)
    }

    pub fn ew_mul_const(&self, consts: &[i32]) -> Result<Polynomial> {
        let mut out = self.clone();
        out.mul_const_assign(consts)?;
        Ok(out)
    }

    pub fn ew_neg(&self) -> Polynomial {
        let mut out = self.clone();
        out.neg_assign();
        out
    }

    /// Header (N, rows, domain, form, prime-set hash) followed by row
    /// indices and canonical little-endian residues.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * (self.num_rows() + self.data.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_rows() as u32).to_le_bytes());
        out.push(matches!(self.domain, Domain::Evaluation) as u8);
        out.push(self.mont as u8);
        out.extend_from_slice(&prime_set_hash(&self.rows.moduli(&self.basis)).to_le_bytes());
        for &b in self.rows.indices() {
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for row in self.to_canonical_rows() {
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let p = Self::read_from(basis, &mut r)?;
        r.finish()?;
        Ok(p)
    }

    pub(crate) fn read_from(basis: Arc<RnsBasis>, r: &mut ByteReader<'_>) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(Error::Serialization("bad polynomial magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Serialization(format!("unsupported polynomial version {version}")));
        }
        let n = r.u32()? as usize;
        if n != basis.n() {
            return Err(Error::Serialization(format!("ring degree {n} does not match basis")));
        }
        let num_rows = r.u32()? as usize;
        let domain = if r.u8()? == 1 { Domain::Evaluation } else { Domain::Coefficient };
        let mont = r.u8()? == 1;
        let hash = r.u64()?;
        let mut indices = Vec::with_capacity(num_rows);
        for _ in 0..num_rows {
            let b = r.u32()? as usize;
            if b >= basis.len() {
                return Err(Error::Serialization(format!("row index {b} outside basis")));
            }
            indices.push(b);
        }
        let rows = PrimeSet::new(indices);
        if prime_set_hash(&rows.moduli(&basis)) != hash {
            return Err(Error::Serialization("prime-set hash mismatch".into()));
        }
        let mut data = Vec::with_capacity(num_rows);
        for _ in 0..num_rows {
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                row.push(r.u32()?);
            }
            data.push(row);
        }
        Self::from_rows(basis, rows, &data, domain, mont).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Montgomery flag of a product with operand flags `a` and `b`.
pub(crate) fn product_form(a: bool, b: bool) -> Result<bool> {
    match (a, b) {
        (true, true) => Ok(true),
        (false, true) => Ok(false),
        (true, false) => Ok(false),
        (false, false) => Err(Error::FormMismatch("a product needs one Montgomery-form operand")),
    }
}

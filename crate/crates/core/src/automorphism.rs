//! Galois automorphisms `X -> X^g` as column permutations.
//!
//! Evaluation-domain rows are stored in bit-reversed order, so natural index
//! `i` sits at position `brev(i)`. Rotation by `r` slots uses `g = 5^r mod 2N`
//! and moves natural column `i` to `((2i+1) * g^-1 mod 2N - 1) / 2`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ntt::bit_reverse;
use crate::poly::{Domain, Polynomial, Stage};

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

/// `5^r mod 2N`. Negative `r` rotates right; `5` has order `N/2`.
pub fn galois_element(r: i64, n: usize) -> u64 {
    let order = (n / 2) as i64;
    pow_mod(5, r.rem_euclid(order) as u64, 2 * n as u64)
}

fn inverse_mod_2n(g: u64, n: usize) -> u64 {
    // The unit group of Z_2N has exponent dividing N/2 (for N >= 4).
    pow_mod(g, (n / 2 - 1) as u64, 2 * n as u64)
}

/// Natural-order image `((2i+1) * g_inv mod 2N - 1) / 2`.
fn natural_image(i: usize, g_inv: u64, n: usize) -> usize {
    let two_n = 2 * n as u64;
    ((((2 * i as u64 + 1) * g_inv) % two_n - 1) / 2) as usize
}

/// Destination of bit-reversed storage position `i` under rotation `r`.
pub fn map_index(i: usize, r: i64, n: usize) -> usize {
    let bits = n.trailing_zeros();
    let g_inv = inverse_mod_2n(galois_element(r, n), n);
    bit_reverse(natural_image(bit_reverse(i, bits), g_inv, n), bits)
}

/// Precomputed permutation for one Galois element.
#[derive(Clone, Debug)]
pub struct AutomorphismMap {
    n: usize,
    r: Option<i64>,
    galois: u64,
    galois_inv: u64,
    /// `dest[i]`: where storage position `i` moves.
    dest: Vec<u32>,
    /// `src[k]`: which storage position lands at `k`.
    src: Arc<[usize]>,
}

impl AutomorphismMap {
    /// Map for rotation by `r` slots.
    pub fn rotation(r: i64, n: usize) -> Result<Self> {
        let mut m = Self::from_galois(galois_element(r, n), n)?;
        m.r = Some(r);
        Ok(m)
    }

    /// Complex conjugation, `g = 2N - 1`.
    pub fn conjugation(n: usize) -> Result<Self> {
        Self::from_galois(2 * n as u64 - 1, n)
    }

    pub fn from_galois(galois: u64, n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidDegree(n));
        }
        if galois % 2 == 0 || galois >= 2 * n as u64 {
            return Err(Error::InvalidInput(format!("{galois} is not a unit modulo {}", 2 * n)));
        }
        let bits = n.trailing_zeros();
        let galois_inv = inverse_mod_2n(galois, n);
        let dest: Vec<u32> = (0..n)
            .into_par_iter()
            .map(|i| bit_reverse(natural_image(bit_reverse(i, bits), galois_inv, n), bits) as u32)
            .collect();
        let mut src = vec![0usize; n];
        for (i, &d) in dest.iter().enumerate() {
            src[d as usize] = i;
        }
        Ok(Self { n, r: None, galois, galois_inv, dest, src: src.into() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Rotation amount, if built from one.
    pub fn rotation_amount(&self) -> Option<i64> {
        self.r
    }

    pub fn galois(&self) -> u64 {
        self.galois
    }

    pub fn galois_inv(&self) -> u64 {
        self.galois_inv
    }

    pub fn dest(&self, i: usize) -> usize {
        self.dest[i] as usize
    }

    /// Source permutation, `out[k] = in[src[k]]`.
    pub fn sources(&self) -> &Arc<[usize]> {
        &self.src
    }

    /// Gather stage for the sequential pipeline executor.
    pub fn gather_stage(&self) -> Stage {
        Stage::Gather(self.src.clone())
    }

    fn check(&self, p: &Polynomial, domain: Domain) -> Result<()> {
        if p.n() != self.n {
            return Err(Error::InvalidDegree(p.n()));
        }
        if p.domain() != domain {
            return Err(Error::DomainMismatch { expected: domain, found: p.domain() });
        }
        Ok(())
    }

    /// Out-of-place permutation of an evaluation-domain polynomial.
    pub fn apply(&self, p: &Polynomial) -> Result<Polynomial> {
        self.check(p, Domain::Evaluation)?;
        let mut out = p.zero_like(p.rows().clone(), Domain::Evaluation, p.is_mont());
        self.apply_into(p, &mut out)?;
        Ok(out)
    }

    /// Writes the permuted `p` into `out` (same rows).
    pub fn apply_into(&self, p: &Polynomial, out: &mut Polynomial) -> Result<()> {
        self.check(p, Domain::Evaluation)?;
        if out.rows() != p.rows() {
            return Err(Error::BasisMismatch);
        }
        let n = self.n;
        let src = &self.src;
        out.data_mut().par_chunks_mut(n).zip(p.data().par_chunks(n)).for_each(|(dst, row)| {
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d = row[s];
            }
        });
        Ok(())
    }

    /// In-place permutation by walking cycles.
    pub fn apply_in_place(&self, p: &mut Polynomial) -> Result<()> {
        self.check(p, Domain::Evaluation)?;
        let n = self.n;
        let dest = &self.dest;
        p.data_mut().par_chunks_mut(n).for_each(|row| {
            let mut seen = vec![false; n];
            for start in 0..n {
                if seen[start] {
                    continue;
                }
                let mut carry = row[start];
                let mut i = start;
                loop {
                    seen[i] = true;
                    let d = dest[i] as usize;
                    if d == start {
                        row[d] = carry;
                        break;
                    }
                    std::mem::swap(&mut row[d], &mut carry);
                    i = d;
                }
            }
        });
        Ok(())
    }

    /// `a(X) -> a(X^g)` on a coefficient-domain polynomial: coefficient `i`
    /// moves to `i*g mod 2N`, negated when that lands in `[N, 2N)`.
    pub fn apply_coefficient(&self, p: &Polynomial) -> Result<Polynomial> {
        self.check(p, Domain::Coefficient)?;
        let n = self.n;
        let two_n = 2 * n as u64;
        let g = self.galois;
        let mut out = p.zero_like(p.rows().clone(), Domain::Coefficient, p.is_mont());
        out.data_mut().par_chunks_mut(n).zip(p.data().par_chunks(n)).for_each(|(dst, row)| {
            for (i, &x) in row.iter().enumerate() {
                let k = (i as u64 * g % two_n) as usize;
                if k < n {
                    dst[k] = x;
                } else {
                    dst[k - n] = -x;
                }
            }
        });
        Ok(out)
    }
}

/// Maps cached per Galois element.
#[derive(Debug, Default)]
pub struct AutomorphismCache {
    maps: Mutex<HashMap<(usize, u64), Arc<AutomorphismMap>>>,
}

impl AutomorphismCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rotation(&self, r: i64, n: usize) -> Result<Arc<AutomorphismMap>> {
        let g = galois_element(r, n);
        let key = (n, g);
        if let Some(m) = self.maps.lock().expect("map cache").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(AutomorphismMap::rotation(r, n)?);
        self.maps.lock().expect("map cache").insert(key, m.clone());
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.maps.lock().expect("map cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

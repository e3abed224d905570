use std::f64::consts::PI;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use super::ciphertext::{log2_scale, scale_f64, scale_pow2, Plaintext, Scale};
use super::context::CkksContext;
use crate::error::{Error, Result};
use crate::poly::{Domain, Polynomial};

/// Headroom above the scale when reconstructing decrypted coefficients.
const DECODE_MARGIN_BITS: f64 = 40.0;

/// Canonical-embedding encoder for `N/2` complex slots.
///
/// Slot `j` holds the evaluation at `zeta^(5^j)`, `zeta = exp(2 pi i / 2N)`,
/// so the automorphism `X -> X^(5^r)` rotates slots left by `r`.
#[derive(Debug)]
pub struct Encoder {
    ctx: Arc<CkksContext>,
    /// `exp(2 pi i k / 2N)` for `k = 0..=2N`.
    ksi_pows: Vec<Complex64>,
    /// `5^j mod 2N`.
    rot_group: Vec<usize>,
}

impl Encoder {
    pub fn new(ctx: Arc<CkksContext>) -> Self {
        let n = ctx.n();
        let m = 2 * n;
        let ksi_pows = (0..=m)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / m as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let mut rot_group = Vec::with_capacity(n / 2);
        let mut g = 1usize;
        for _ in 0..n / 2 {
            rot_group.push(g);
            g = g * 5 % m;
        }
        Self { ctx, ksi_pows, rot_group }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    fn bit_reverse_in_place(vals: &mut [Complex64]) {
        let bits = vals.len().trailing_zeros();
        if bits == 0 {
            return;
        }
        for i in 0..vals.len() {
            let j = crate::ntt::bit_reverse(i, bits);
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// Coefficient-to-slot evaluation (in place, length `N/2`).
    pub fn fft_special(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.ctx.n();
        Self::bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len / 2;
            let lenq = len * 4;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * (m / lenq);
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi_pows[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len *= 2;
        }
    }

    /// Inverse of [`Self::fft_special`].
    pub fn fft_special_inv(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.ctx.n();
        let mut len = size;
        while len >= 2 {
            let lenh = len / 2;
            let lenq = len * 4;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - self.rot_group[j] % lenq) * (m / lenq);
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi_pows[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len /= 2;
        }
        Self::bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        vals.iter_mut().for_each(|v| *v *= inv);
    }

    /// Encodes at `2^delta_bits` over the main primes of `level`.
    pub fn encode(&self, u: &[Complex64], level: usize) -> Result<Plaintext> {
        self.encode_with_scale(u, level, &scale_pow2(self.ctx.params().delta_bits), false)
    }

    /// Encodes at an explicit scale; `extended` also fills the auxiliary rows.
    pub fn encode_with_scale(&self, u: &[Complex64], level: usize, scale: &Scale, extended: bool) -> Result<Plaintext> {
        self.ctx.check_level(level)?;
        let slots = self.ctx.slots();
        if u.len() > slots {
            return Err(Error::InvalidInput(format!("{} values exceed {slots} slots", u.len())));
        }
        let mut vals = vec![Complex64::new(0.0, 0.0); slots];
        vals[..u.len()].copy_from_slice(u);
        self.fft_special_inv(&mut vals);
        let s = scale_f64(scale);
        let n = self.ctx.n();
        let mut coeffs = vec![0i128; n];
        let mut max_abs = 0f64;
        for (i, v) in vals.iter().enumerate() {
            let (re, im) = ((v.re * s).round(), (v.im * s).round());
            max_abs = max_abs.max(re.abs()).max(im.abs());
            coeffs[i] = re as i128;
            coeffs[i + slots] = im as i128;
        }
        let q_bits = self.ctx.basis().product(self.ctx.q_rows(level).indices()).bits() as f64;
        if !max_abs.is_finite() || max_abs.log2() + 2.0 >= q_bits.min(126.0) {
            return Err(Error::ScaleMismatch(format!(
                "scale 2^{:.1} too large for level {level}",
                log2_scale(scale)
            )));
        }
        let rows = if extended { self.ctx.ext_rows(level) } else { self.ctx.q_rows(level) };
        let mut poly = self.ctx.zero(rows.clone(), Domain::Coefficient, false);
        let basis = self.ctx.basis().clone();
        poly.data_mut().par_chunks_mut(n).zip(rows.indices().par_iter()).for_each(|(row, &b)| {
            let q = basis.modulus(b) as i128;
            for (d, &c) in row.iter_mut().zip(&coeffs) {
                *d = c.rem_euclid(q) as i32;
            }
        });
        self.ctx.ntt(&mut poly)?;
        Ok(Plaintext { poly, scale: scale.clone(), level })
    }

    /// Decodes the first `N/2` slots.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<Complex64>> {
        let rows = self.ctx.q_rows(pt.level);
        let mut poly = pt.poly.select(&rows)?;
        if poly.domain() == Domain::Evaluation {
            self.ctx.intt(&mut poly)?;
        }
        let bits = log2_scale(&pt.scale) + DECODE_MARGIN_BITS;
        let coeffs = centered_coefficients(&poly, bits);
        let s = scale_f64(&pt.scale);
        let slots = self.ctx.slots();
        let mut vals: Vec<Complex64> = (0..slots).map(|i| Complex64::new(coeffs[i] / s, coeffs[i + slots] / s)).collect();
        self.fft_special(&mut vals);
        Ok(vals)
    }
}

/// Signed integer values of a coefficient-domain polynomial as floats,
/// reconstructed from the fewest leading rows whose product exceeds
/// `2^bits` (or from all rows).
pub fn centered_coefficients(p: &Polynomial, bits: f64) -> Vec<f64> {
    let moduli = p.rows().moduli(p.basis());
    let mut used = 0;
    let mut prod_bits = 0f64;
    while used < moduli.len() && prod_bits < bits + 1.0 {
        prod_bits += (moduli[used] as f64).log2();
        used += 1;
    }
    let moduli = &moduli[..used];
    let rows: Vec<Vec<u32>> = (0..used)
        .map(|r| {
            let q = moduli[r] as i32;
            p.row(r).iter().map(|&x| crate::modarith::canonical_from_lazy(x, q) as u32).collect()
        })
        .collect();
    // Garner constants: (q_0 ... q_{k-1})^-1 mod q_k.
    let mut inv_prefix = Vec::with_capacity(used);
    for (k, &q) in moduli.iter().enumerate() {
        let ctx = crate::modarith::PrimeContext::new(q);
        let prefix = moduli[..k].iter().fold(1u64, |acc, &m| ctx.mul_mod(acc, m as u64 % q as u64));
        inv_prefix.push(ctx.inv_mod(prefix));
    }
    let n = p.n();
    if prod_bits < 126.0 {
        (0..n).into_par_iter().map(|k| garner_i128(&rows, moduli, &inv_prefix, k)).collect()
    } else {
        (0..n).into_par_iter().map(|k| garner_big(&rows, moduli, &inv_prefix, k)).collect()
    }
}

fn garner_i128(rows: &[Vec<u32>], moduli: &[u32], inv_prefix: &[u64], k: usize) -> f64 {
    let mut x: u128 = 0;
    let mut m: u128 = 1;
    for ((row, &q), &inv) in rows.iter().zip(moduli).zip(inv_prefix) {
        let q = q as u64;
        let xm = (x % q as u128) as u64;
        let t = (row[k] as u64 + q - xm) % q * inv % q;
        x += m * t as u128;
        m *= q as u128;
    }
    if x > m / 2 {
        -((m - x) as f64)
    } else {
        x as f64
    }
}

fn garner_big(rows: &[Vec<u32>], moduli: &[u32], inv_prefix: &[u64], k: usize) -> f64 {
    let mut x = BigUint::default();
    let mut m = BigUint::from(1u32);
    for ((row, &q), &inv) in rows.iter().zip(moduli).zip(inv_prefix) {
        let q64 = q as u64;
        let xm = (&x % q).to_u64().unwrap_or(0);
        let t = (row[k] as u64 + q64 - xm) % q64 * inv % q64;
        x += &m * t;
        m *= q;
    }
    let half = &m >> 1usize;
    let v = if x > half { BigInt::from(x) - BigInt::from(m) } else { BigInt::from(x) };
    v.to_f64().unwrap_or(f64::NAN)
}

//! Heuristic error bounds in slot space.
//!
//! A coefficient error with independent entries of standard deviation
//! `sigma_c` gives slot errors of standard deviation about
//! `sqrt(N) * sigma_c`; bounds are `TAIL` such deviations divided by the
//! scale. Products of independent terms add variances.

use num_traits::ToPrimitive;

use super::context::CkksContext;

/// Deviations covered by a bound.
pub const TAIL: f64 = 8.0;

/// Error-bound calculator for one parameter set.
#[derive(Clone, Debug)]
pub struct NoiseEstimator {
    n: f64,
    h: f64,
    sigma: f64,
    alpha: usize,
    /// `log2` of the digit products `D_k` at each level, indexed by level.
    digit_bits: Vec<Vec<f64>>,
    p_bits: f64,
}

fn bits(x: &num_bigint::BigUint) -> f64 {
    let b = x.bits();
    let shift = b.saturating_sub(60);
    (x >> shift).to_f64().unwrap_or(1.0).log2() + shift as f64
}

impl NoiseEstimator {
    pub fn new(ctx: &CkksContext) -> Self {
        let basis = ctx.basis();
        let p_bits = bits(&basis.product(&basis.aux_indices().collect::<Vec<_>>()));
        let digit_bits = (0..=ctx.max_level())
            .map(|level| {
                (0..basis.digits(level))
                    .map(|k| bits(&basis.product(&basis.digit_indices(k, level).collect::<Vec<_>>())))
                    .collect()
            })
            .collect();
        let p = ctx.params();
        Self {
            n: p.n as f64,
            h: p.hamming_weight as f64,
            sigma: p.sigma,
            alpha: p.alpha,
            digit_bits,
            p_bits,
        }
    }

    /// Slot bound of a coefficient error with deviation `coeff_std`.
    pub fn slot_bound(&self, coeff_std: f64, scale: f64) -> f64 {
        TAIL * self.n.sqrt() * coeff_std / scale
    }

    /// Rounding to integer coefficients when encoding.
    pub fn encoding(&self, scale: f64) -> f64 {
        self.slot_bound((1.0f64 / 12.0).sqrt(), scale)
    }

    /// Secret-key encryption of an encoded message.
    pub fn fresh(&self, scale: f64) -> f64 {
        self.slot_bound((self.sigma * self.sigma + 1.0 / 12.0).sqrt(), scale)
    }

    /// Public-key encryption: `v * e_pk + e_0 + e_1 * s` plus rounding.
    pub fn fresh_public(&self, scale: f64) -> f64 {
        let var = self.sigma * self.sigma * (self.n / 2.0 + self.h + 1.0) + 1.0 / 12.0;
        self.slot_bound(var.sqrt(), scale)
    }

    /// Error of a division whose result is off by fewer than `extra` units
    /// besides rounding, applied to both halves of a ciphertext.
    pub fn rounding(&self, extra: usize, scale: f64) -> f64 {
        let per = 0.5 + extra as f64;
        self.slot_bound(per * (1.0 + self.h).sqrt(), scale)
    }

    /// Key-switching error at `level`, before any later rescale, at a
    /// ciphertext scale of `scale`. ModUp leaves digit `k` below
    /// `(alpha_k + 1) * D_k`, so the key noise `sum_k d_k e_k / P` has
    /// variance at most `N sigma^2 sum_k ((alpha_k + 1) D_k / P)^2 / 3`; the
    /// ModDown adds rounding.
    pub fn key_switch(&self, level: usize, scale: f64) -> f64 {
        let var: f64 = self.digit_bits[level]
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let width = (level - k * self.alpha).min(self.alpha) as f64 + 1.0;
                self.n * self.sigma * self.sigma * width * width * 2f64.powf(2.0 * (b - self.p_bits)) / 3.0
            })
            .sum();
        self.slot_bound(var.sqrt(), scale) + self.rounding(0, scale)
    }

    /// Error of `x * y` given slot magnitudes and errors of both factors.
    pub fn product(&self, mx: f64, ex: f64, my: f64, ey: f64) -> f64 {
        mx * ey + my * ex + ex * ey
    }
}

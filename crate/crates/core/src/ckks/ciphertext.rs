use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Exact scale factor.
pub type Scale = BigRational;

/// `2^bits` as an exact scale.
pub fn scale_pow2(bits: u32) -> Scale {
    BigRational::from_integer(BigInt::one() << bits)
}

/// Leading 64 bits of `x` as a float, and the dropped bit count.
fn split_top(x: &BigInt) -> (f64, i32) {
    let extra = x.bits().saturating_sub(64);
    let top: BigInt = x >> extra;
    (top.to_f64().unwrap_or(f64::NAN), extra as i32)
}

/// Base-2 logarithm of a scale.
pub fn log2_scale(s: &Scale) -> f64 {
    let (n, en) = split_top(s.numer());
    let (d, ed) = split_top(s.denom());
    (n / d).log2() + (en - ed) as f64
}

/// Scale as a float (infinite beyond the `f64` range).
pub fn scale_f64(s: &Scale) -> f64 {
    let (n, en) = split_top(s.numer());
    let (d, ed) = split_top(s.denom());
    n / d * 2f64.powi(en - ed)
}

/// Relative tolerance for adding values at nominally equal scales.
pub const SCALE_TOLERANCE: f64 = 1.0 / (1u64 << 40) as f64;

/// Checks `|a/b - 1| <= 2^-40`.
pub fn check_scales(a: &Scale, b: &Scale) -> Result<()> {
    let ratio = a / b - BigRational::one();
    let tol = BigRational::new(BigInt::one(), BigInt::one() << 40);
    if ratio.abs() > tol {
        return Err(Error::ScaleMismatch(format!(
            "log2 scales {:.6} and {:.6} differ",
            log2_scale(a),
            log2_scale(b)
        )));
    }
    Ok(())
}

/// Encoded message in the evaluation domain (Montgomery form).
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: Polynomial,
    pub(crate) scale: Scale,
    pub(crate) level: usize,
}

impl Plaintext {
    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn scale(&self) -> &Scale {
        &self.scale
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// True when the plaintext also carries the auxiliary rows.
    pub fn is_extended(&self) -> bool {
        self.poly.num_rows() > self.level
    }
}

/// Ciphertext `(b, a)` decrypting as `b + a*s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) b: Polynomial,
    pub(crate) a: Polynomial,
    pub(crate) scale: Scale,
    pub(crate) level: usize,
    /// A rescale is owed (lazy rescaling).
    pub(crate) pending_rescale: bool,
}

impl Ciphertext {
    /// Assembles a ciphertext, checking that both parts agree.
    pub fn from_parts(b: Polynomial, a: Polynomial, scale: Scale, level: usize) -> Result<Self> {
        if b.rows() != a.rows() || b.basis().moduli() != a.basis().moduli() {
            return Err(Error::BasisMismatch);
        }
        if b.domain() != a.domain() {
            return Err(Error::DomainMismatch { expected: b.domain(), found: a.domain() });
        }
        if b.is_mont() != a.is_mont() {
            return Err(Error::FormMismatch("ciphertext parts must share the Montgomery flag"));
        }
        if b.num_rows() != level {
            return Err(Error::LevelMismatch(b.num_rows(), level));
        }
        Ok(Self { b, a, scale, level, pending_rescale: false })
    }

    pub fn b(&self) -> &Polynomial {
        &self.b
    }

    pub fn a(&self) -> &Polynomial {
        &self.a
    }

    pub fn scale(&self) -> &Scale {
        &self.scale
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn pending_rescale(&self) -> bool {
        self.pending_rescale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_tolerance() {
        let a = scale_pow2(48);
        let b = &a * BigRational::new(BigInt::from((1u64 << 50) + 1), BigInt::from(1u64 << 50));
        assert!(check_scales(&a, &b).is_ok());
        let c = &a * BigRational::new(BigInt::from(1001), BigInt::from(1000));
        assert!(matches!(check_scales(&a, &c), Err(Error::ScaleMismatch(_))));
    }

    #[test]
    fn log2_of_large_scales() {
        assert!((log2_scale(&scale_pow2(96)) - 96.0).abs() < 1e-12);
        let s = BigRational::new(BigInt::one() << 2000, BigInt::from(3));
        assert!((log2_scale(&s) - (2000.0 - 3f64.log2())).abs() < 1e-9);
    }
}

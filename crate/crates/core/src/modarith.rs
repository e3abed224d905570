//! 32-bit prime-field arithmetic built on signed Montgomery reduction.
//!
//! Residues are carried as `i32` values in the lazy range `(-q, q)`. A value
//! in Montgomery form represents `a * 2^32 mod q`. Only [`correct`] produces
//! the canonical representative in `[0, q)`; every other routine leaves the
//! final correction to the caller.
//!
//! Lazy addition budget: two lazy residues summed in `i32` stay in
//! `(-2q, 2q)`, which is safe for any `q < 2^30`. Longer chains should be
//! accumulated in `i64` (see [`lazy_add`]) and finished with [`correct`],
//! which accepts the whole `i64` range.

/// Montgomery radix as a 64-bit integer.
pub const MONT_R: u64 = 1 << 32;

/// Precomputed per-prime constants for signed Montgomery arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrimeContext {
    q: i32,
    /// `q^{-1} mod 2^32`, interpreted as a signed 32-bit integer.
    m: i32,
    /// `2^64 mod q`, used to enter Montgomery form.
    r2: i32,
    /// `2^32 mod q`, i.e. the Montgomery form of one.
    r: i32,
}

impl PrimeContext {
    /// Builds the constants for an odd modulus `q < 2^31`.
    ///
    /// Primality is not checked here; basis generation is responsible for it.
    pub fn new(q: u32) -> Self {
        assert!(q % 2 == 1 && q > 2 && q < (1 << 31), "modulus must be odd and below 2^31, got {q}");
        // Newton iteration for the inverse modulo 2^32.
        let mut inv: u32 = 1;
        for _ in 0..5 {
            inv = inv.wrapping_mul(2u32.wrapping_sub(q.wrapping_mul(inv)));
        }
        debug_assert_eq!(q.wrapping_mul(inv), 1);
        let r = (MONT_R % q as u64) as i32;
        let r2 = ((r as u64 * r as u64) % q as u64) as i32;
        Self { q: q as i32, m: inv as i32, r2, r }
    }

    #[inline(always)]
    pub fn q(&self) -> u32 {
        self.q as u32
    }

    #[inline(always)]
    pub fn q_i32(&self) -> i32 {
        self.q
    }

    /// Signed Montgomery constant `q^{-1} mod 2^32`.
    #[inline(always)]
    pub fn m(&self) -> i32 {
        self.m
    }

    /// `2^64 mod q`.
    #[inline(always)]
    pub fn r2(&self) -> i32 {
        self.r2
    }

    /// `2^32 mod q`, the Montgomery representation of one.
    #[inline(always)]
    pub fn one_mont(&self) -> i32 {
        self.r
    }

    /// `a * b mod q` on canonical operands, by wide division. Slow; intended
    /// for precomputation.
    pub fn mul_mod(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.q as u128) as u64
    }

    pub fn pow_mod(&self, base: u64, mut exp: u64) -> u64 {
        let q = self.q as u64;
        let mut result = 1 % q;
        let mut b = base % q;
        while exp > 0 {
            if exp & 1 == 1 {
                result = self.mul_mod(result, b);
            }
            b = self.mul_mod(b, b);
            exp >>= 1;
        }
        result
    }

    /// Inverse of a nonzero residue via Fermat's little theorem.
    pub fn inv_mod(&self, a: u64) -> u64 {
        let a = a % self.q as u64;
        assert!(a != 0, "zero has no inverse modulo {}", self.q);
        self.pow_mod(a, self.q as u64 - 2)
    }

    /// Montgomery form of a canonical residue, computed by wide division and
    /// returned canonical. Used for building tables.
    pub fn mont_canonical(&self, a: u64) -> i32 {
        ((a as u128 * MONT_R as u128) % self.q as u128) as i32
    }
}

/// Signed Montgomery reduction: returns `B ≡ a * 2^{-32} (mod q)` with
/// `B ∈ (-q, q)`.
///
/// The input must lie in `[-q * 2^31, q * 2^31)`; this is checked in debug
/// builds only.
#[inline(always)]
pub fn mont_reduce(a: i64, ctx: &PrimeContext) -> i32 {
    debug_assert!(
        {
            let bound = (ctx.q as i64) << 31;
            a >= -bound && a < bound
        },
        "mont_reduce input {a} out of range for q = {}",
        ctx.q
    );
    let lo = a as i32;
    let hi = (a >> 32) as i32;
    let t = lo.wrapping_mul(ctx.m);
    let t = ((t as i64 * ctx.q as i64) >> 32) as i32;
    hi - t
}

/// `a * b * 2^{-32} mod q`, lazily reduced into `(-q, q)`.
///
/// With `b` in Montgomery form the result keeps the form of `a`.
#[inline(always)]
pub fn mont_mul(a: i32, b: i32, ctx: &PrimeContext) -> i32 {
    mont_reduce(a as i64 * b as i64, ctx)
}

/// Enters Montgomery form: `a * 2^32 mod q`, lazily reduced.
#[inline(always)]
pub fn to_mont(a: i32, ctx: &PrimeContext) -> i32 {
    mont_mul(a, ctx.r2, ctx)
}

/// Leaves Montgomery form: `a * 2^{-32} mod q`, lazily reduced.
#[inline(always)]
pub fn from_mont(a: i32, ctx: &PrimeContext) -> i32 {
    mont_reduce(a as i64, ctx)
}

/// Unreduced addition. The caller owns the magnitude budget.
#[inline(always)]
pub fn lazy_add(a: i64, b: i64) -> i64 {
    debug_assert!(a.checked_add(b).is_some(), "lazy accumulator overflow");
    a + b
}

/// Maps any `i64` to its canonical representative in `[0, q)`.
#[inline(always)]
pub fn correct(a: i64, q: u32) -> u32 {
    a.rem_euclid(q as i64) as u32
}

/// Folds a value in `(-2q, 2q)` back into `(-q, q)` without branching.
/// Requires `q < 2^30`.
#[inline(always)]
pub fn reduce_lazy2(a: i32, q: i32) -> i32 {
    debug_assert!(a > -2 * q && a < 2 * q);
    let a = a + (q & (a >> 31));
    a - (q & !((a - q) >> 31))
}

/// Maps a lazy residue in `(-q, q)` to `[0, q)`.
#[inline(always)]
pub fn canonical_from_lazy(a: i32, q: i32) -> i32 {
    debug_assert!(a > -q && a < q);
    a + ((a >> 31) & q)
}

/// Reference reducer by wide division. Not used on any production path.
pub fn reference_reduce(a: i64, q: u32) -> u32 {
    (a as i128).rem_euclid(q as i128) as u32
}

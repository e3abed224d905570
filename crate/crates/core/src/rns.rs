//! Prime generation, RNS bases, and a big-integer CRT oracle.
//!
//! A basis stores `L` main primes `Q_0..Q_{L-1}` followed by `alpha` auxiliary
//! primes `P_0..P_{alpha-1}`. Main primes come in consecutive pairs whose
//! product approximates the scale `2^delta_bits`.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modarith::PrimeContext;

/// Upper limit on any prime, independent of `alpha`. Keeping primes below
/// `2^30` lets two lazy residues be summed in `i32` and fed straight into a
/// Montgomery multiplication.
pub const PRIME_LIMIT: u64 = 1 << 30;

/// Accepted range for `delta_bits`.
pub const DELTA_BITS_RANGE: std::ops::RangeInclusive<u32> = 20..=60;

const MAGIC: &[u8; 4] = b"RNSB";
const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimeRole {
    /// Main modulus prime, part of `Q`.
    Main,
    /// Auxiliary key-switching prime, part of `P`.
    Aux,
}

/// Immutable ordered set of NTT-friendly primes.
#[derive(Clone, PartialEq, Eq)]
pub struct RnsBasis {
    n: usize,
    l: usize,
    alpha: usize,
    delta_bits: u32,
    primes: Vec<PrimeContext>,
}

impl fmt::Debug for RnsBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RnsBasis")
            .field("n", &self.n)
            .field("l", &self.l)
            .field("alpha", &self.alpha)
            .field("delta_bits", &self.delta_bits)
            .field("primes", &self.moduli())
            .finish()
    }
}

/// Deterministic Miller-Rabin for 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mul(r, b);
            }
            b = mul(b, b);
            e >>= 1;
        }
        r
    };
    'outer: for a in BASES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Largest admissible prime for a basis with `alpha` auxiliary primes.
pub fn prime_cap(alpha: usize) -> u64 {
    let alpha = alpha.max(1) as u64;
    ((u32::MAX as u64) / alpha).min(PRIME_LIMIT - 1)
}

fn check_degree(n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::InvalidDegree(n));
    }
    Ok(())
}

/// Primes `p = k*m + 1` visited downward from `hi` (inclusive) to `lo`.
fn primes_down(m: u64, hi: u64, lo: u64) -> impl Iterator<Item = u64> {
    let k_hi = if hi == 0 { 0 } else { (hi - 1) / m };
    let k_lo = lo.saturating_sub(1).div_ceil(m).max(1);
    (k_lo..=k_hi).rev().map(move |k| k * m + 1).filter(move |&p| p >= lo && p <= hi && is_prime(p))
}

/// Primes `p = k*m + 1` visited upward from `lo` (inclusive) to `hi`.
fn primes_up(m: u64, lo: u64, hi: u64) -> impl Iterator<Item = u64> {
    let k_lo = lo.saturating_sub(1).div_ceil(m).max(1);
    let k_hi = if hi == 0 { 0 } else { (hi - 1) / m };
    (k_lo..=k_hi).map(move |k| k * m + 1).filter(move |&p| p >= lo && p <= hi && is_prime(p))
}

/// Pairs main primes into scale groups with product in `[delta/slack, slack*delta)`.
///
/// Small partners are taken downward from `sqrt(delta)`, then upward until
/// `sqrt(slack*delta)`. Each is matched with the unused large partner closest
/// to `delta/a` (in ratio), or with the largest feasible prime when no large
/// partner is left.
fn pair_main_primes(
    m: u64,
    cap: u64,
    delta_bits: u32,
    slack: u64,
    groups_needed: usize,
    reserved: &HashSet<u64>,
) -> Vec<(u64, u64)> {
    let delta: u128 = 1u128 << delta_bits;
    let lower = delta / slack as u128; // inclusive
    let upper = delta * slack as u128; // exclusive
    let root = (1u64 << delta_bits.div_ceil(2)).min(cap);
    let split = ((upper as f64).sqrt() as u64).min(cap);
    let a_min = (lower.div_ceil(cap as u128) as u64).max(m + 1);

    let mut used: HashSet<u64> = reserved.clone();
    let mut groups = Vec::new();
    let small = primes_down(m, root, a_min).chain(primes_up(m, root + 1, split));
    for a in small {
        if groups.len() == groups_needed {
            break;
        }
        if used.contains(&a) {
            continue;
        }
        let f_lo = (lower.div_ceil(a as u128) as u64).max(m + 1);
        let f_hi = (((upper - 1) / a as u128).min(cap as u128)) as u64;
        if f_lo > f_hi {
            continue;
        }
        let target = (delta / a as u128) as u64;
        let free = |p: &u64| *p != a && !used.contains(p);
        let up = primes_up(m, target.max(split + 1).max(f_lo), f_hi).find(free);
        let down = if target > split + 1 {
            primes_down(m, (target - 1).min(f_hi), (split + 1).max(f_lo)).find(free)
        } else {
            None
        };
        let partner = match (up, down) {
            (Some(u), Some(d)) => {
                // Closer in ratio: (a*u)/delta < delta/(a*d).
                if (a as u128 * u as u128) * (a as u128 * d as u128) < delta * delta {
                    Some(u)
                } else {
                    Some(d)
                }
            }
            (Some(u), None) => Some(u),
            (None, Some(d)) => Some(d),
            (None, None) => primes_down(m, f_hi, f_lo).find(free),
        };
        if let Some(b) = partner {
            used.insert(a);
            used.insert(b);
            groups.push((a, b));
        }
    }
    groups
}

impl RnsBasis {
    /// Deterministically generates a basis of `l` main and `alpha` auxiliary
    /// primes, all congruent to 1 mod `2n`.
    ///
    /// Auxiliary primes are the largest admissible ones. Main primes are
    /// paired so that each pair multiplies to within a factor of two of
    /// `2^delta_bits`; if that window has too few primes the search is
    /// repeated with a factor-of-four window.
    pub fn generate(n: usize, l: usize, alpha: usize, delta_bits: u32) -> Result<Self> {
        check_degree(n)?;
        if l == 0 || l % 2 != 0 {
            return Err(Error::InvalidBasis(format!("main prime count {l} must be even and positive")));
        }
        if alpha == 0 {
            return Err(Error::InvalidBasis("alpha must be positive".into()));
        }
        if !DELTA_BITS_RANGE.contains(&delta_bits) {
            return Err(Error::InvalidBasis(format!(
                "delta_bits {delta_bits} outside {}..={}",
                DELTA_BITS_RANGE.start(),
                DELTA_BITS_RANGE.end()
            )));
        }
        let m = 2 * n as u64;
        let cap = prime_cap(alpha);

        let aux: Vec<u64> = primes_down(m, cap, m + 1).take(alpha).collect();
        if aux.len() < alpha {
            return Err(Error::PrimeExhaustion {
                needed: l + alpha,
                found: aux.len(),
                reason: format!("fewer than {alpha} auxiliary primes below {cap}"),
            });
        }
        let reserved: HashSet<u64> = aux.iter().copied().collect();

        let groups_needed = l / 2;
        let mut best = Vec::new();
        for slack in [2u64, 4] {
            let groups = pair_main_primes(m, cap, delta_bits, slack, groups_needed, &reserved);
            if groups.len() == groups_needed {
                best = groups;
                break;
            }
            if groups.len() > best.len() {
                best = groups;
            }
        }
        if best.len() < groups_needed {
            return Err(Error::PrimeExhaustion {
                needed: l + alpha,
                found: 2 * best.len() + alpha,
                reason: format!("only {} prime pairs near 2^{delta_bits}", best.len()),
            });
        }
        let main: Vec<u64> = best.iter().flat_map(|&(a, b)| [a, b]).collect();
        Self::from_primes(n, &main, &aux, delta_bits)
    }

    /// Builds a basis from explicit primes, validating them.
    pub fn from_primes(n: usize, main: &[u64], aux: &[u64], delta_bits: u32) -> Result<Self> {
        check_degree(n)?;
        let m = 2 * n as u64;
        let cap = prime_cap(aux.len());
        let mut seen = HashSet::new();
        let mut primes = Vec::with_capacity(main.len() + aux.len());
        for &p in main.iter().chain(aux) {
            if !is_prime(p) {
                return Err(Error::InvalidBasis(format!("{p} is not prime")));
            }
            if p % m != 1 {
                return Err(Error::InvalidBasis(format!("{p} is not 1 mod {m}")));
            }
            if p > cap {
                return Err(Error::InvalidBasis(format!("{p} exceeds the prime cap {cap}")));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidBasis(format!("duplicate prime {p}")));
            }
            primes.push(PrimeContext::new(p as u32));
        }
        Ok(Self { n, l: main.len(), alpha: aux.len(), delta_bits, primes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_n(&self) -> u32 {
        self.n.trailing_zeros()
    }

    /// Number of main primes.
    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of auxiliary primes.
    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn delta_bits(&self) -> u32 {
        self.delta_bits
    }

    /// Total prime count `l + alpha`.
    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn prime(&self, idx: usize) -> &PrimeContext {
        &self.primes[idx]
    }

    pub fn primes(&self) -> &[PrimeContext] {
        &self.primes
    }

    pub fn modulus(&self, idx: usize) -> u32 {
        self.primes[idx].q()
    }

    pub fn moduli(&self) -> Vec<u32> {
        self.primes.iter().map(|p| p.q()).collect()
    }

    pub fn role(&self, idx: usize) -> PrimeRole {
        if idx < self.l {
            PrimeRole::Main
        } else {
            PrimeRole::Aux
        }
    }

    /// Basis indices of the auxiliary primes.
    pub fn aux_indices(&self) -> std::ops::Range<usize> {
        self.l..self.l + self.alpha
    }

    /// Number of scale groups (pairs of main primes).
    pub fn num_groups(&self) -> usize {
        self.l / 2
    }

    /// Main-prime indices of scale group `g`.
    pub fn group(&self, g: usize) -> [usize; 2] {
        [2 * g, 2 * g + 1]
    }

    /// Product of the primes at the given indices.
    pub fn product(&self, indices: &[usize]) -> BigUint {
        indices.iter().fold(BigUint::one(), |acc, &i| acc * self.modulus(i))
    }

    /// Gadget digit count for a ciphertext with `level` main primes.
    pub fn digits(&self, level: usize) -> usize {
        level.div_ceil(self.alpha)
    }

    /// Main-prime indices of digit `k` at `level`.
    pub fn digit_indices(&self, k: usize, level: usize) -> std::ops::Range<usize> {
        let start = (k * self.alpha).min(level);
        let end = ((k + 1) * self.alpha).min(level);
        start..end
    }

    /// Stable 64-bit fingerprint of the whole basis.
    pub fn hash(&self) -> u64 {
        prime_set_hash(&self.moduli())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.l as u32).to_le_bytes());
        out.extend_from_slice(&(self.alpha as u32).to_le_bytes());
        out.extend_from_slice(&self.delta_bits.to_le_bytes());
        for p in &self.primes {
            out.extend_from_slice(&p.q().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Serialization("bad basis magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Serialization(format!("unsupported basis version {version}")));
        }
        let n = r.u32()? as usize;
        let l = r.u32()? as usize;
        let alpha = r.u32()? as usize;
        let delta_bits = r.u32()?;
        let mut primes = Vec::with_capacity(l + alpha);
        for _ in 0..l + alpha {
            primes.push(r.u32()? as u64);
        }
        r.finish()?;
        Self::from_primes(n, &primes[..l], &primes[l..], delta_bits)
    }
}

/// Fingerprint of an ordered prime list: the first 8 bytes of its SHA-256.
pub fn prime_set_hash(moduli: &[u32]) -> u64 {
    let mut h = Sha256::new();
    for q in moduli {
        h.update(q.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Reconstructs the integer in `[0, prod q)` with the given canonical residues.
pub fn crt_reconstruct(residues: &[u32], moduli: &[u32]) -> BigUint {
    assert_eq!(residues.len(), moduli.len());
    let modulus: BigUint = moduli.iter().fold(BigUint::one(), |acc, &q| acc * q);
    let mut acc = BigUint::zero();
    for (&r, &q) in residues.iter().zip(moduli) {
        let q_hat = &modulus / q;
        let q_hat_mod = (&q_hat % q).to_u64().expect("fits");
        let ctx = PrimeContext::new(q);
        let inv = ctx.inv_mod(q_hat_mod);
        let coeff = ctx.mul_mod(r as u64 % q as u64, inv);
        acc += q_hat * coeff;
    }
    acc % modulus
}

/// Residues of `value` modulo each prime.
pub fn crt_decompose(value: &BigUint, moduli: &[u32]) -> Vec<u32> {
    moduli.iter().map(|&q| (value % q).to_u32().expect("residue fits")).collect()
}

/// Little-endian cursor shared by the serializers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.bytes.len() {
            return Err(Error::Serialization("unexpected end of input".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Serialization(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ciphertext::{Ciphertext, Plaintext};
use super::context::CkksContext;
use crate::automorphism::galois_element;
use crate::error::{Error, Result};
use crate::modarith::{mont_mul, reduce_lazy2};
use crate::poly::{Domain, FusedPipeline, Polynomial, PrimeSet, Stage};

/// What an evaluation key switches from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyKind {
    /// `s^2 -> s`.
    Relinearization,
    /// `phi_g(s) -> s` for Galois element `g`.
    Rotation(u64),
}

impl fmt::Display for KeyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyKind::Relinearization => write!(f, "relinearization"),
            KeyKind::Rotation(g) => write!(f, "rotation (g = {g})"),
        }
    }
}

/// Ternary secret with its evaluation-domain image over every basis prime.
#[derive(Clone, Debug)]
pub struct SecretKey {
    pub(crate) coeffs: Vec<i8>,
    pub(crate) eval: Polynomial,
}

impl SecretKey {
    pub fn coeffs(&self) -> &[i8] {
        &self.coeffs
    }

    pub fn hamming_weight(&self) -> usize {
        self.coeffs.iter().filter(|&&c| c != 0).count()
    }

    /// Evaluation-domain, Montgomery-form secret over the whole basis.
    pub fn eval(&self) -> &Polynomial {
        &self.eval
    }
}

/// Encryption of zero under the secret, over the full main basis.
#[derive(Clone, Debug)]
pub struct PublicKey {
    pub(crate) b: Polynomial,
    pub(crate) a: Polynomial,
}

impl PublicKey {
    pub fn b(&self) -> &Polynomial {
        &self.b
    }

    pub fn a(&self) -> &Polynomial {
        &self.a
    }
}

/// Gadget key: digit `k` is `(b_k, a_k)` over all primes with
/// `b_k + a_k * s = e_k + g_k * s'`, where `g_k = P` on the primes of digit
/// `k` and `0` on every other prime.
#[derive(Clone, Debug)]
pub struct EvaluationKey {
    pub(crate) kind: KeyKind,
    pub(crate) digits: Vec<(Polynomial, Polynomial)>,
}

impl EvaluationKey {
    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn digits(&self) -> &[(Polynomial, Polynomial)] {
        &self.digits
    }
}

/// Relinearization key plus rotation keys indexed by Galois element.
#[derive(Clone, Debug, Default)]
pub struct KeySet {
    pub relin: Option<EvaluationKey>,
    pub rotations: HashMap<u64, EvaluationKey>,
}

impl KeySet {
    pub fn relin(&self) -> Result<&EvaluationKey> {
        self.relin.as_ref().ok_or(Error::KeyKindMismatch {
            expected: KeyKind::Relinearization.to_string(),
            found: "none".into(),
        })
    }

    pub fn rotation(&self, r: i64, n: usize) -> Result<&EvaluationKey> {
        self.rotations.get(&galois_element(r, n)).ok_or(Error::MissingRotationKey(r))
    }

    pub fn insert(&mut self, key: EvaluationKey) {
        match key.kind {
            KeyKind::Relinearization => self.relin = Some(key),
            KeyKind::Rotation(g) => {
                self.rotations.insert(g, key);
            }
        }
    }
}

/// Ternary vector with exactly `h` nonzero entries, positions chosen by a
/// partial Fisher-Yates shuffle.
pub fn sample_ternary(n: usize, h: usize, rng: &mut impl Rng) -> Vec<i8> {
    let mut positions: Vec<usize> = (0..n).collect();
    let mut out = vec![0i8; n];
    for i in 0..h.min(n) {
        let j = rng.random_range(i..n);
        positions.swap(i, j);
        out[positions[i]] = if rng.random::<bool>() { 1 } else { -1 };
    }
    out
}

/// Coefficients in `{-1, 0, 1}` with probabilities `1/4, 1/2, 1/4`.
pub fn sample_zo(n: usize, rng: &mut impl Rng) -> Vec<i64> {
    (0..n)
        .map(|_| match rng.random_range(0..4u8) {
            0 => -1,
            1 => 1,
            _ => 0,
        })
        .collect()
}

/// Rounded Gaussian with standard deviation `sigma`.
pub fn sample_gaussian(n: usize, sigma: f64, rng: &mut impl Rng) -> Vec<i64> {
    if sigma == 0.0 {
        return vec![0; n];
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    (0..n).map(|_| normal.sample(rng).round() as i64).collect()
}

/// Seeded source of all scheme randomness.
pub struct KeyGenerator {
    ctx: Arc<CkksContext>,
    rng: ChaCha20Rng,
}

impl fmt::Debug for KeyGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyGenerator").finish_non_exhaustive()
    }
}

impl KeyGenerator {
    pub fn new(ctx: Arc<CkksContext>, seed: u64) -> Self {
        Self { ctx, rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    /// Uniform evaluation-domain polynomial (taken as Montgomery form).
    pub(crate) fn uniform(&mut self, rows: &PrimeSet) -> Polynomial {
        let mut p = self.ctx.zero(rows.clone(), Domain::Evaluation, true);
        let basis = self.ctx.basis().clone();
        let seeds: Vec<u64> = (0..rows.len()).map(|_| self.rng.random()).collect();
        let n = self.ctx.n();
        p.data_mut().par_chunks_mut(n).zip(rows.indices().par_iter()).zip(seeds.par_iter()).for_each(
            |((row, &b), &seed)| {
                let q = basis.modulus(b);
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                row.iter_mut().for_each(|x| *x = rng.random_range(0..q) as i32);
            },
        );
        p
    }

    /// Evaluation-domain image of small signed coefficients.
    pub(crate) fn small_eval(&mut self, rows: &PrimeSet, coeffs: &[i64]) -> Result<Polynomial> {
        let mut p = self.ctx.from_signed(rows.clone(), coeffs)?;
        self.ctx.ntt(&mut p)?;
        Ok(p)
    }

    pub(crate) fn error(&mut self, rows: &PrimeSet) -> Result<Polynomial> {
        let e = sample_gaussian(self.ctx.n(), self.ctx.params().sigma, &mut self.rng);
        self.small_eval(rows, &e)
    }

    pub fn secret_key(&mut self) -> Result<SecretKey> {
        let coeffs = sample_ternary(self.ctx.n(), self.ctx.params().hamming_weight, &mut self.rng);
        let wide: Vec<i64> = coeffs.iter().map(|&c| c as i64).collect();
        let all = PrimeSet::prefix(self.ctx.basis().len());
        let eval = self.small_eval(&all, &wide)?;
        Ok(SecretKey { coeffs, eval })
    }

    pub fn public_key(&mut self, sk: &SecretKey) -> Result<PublicKey> {
        let rows = self.ctx.q_rows(self.ctx.max_level());
        let a = self.uniform(&rows);
        let e = self.error(&rows)?;
        let b = FusedPipeline::new(vec![Stage::MulSub(1, 2)])?.execute(&[&e, &a, &sk.eval], &rows)?;
        Ok(PublicKey { b, a })
    }

    /// Gadget key from `s'` (evaluation domain, Montgomery, all primes) to `s`.
    pub fn evaluation_key(&mut self, sk: &SecretKey, s_prime: &Polynomial, kind: KeyKind) -> Result<EvaluationKey> {
        let level = self.ctx.max_level();
        let rows = self.ctx.ext_rows(level);
        let basis = self.ctx.basis().clone();
        let p = basis.product(&basis.aux_indices().collect::<Vec<_>>());
        let s_rows = s_prime.view(&rows)?;
        let mut digits = Vec::new();
        for k in 0..basis.digits(level) {
            let a = self.uniform(&rows);
            let e = self.error(&rows)?;
            let mut b = FusedPipeline::new(vec![Stage::MulSub(1, 2)])?.execute(&[&e, &a, &sk.eval], &rows)?;
            for i in basis.digit_indices(k, level) {
                let ctx = basis.prime(i);
                let q = ctx.q_i32();
                let pm: num_bigint::BigUint = &p % ctx.q();
                let pm = ctx.mont_canonical(pm.to_u64().expect("residue fits"));
                let r = rows.position(i).expect("digit row");
                for (x, &s) in b.row_mut(r).iter_mut().zip(s_rows[r]) {
                    *x = reduce_lazy2(*x + mont_mul(s, pm, ctx), q);
                }
            }
            digits.push((b, a));
        }
        Ok(EvaluationKey { kind, digits })
    }

    pub fn relin_key(&mut self, sk: &SecretKey) -> Result<EvaluationKey> {
        let s2 = sk.eval.ew_mul(&sk.eval)?;
        self.evaluation_key(sk, &s2, KeyKind::Relinearization)
    }

    pub fn rotation_key(&mut self, sk: &SecretKey, r: i64) -> Result<EvaluationKey> {
        let map = self.ctx.automorphisms().rotation(r, self.ctx.n())?;
        let rotated = map.apply(&sk.eval)?;
        self.evaluation_key(sk, &rotated, KeyKind::Rotation(map.galois()))
    }

    /// Relinearization key plus rotation keys for `rotations`.
    pub fn key_set(&mut self, sk: &SecretKey, rotations: &[i64]) -> Result<KeySet> {
        let mut set = KeySet::default();
        set.insert(self.relin_key(sk)?);
        for &r in rotations {
            set.insert(self.rotation_key(sk, r)?);
        }
        Ok(set)
    }

    /// `(b, a) = (-a*s + e + m, a)` with uniform `a`.
    pub fn encrypt_sk(&mut self, pt: &Plaintext, sk: &SecretKey) -> Result<Ciphertext> {
        let rows = self.ctx.q_rows(pt.level);
        let a = self.uniform(&rows);
        let e = self.error(&rows)?;
        let b = FusedPipeline::new(vec![Stage::MulSub(1, 2), Stage::Add(3)])?.execute(&[&e, &a, &sk.eval, &pt.poly], &rows)?;
        Ok(Ciphertext { b, a, scale: pt.scale.clone(), level: pt.level, pending_rescale: false })
    }

    /// `(v*pk_b + e0 + m, v*pk_a + e1)` with `v` drawn from `ZO(1/2)`.
    pub fn encrypt_pk(&mut self, pt: &Plaintext, pk: &PublicKey) -> Result<Ciphertext> {
        let rows = self.ctx.q_rows(pt.level);
        let v = sample_zo(self.ctx.n(), &mut self.rng);
        let v = self.small_eval(&rows, &v)?;
        let e0 = self.error(&rows)?;
        let e1 = self.error(&rows)?;
        let b = FusedPipeline::new(vec![Stage::MulAcc(1, 2), Stage::Add(3)])?.execute(&[&e0, &v, &pk.b, &pt.poly], &rows)?;
        let a = FusedPipeline::new(vec![Stage::MulAcc(1, 2)])?.execute(&[&e1, &v, &pk.a], &rows)?;
        Ok(Ciphertext { b, a, scale: pt.scale.clone(), level: pt.level, pending_rescale: false })
    }
}

/// `b + a*s` over the ciphertext's primes.
pub fn decrypt(ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
    let rows = ct.b.rows().clone();
    let poly = FusedPipeline::new(vec![Stage::MulAcc(1, 2)])?.execute(&[&ct.b, &ct.a, &sk.eval], &rows)?;
    Ok(Plaintext { poly, scale: ct.scale.clone(), level: ct.level })
}

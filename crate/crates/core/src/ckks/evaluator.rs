use std::sync::Arc;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use super::ciphertext::{check_scales, Ciphertext, Plaintext, Scale};
use super::context::CkksContext;
use super::keys::{EvaluationKey, KeyKind, KeySet};
use crate::automorphism::AutomorphismMap;
use crate::error::{Error, Result};
use crate::poly::{Domain, FusedPipeline, Polynomial, PrimeSet, Stage};

/// How `hmult` reaches the next level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RescalePolicy {
    /// ModDown folded into the rescale: one conversion by `P * q_top`.
    #[default]
    Merged,
    /// ModDown by `P`, then an exact rescale.
    Unmerged,
    /// ModDown by `P`; the rescale is deferred until a product needs it.
    /// Products are always unmerged under this policy.
    Lazy,
}

/// ModUp output of one ciphertext's `a`, shareable across rotations.
#[derive(Clone, Debug)]
pub struct HoistState {
    level: usize,
    digits: Vec<Polynomial>,
}

impl HoistState {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Extended digits, one per gadget digit of the level.
    pub fn digits(&self) -> &[Polynomial] {
        &self.digits
    }
}

/// Homomorphic operations. Stateless apart from its policy flags, so one
/// evaluator can serve many threads.
#[derive(Clone, Debug)]
pub struct Evaluator {
    ctx: Arc<CkksContext>,
    policy: RescalePolicy,
    min_ks_step: Option<i64>,
    /// `P * 2^32 mod q_i` for every main prime `i`.
    p_mont: Arc<[i32]>,
}

fn same_level(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LevelMismatch(a, b));
    }
    Ok(())
}

fn pipeline(stages: Vec<Stage>, inputs: &[&Polynomial], rows: &PrimeSet) -> Result<Polynomial> {
    FusedPipeline::new(stages)?.execute(inputs, rows)
}

impl Evaluator {
    pub fn new(ctx: Arc<CkksContext>) -> Self {
        let basis = ctx.basis();
        let p: BigUint = basis.product(&basis.aux_indices().collect::<Vec<_>>());
        let p_mont = (0..basis.l())
            .map(|i| {
                let r: BigUint = &p % basis.modulus(i);
                basis.prime(i).mont_canonical(r.to_u64().expect("residue fits"))
            })
            .collect();
        Self { ctx, policy: RescalePolicy::default(), min_ks_step: None, p_mont }
    }

    pub fn with_policy(mut self, policy: RescalePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Rotations by multiples of `step` are performed as repeated rotations
    /// by `step`, so only that one rotation key is needed.
    pub fn with_min_ks(mut self, step: i64) -> Self {
        self.min_ks_step = Some(step);
        self
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn policy(&self) -> RescalePolicy {
        self.policy
    }

    pub fn min_ks_step(&self) -> Option<i64> {
        self.min_ks_step
    }

    fn p_consts(&self, rows: &PrimeSet) -> Arc<[i32]> {
        rows.indices().iter().map(|&i| self.p_mont[i]).collect()
    }

    fn check_ct(&self, ct: &Ciphertext) -> Result<()> {
        self.ctx.check_level(ct.level)?;
        let rows = self.ctx.q_rows(ct.level);
        for p in [&ct.b, &ct.a] {
            if p.domain() != Domain::Evaluation {
                return Err(Error::DomainMismatch { expected: Domain::Evaluation, found: p.domain() });
            }
            if !p.is_mont() {
                return Err(Error::FormMismatch("ciphertext polynomials must be in Montgomery form"));
            }
            if p.rows() != &rows {
                return Err(Error::BasisMismatch);
            }
        }
        Ok(())
    }

    fn check_pt(&self, pt: &Plaintext, level: usize) -> Result<()> {
        let p = &pt.poly;
        if p.domain() != Domain::Evaluation {
            return Err(Error::DomainMismatch { expected: Domain::Evaluation, found: p.domain() });
        }
        if !p.is_mont() {
            return Err(Error::FormMismatch("plaintexts must be in Montgomery form"));
        }
        if pt.level < level || !self.ctx.q_rows(level).is_subset_of(p.rows()) {
            return Err(Error::LevelMismatch(pt.level, level));
        }
        Ok(())
    }

    /// Performs a deferred rescale, if one is owed.
    pub fn settle(&self, ct: &Ciphertext) -> Result<Ciphertext> {
        if ct.pending_rescale {
            self.rescale(ct)
        } else {
            Ok(ct.clone())
        }
    }

    fn settle_pair(&self, x: &Ciphertext, y: &Ciphertext) -> Result<(Ciphertext, Ciphertext)> {
        if x.pending_rescale == y.pending_rescale {
            Ok((x.clone(), y.clone()))
        } else {
            Ok((self.settle(x)?, self.settle(y)?))
        }
    }

    pub fn hadd(&self, x: &Ciphertext, y: &Ciphertext) -> Result<Ciphertext> {
        self.add_like(x, y, false)
    }

    pub fn hsub(&self, x: &Ciphertext, y: &Ciphertext) -> Result<Ciphertext> {
        self.add_like(x, y, true)
    }

    fn add_like(&self, x: &Ciphertext, y: &Ciphertext, sub: bool) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_ct(y)?;
        same_level(x.level, y.level)?;
        let (x, y) = self.settle_pair(x, y)?;
        check_scales(&x.scale, &y.scale)?;
        let (b, a) = if sub {
            (x.b.ew_sub(&y.b)?, x.a.ew_sub(&y.a)?)
        } else {
            (x.b.ew_add(&y.b)?, x.a.ew_add(&y.a)?)
        };
        Ok(Ciphertext { b, a, ..x })
    }

    pub fn hneg(&self, x: &Ciphertext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        Ok(Ciphertext { b: x.b.ew_neg(), a: x.a.ew_neg(), ..x.clone() })
    }

    pub fn padd(&self, x: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_pt(pt, x.level)?;
        check_scales(&x.scale, &pt.scale)?;
        let rows = x.b.rows().clone();
        let b = pipeline(vec![Stage::Add(1)], &[&x.b, &pt.poly], &rows)?;
        Ok(Ciphertext { b, ..x.clone() })
    }

    /// Slotwise product with a plaintext. The scales multiply; the result
    /// is not rescaled (under the lazy policy a rescale becomes pending).
    pub fn pmult(&self, x: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        let x = self.settle(x)?;
        self.check_pt(pt, x.level)?;
        let rows = x.b.rows().clone();
        let b = pipeline(vec![Stage::Mul(1)], &[&x.b, &pt.poly], &rows)?;
        let a = pipeline(vec![Stage::Mul(1)], &[&x.a, &pt.poly], &rows)?;
        Ok(Ciphertext {
            b,
            a,
            scale: &x.scale * &pt.scale,
            level: x.level,
            pending_rescale: self.policy == RescalePolicy::Lazy,
        })
    }

    /// Divides by the top prime pair exactly and drops it.
    pub fn rescale(&self, x: &Ciphertext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        if x.level < 4 {
            return Err(Error::LevelExhausted(x.level));
        }
        let top = self.ctx.top_group(x.level);
        let conv = self.ctx.converter();
        let b = conv.rescale_exact(&x.b, &top)?;
        let a = conv.rescale_exact(&x.a, &top)?;
        self.ctx.counters().rescale(1);
        Ok(Ciphertext {
            b,
            a,
            scale: &x.scale / self.group_product(&top),
            level: x.level - 2,
            pending_rescale: false,
        })
    }

    fn group_product(&self, rows: &PrimeSet) -> Scale {
        BigRational::from_integer(self.ctx.basis().product(rows.indices()).into())
    }

    /// Keeps the first `level` main primes.
    pub fn drop_level(&self, x: &Ciphertext, level: usize) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.ctx.check_level(level)?;
        if level > x.level {
            return Err(Error::LevelMismatch(level, x.level));
        }
        let rows = self.ctx.q_rows(level);
        Ok(Ciphertext { b: x.b.select(&rows)?, a: x.a.select(&rows)?, level, ..x.clone() })
    }

    /// Extends every gadget digit of `d` (over the main primes of `level`)
    /// to the extended basis.
    pub fn mod_up(&self, d: &Polynomial, level: usize) -> Result<Vec<Polynomial>> {
        self.ctx.check_level(level)?;
        let basis = self.ctx.basis();
        let ext = self.ctx.ext_rows(level);
        let mut digits = Vec::with_capacity(basis.digits(level));
        for k in 0..basis.digits(level) {
            let own = PrimeSet::from(basis.digit_indices(k, level));
            let rest = ext.difference(&own);
            let part = d.select(&own)?;
            let conv = self.ctx.converter().mod_switch(&part, &rest)?;
            let mut full = self.ctx.zero(ext.clone(), Domain::Evaluation, true);
            full.copy_rows_from(&part, &own)?;
            full.copy_rows_from(&conv, &rest)?;
            digits.push(full);
        }
        self.ctx.counters().mod_up(1);
        Ok(digits)
    }

    /// `sum_k digit_k * evk_k`, over the extended basis of `level`.
    pub fn key_mult(&self, digits: &[Polynomial], evk: &EvaluationKey, level: usize) -> Result<(Polynomial, Polynomial)> {
        if digits.is_empty() || digits.len() > evk.digits.len() {
            return Err(Error::InvalidInput(format!(
                "{} digits for a key with {}",
                digits.len(),
                evk.digits.len()
            )));
        }
        let rows = self.ctx.ext_rows(level);
        let mut stages = vec![Stage::Mul(1)];
        stages.extend((1..digits.len()).map(|k| Stage::MulAcc(2 * k, 2 * k + 1)));
        let mut out = Vec::with_capacity(2);
        for part in 0..2 {
            let mut inputs = Vec::with_capacity(2 * digits.len());
            for (d, (kb, ka)) in digits.iter().zip(&evk.digits) {
                inputs.push(d);
                inputs.push(if part == 0 { kb } else { ka });
            }
            out.push(pipeline(stages.clone(), &inputs, &rows)?);
        }
        self.ctx.counters().key_mult(digits.len() as u64);
        let a = out.pop().expect("two parts");
        let b = out.pop().expect("two parts");
        Ok((b, a))
    }

    /// `round(x / P)` for both halves of a key-multiplication result.
    pub fn mod_down(&self, b: &Polynomial, a: &Polynomial) -> Result<(Polynomial, Polynomial)> {
        let p = self.ctx.p_rows();
        let conv = self.ctx.converter();
        let out = (conv.divide_round(b, &p)?, conv.divide_round(a, &p)?);
        self.ctx.counters().mod_down(1);
        Ok(out)
    }

    /// ModUp, KeyMult and ModDown: returns `(b', a')` with
    /// `b' + a' * s ~ d * s'` where `evk` switches from `s'`.
    pub fn key_switch(&self, d: &Polynomial, evk: &EvaluationKey, level: usize) -> Result<(Polynomial, Polynomial)> {
        let digits = self.mod_up(d, level)?;
        let (kb, ka) = self.key_mult(&digits, evk, level)?;
        self.mod_down(&kb, &ka)
    }

    fn expect_kind(evk: &EvaluationKey, kind: KeyKind) -> Result<()> {
        if evk.kind != kind {
            return Err(Error::KeyKindMismatch { expected: kind.to_string(), found: evk.kind.to_string() });
        }
        Ok(())
    }

    /// Product of two ciphertexts with relinearization. Under the merged
    /// and unmerged policies the result is one level lower.
    pub fn hmult(&self, x: &Ciphertext, y: &Ciphertext, relin: &EvaluationKey) -> Result<Ciphertext> {
        Self::expect_kind(relin, KeyKind::Relinearization)?;
        self.check_ct(x)?;
        self.check_ct(y)?;
        same_level(x.level, y.level)?;
        let x = self.settle(x)?;
        let y = self.settle(y)?;
        same_level(x.level, y.level)?;
        let level = x.level;
        if self.policy != RescalePolicy::Lazy && level < 4 {
            return Err(Error::LevelExhausted(level));
        }
        let rows = self.ctx.q_rows(level);
        let d0 = pipeline(vec![Stage::Mul(1)], &[&x.b, &y.b], &rows)?;
        let d1 = pipeline(vec![Stage::Mul(1), Stage::MulAcc(2, 3)], &[&x.b, &y.a, &x.a, &y.b], &rows)?;
        let d2 = pipeline(vec![Stage::Mul(1)], &[&x.a, &y.a], &rows)?;
        let digits = self.mod_up(&d2, level)?;
        let (mut kb, mut ka) = self.key_mult(&digits, relin, level)?;
        let scale = &x.scale * &y.scale;
        match self.policy {
            RescalePolicy::Merged => {
                let pc = self.p_consts(&rows);
                let tb = pipeline(vec![Stage::MulConst(pc.clone()), Stage::Add(1)], &[&d0, &kb], &rows)?;
                let ta = pipeline(vec![Stage::MulConst(pc), Stage::Add(1)], &[&d1, &ka], &rows)?;
                kb.copy_rows_from(&tb, &rows)?;
                ka.copy_rows_from(&ta, &rows)?;
                let top = self.ctx.top_group(level);
                let mut drop = top.indices().to_vec();
                drop.extend(self.ctx.basis().aux_indices());
                let drop = PrimeSet::new(drop);
                let conv = self.ctx.converter();
                let b = conv.divide_round(&kb, &drop)?;
                let a = conv.divide_round(&ka, &drop)?;
                self.ctx.counters().merged_mod_down(1);
                Ok(Ciphertext {
                    b,
                    a,
                    scale: scale / self.group_product(&top),
                    level: level - 2,
                    pending_rescale: false,
                })
            }
            RescalePolicy::Unmerged | RescalePolicy::Lazy => {
                let (sb, sa) = self.mod_down(&kb, &ka)?;
                let ct = Ciphertext {
                    b: d0.ew_add(&sb)?,
                    a: d1.ew_add(&sa)?,
                    scale,
                    level,
                    pending_rescale: true,
                };
                if self.policy == RescalePolicy::Lazy {
                    Ok(ct)
                } else {
                    self.rescale(&ct)
                }
            }
        }
    }

    /// `hmult(x, x)`.
    pub fn square(&self, x: &Ciphertext, relin: &EvaluationKey) -> Result<Ciphertext> {
        self.hmult(x, x, relin)
    }

    /// ModUp of `x.a`, reusable by every rotation of `x`.
    pub fn hoist(&self, x: &Ciphertext) -> Result<HoistState> {
        self.check_ct(x)?;
        Ok(HoistState { level: x.level, digits: self.mod_up(&x.a, x.level)? })
    }

    fn rotation_map(&self, r: i64) -> Result<Arc<AutomorphismMap>> {
        self.ctx.automorphisms().rotation(r, self.ctx.n())
    }

    /// KeyMult of the rotated digits, before ModDown.
    fn rotated_key_mult(&self, state: &HoistState, map: &AutomorphismMap, evk: &EvaluationKey) -> Result<(Polynomial, Polynomial)> {
        Self::expect_kind(evk, KeyKind::Rotation(map.galois()))?;
        let rotated: Vec<Polynomial> = state.digits.iter().map(|d| map.apply(d)).collect::<Result<_>>()?;
        self.ctx.counters().automorphism(rotated.len() as u64);
        self.key_mult(&rotated, evk, state.level)
    }

    /// Rotation of `x` by `r` slots using a shared ModUp result.
    pub fn rotate_hoisted(&self, x: &Ciphertext, state: &HoistState, r: i64, evk: &EvaluationKey) -> Result<Ciphertext> {
        self.check_ct(x)?;
        same_level(x.level, state.level)?;
        let map = self.rotation_map(r)?;
        if map.galois() == 1 {
            return Ok(x.clone());
        }
        let (kb, ka) = self.rotated_key_mult(state, &map, evk)?;
        let (sb, a) = self.mod_down(&kb, &ka)?;
        let b = map.apply(&x.b)?.ew_add(&sb)?;
        self.ctx.counters().automorphism(1);
        Ok(Ciphertext { b, a, ..x.clone() })
    }

    /// Rotation left by `r` slots: slot `j` of the result holds slot
    /// `j + r` of the input.
    pub fn hrot(&self, x: &Ciphertext, r: i64, keys: &KeySet) -> Result<Ciphertext> {
        let slots = self.ctx.slots() as i64;
        let r = r.rem_euclid(slots);
        if r == 0 {
            self.check_ct(x)?;
            return Ok(x.clone());
        }
        match self.min_ks_step {
            Some(step) => {
                let step = step.rem_euclid(slots);
                if step == 0 || r % step != 0 {
                    return Err(Error::InvalidInput(format!("rotation {r} is not a multiple of the step {step}")));
                }
                let evk = keys.rotation(step, self.ctx.n())?;
                let mut ct = x.clone();
                for _ in 0..r / step {
                    let state = self.hoist(&ct)?;
                    ct = self.rotate_hoisted(&ct, &state, step, evk)?;
                }
                Ok(ct)
            }
            None => {
                let evk = keys.rotation(r, self.ctx.n())?;
                let state = self.hoist(x)?;
                self.rotate_hoisted(x, &state, r, evk)
            }
        }
    }

    fn rotation_keys<'k>(&self, rs: impl Iterator<Item = i64>, keys: &'k KeySet) -> Result<Vec<Option<&'k EvaluationKey>>> {
        let slots = self.ctx.slots() as i64;
        rs.map(|r| if r.rem_euclid(slots) == 0 { Ok(None) } else { keys.rotation(r, self.ctx.n()).map(Some) })
            .collect()
    }

    /// All rotations of `x` by `rs`, sharing one ModUp.
    pub fn hoisted_rotations(&self, x: &Ciphertext, rs: &[i64], keys: &KeySet) -> Result<Vec<Ciphertext>> {
        self.check_ct(x)?;
        let evks = self.rotation_keys(rs.iter().copied(), keys)?;
        let state = self.hoist(x)?;
        rs.iter()
            .zip(evks)
            .map(|(&r, evk)| match evk {
                None => Ok(x.clone()),
                Some(evk) => self.rotate_hoisted(x, &state, r, evk),
            })
            .collect()
    }

    /// `sum_k pt_k * rot(x, r_k)` with one ModUp and one ModDown. The
    /// plaintexts must be encoded over the extended basis at the level of
    /// `x` and share one scale.
    pub fn hoisted_rotate_accumulate(&self, x: &Ciphertext, terms: &[(i64, &Plaintext)], keys: &KeySet) -> Result<Ciphertext> {
        self.check_ct(x)?;
        let x = self.settle(x)?;
        let Some((_, first)) = terms.first() else {
            return Err(Error::InvalidInput("no terms to accumulate".into()));
        };
        let level = x.level;
        let ext = self.ctx.ext_rows(level);
        for (_, pt) in terms {
            self.check_pt(pt, level)?;
            if pt.level != level || pt.poly.rows() != &ext {
                return Err(Error::InvalidInput("accumulation plaintexts must be extended at the ciphertext level".into()));
            }
            check_scales(&first.scale, &pt.scale)?;
        }
        let evks = self.rotation_keys(terms.iter().map(|t| t.0), keys)?;
        let needs_mod_up = evks.iter().any(Option::is_some);
        let state = if needs_mod_up { Some(self.hoist(&x)?) } else { None };
        let q = self.ctx.q_rows(level);
        let pc = self.p_consts(&q);
        let mut acc_b = self.ctx.zero(ext.clone(), Domain::Evaluation, true);
        let mut acc_a = self.ctx.zero(ext.clone(), Domain::Evaluation, true);
        for ((r, pt), evk) in terms.iter().zip(evks) {
            let (mut tb, mut ta, b) = match (evk, &state) {
                (Some(evk), Some(state)) => {
                    let map = self.rotation_map(*r)?;
                    let (kb, ka) = self.rotated_key_mult(state, &map, evk)?;
                    self.ctx.counters().automorphism(1);
                    (kb, Some(ka), map.apply(&x.b)?)
                }
                _ => (self.ctx.zero(ext.clone(), Domain::Evaluation, true), None, x.b.clone()),
            };
            // Terms without a rotation contribute P * a on the main primes.
            let pa = match ta {
                Some(_) => None,
                None => Some(pipeline(vec![Stage::MulConst(pc.clone())], &[&x.a], &q)?),
            };
            let pb = pipeline(vec![Stage::MulConst(pc.clone()), Stage::Add(1)], &[&b, &tb], &q)?;
            tb.copy_rows_from(&pb, &q)?;
            let mut ta = match (ta.take(), pa) {
                (Some(ka), _) => ka,
                (None, Some(pa)) => {
                    let mut t = self.ctx.zero(ext.clone(), Domain::Evaluation, true);
                    t.copy_rows_from(&pa, &q)?;
                    t
                }
                (None, None) => unreachable!("one of the two is set"),
            };
            tb.mul_assign(&pt.poly)?;
            ta.mul_assign(&pt.poly)?;
            acc_b.add_assign(&tb)?;
            acc_a.add_assign(&ta)?;
        }
        let (b, a) = self.mod_down(&acc_b, &acc_a)?;
        Ok(Ciphertext {
            b,
            a,
            scale: &x.scale * &first.scale,
            level,
            pending_rescale: self.policy == RescalePolicy::Lazy,
        })
    }
}

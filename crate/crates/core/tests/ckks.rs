use std::sync::Arc;

use ckks_core::ckks::{
    decrypt, scale_f64, CkksContext, CkksParams, Ciphertext, Encoder, Evaluator, KeyGenerator, KeySet, NoiseEstimator,
    Plaintext, RescalePolicy, SecretKey,
};
use ckks_core::error::Error;
use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    ctx: Arc<CkksContext>,
    enc: Encoder,
    kg: KeyGenerator,
    sk: SecretKey,
    keys: KeySet,
    noise: NoiseEstimator,
}

fn fixture(n: usize, l: usize, alpha: usize, delta_bits: u32, rotations: &[i64], seed: u64) -> Fixture {
    let ctx = CkksContext::new(CkksParams::new(n, l, alpha, delta_bits)).unwrap();
    let mut kg = KeyGenerator::new(ctx.clone(), seed);
    let sk = kg.secret_key().unwrap();
    let keys = kg.key_set(&sk, rotations).unwrap();
    Fixture { enc: Encoder::new(ctx.clone()), noise: NoiseEstimator::new(&ctx), ctx, kg, sk, keys }
}

fn toy(rotations: &[i64]) -> Fixture {
    fixture(64, 8, 2, 40, rotations, 7)
}

fn unit_disk(rng: &mut impl Rng, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| {
            let r: f64 = rng.random::<f64>().sqrt();
            let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            Complex64::from_polar(r, t)
        })
        .collect()
}

fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

impl Fixture {
    fn encrypt(&mut self, u: &[Complex64], level: usize) -> Ciphertext {
        let pt = self.enc.encode(u, level).unwrap();
        self.kg.encrypt_sk(&pt, &self.sk).unwrap()
    }

    fn decrypt(&self, ct: &Ciphertext) -> Vec<Complex64> {
        self.enc.decode(&decrypt(ct, &self.sk).unwrap()).unwrap()
    }

    fn delta(&self) -> f64 {
        2f64.powi(self.ctx.params().delta_bits as i32)
    }

    fn slots(&self) -> usize {
        self.ctx.slots()
    }
}

fn rotate(u: &[Complex64], r: i64) -> Vec<Complex64> {
    let n = u.len() as i64;
    (0..n).map(|j| u[(j + r).rem_euclid(n) as usize]).collect()
}

#[test]
fn fresh_encryption_of_zero_is_small() {
    let mut f = toy(&[]);
    let zero = vec![Complex64::new(0.0, 0.0); f.slots()];
    let ct = f.encrypt(&zero, 8);
    let pt = decrypt(&ct, &f.sk).unwrap();
    let mut poly = pt.poly().clone();
    f.ctx.intt(&mut poly).unwrap();
    let coeffs = ckks_core::ckks::centered_coefficients(&poly, 64.0);
    let sigma = f.ctx.params().sigma;
    assert!(coeffs.iter().all(|c| c.abs() <= 10.0 * sigma), "max {:?}", coeffs.iter().fold(0f64, |m, c| m.max(c.abs())));
    let err = max_err(&f.enc.decode(&pt).unwrap(), &zero);
    assert!(err < f.noise.fresh(f.delta()));
}

#[test]
fn public_key_encryption_roundtrip() {
    let mut f = toy(&[]);
    let pk = f.kg.public_key(&f.sk).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = unit_disk(&mut rng, f.slots());
    let pt = f.enc.encode(&u, 6).unwrap();
    let ct = f.kg.encrypt_pk(&pt, &pk).unwrap();
    assert_eq!(ct.level(), 6);
    assert!(max_err(&f.decrypt(&ct), &u) < f.noise.fresh_public(f.delta()));
}

#[test]
fn seeded_runs_are_identical() {
    let run = || {
        let mut f = toy(&[]);
        let u = unit_disk(&mut ChaCha8Rng::seed_from_u64(3), f.slots());
        let ct = f.encrypt(&u, 8);
        (f.sk.coeffs().to_vec(), ct)
    };
    let (s1, c1) = run();
    let (s2, c2) = run();
    assert_eq!(s1, s2);
    assert_eq!(c1, c2);
}

#[test]
fn secret_has_requested_hamming_weight() {
    let f = toy(&[]);
    assert_eq!(f.sk.hamming_weight(), f.ctx.params().hamming_weight);
    assert!(f.sk.coeffs().iter().all(|c| (-1..=1).contains(c)));
}

fn crt(rows: &[Vec<u32>], moduli: &[u32], col: usize) -> BigUint {
    let residues: Vec<u32> = rows.iter().map(|r| r[col]).collect();
    ckks_core::rns::crt_reconstruct(&residues, moduli)
}

fn negacyclic(a: &[BigInt], b: &[BigInt], m: &BigInt) -> Vec<BigInt> {
    let n = a.len();
    let mut out = vec![BigInt::zero(); n];
    for i in 0..n {
        for j in 0..n {
            let p = &a[i] * &b[j];
            if i + j < n {
                out[i + j] += p;
            } else {
                out[i + j - n] -= p;
            }
        }
    }
    out.into_iter().map(|x| x.mod_floor(m)).collect()
}

/// `b_k + a_k s - g_k s^2` reconstructed over `PQ` must be the small key
/// error, with `g_k = P * Qhat_k * (Qhat_k^-1 mod D_k)` built independently.
#[test]
fn evaluation_key_gadget_identity() {
    let f = fixture(16, 4, 2, 30, &[], 11);
    let basis = f.ctx.basis();
    let moduli = basis.moduli();
    let big = |v: u32| BigUint::from(v);
    let pq: BigUint = moduli.iter().map(|&q| big(q)).product();
    let q_all: BigUint = moduli[..4].iter().map(|&q| big(q)).product();
    let p: BigUint = moduli[4..].iter().map(|&q| big(q)).product();
    let pq_i = BigInt::from(pq.clone());
    let s: Vec<BigInt> = f.sk.coeffs().iter().map(|&c| BigInt::from(c)).collect();
    let s2 = negacyclic(&s, &s, &pq_i);
    let evk = f.keys.relin().unwrap();
    assert_eq!(evk.digits().len(), 2);
    let to_coeffs = |poly: &ckks_core::poly::Polynomial| -> Vec<BigInt> {
        let mut c = poly.clone();
        f.ctx.intt(&mut c).unwrap();
        let rows = c.to_canonical_rows();
        (0..16).map(|j| BigInt::from(crt(&rows, &moduli, j))).collect()
    };
    for (k, (b, a)) in evk.digits().iter().enumerate() {
        let d: BigUint = moduli[2 * k..2 * k + 2].iter().map(|&q| big(q)).product();
        let qhat = &q_all / &d;
        let inv = BigInt::from(qhat.clone()).extended_gcd(&BigInt::from(d.clone())).x.mod_floor(&BigInt::from(d.clone()));
        let g = BigInt::from(&p * &qhat) * inv;
        let bc = to_coeffs(b);
        let ac = to_coeffs(a);
        let as_ = negacyclic(&ac, &s, &pq_i);
        for j in 0..16 {
            let e = (&bc[j] + &as_[j] - &g * &s2[j]).mod_floor(&pq_i);
            let e = if e > &pq_i >> 1 { e - &pq_i } else { e };
            assert!(e.abs() <= BigInt::from(40), "digit {k} coefficient {j}: {e}");
        }
    }
}

#[test]
fn hadd_and_padd() {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = unit_disk(&mut rng, f.slots());
    let v = unit_disk(&mut rng, f.slots());
    let cu = f.encrypt(&u, 8);
    let cv = f.encrypt(&v, 8);
    let want: Vec<Complex64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
    let bound = 2.0 * f.noise.fresh(f.delta());
    assert!(max_err(&f.decrypt(&ev.hadd(&cu, &cv).unwrap()), &want) < bound);
    let zero = f.encrypt(&vec![Complex64::new(0.0, 0.0); f.slots()], 8);
    assert!(max_err(&f.decrypt(&ev.hadd(&cu, &zero).unwrap()), &u) < bound);
    let pv = f.enc.encode(&v, 8).unwrap();
    let bound = f.noise.fresh(f.delta()) + f.noise.encoding(f.delta());
    assert!(max_err(&f.decrypt(&ev.padd(&cu, &pv).unwrap()), &want) < bound);
    let diff: Vec<Complex64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    assert!(max_err(&f.decrypt(&ev.hsub(&cu, &cv).unwrap()), &diff) < 2.0 * f.noise.fresh(f.delta()));
}

#[test]
fn pmult_then_rescale() {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = unit_disk(&mut rng, f.slots());
    let v = unit_disk(&mut rng, f.slots());
    let cu = f.encrypt(&u, 8);
    let ones = f.enc.encode(&vec![Complex64::new(1.0, 0.0); f.slots()], 8).unwrap();
    let prod = ev.pmult(&cu, &ones).unwrap();
    let out = ev.rescale(&prod).unwrap();
    assert_eq!(out.level(), 6);
    assert!((scale_f64(out.scale()) / f.delta()).log2().abs() < 2.5);
    let fresh = f.noise.fresh(f.delta());
    let bound = f.noise.product(1.0, fresh, 1.0, f.noise.encoding(f.delta())) + f.noise.rounding(0, scale_f64(out.scale()));
    assert!(max_err(&f.decrypt(&out), &u) < bound);

    let pv = f.enc.encode(&v, 8).unwrap();
    let out = ev.rescale(&ev.pmult(&cu, &pv).unwrap()).unwrap();
    let want: Vec<Complex64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    assert!(max_err(&f.decrypt(&out), &want) < bound);
}

#[test]
fn rescale_drops_two_primes_each_time() {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let ct = f.encrypt(&[Complex64::new(0.5, 0.0)], 8);
    let once = ev.rescale(&ct).unwrap();
    let twice = ev.rescale(&once).unwrap();
    assert_eq!((once.level(), twice.level()), (6, 4));
    assert_eq!(twice.b().num_rows(), 4);
    let q = |i: usize| BigInt::from(f.ctx.basis().modulus(i));
    let expected = ct.scale() / num_rational::BigRational::from_integer(q(4) * q(5) * q(6) * q(7));
    assert_eq!(twice.scale(), &expected);
    let low = ev.rescale(&ev.rescale(&twice).unwrap()).unwrap_err();
    assert!(matches!(low, Error::LevelExhausted(2)));
}

/// Rescaled residues equal `round(x / (q_a q_b))` of the CRT value.
#[test]
fn rescale_matches_big_integer_oracle() {
    let mut f = fixture(16, 6, 2, 30, &[], 2);
    let ev = Evaluator::new(f.ctx.clone());
    let ct = f.encrypt(&unit_disk(&mut ChaCha8Rng::seed_from_u64(4), 8), 6);
    let out = ev.rescale(&ct).unwrap();
    let moduli = f.ctx.basis().moduli();
    let mut b = ct.b().clone();
    f.ctx.intt(&mut b).unwrap();
    let mut r = out.b().clone();
    f.ctx.intt(&mut r).unwrap();
    let (rows, got) = (b.to_canonical_rows(), r.to_canonical_rows());
    let d = BigUint::from(moduli[4]) * moduli[5];
    for j in 0..16 {
        let x = crt(&rows, &moduli[..6], j);
        let want = (x + (&d >> 1usize)) / &d;
        for i in 0..4 {
            let w: BigUint = &want % moduli[i];
            assert_eq!(w.to_u32().unwrap(), got[i][j]);
        }
    }
}

#[test]
fn key_switch_of_zero_decrypts_to_zero() {
    let f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let zero = f.ctx.zero(f.ctx.q_rows(8), ckks_core::poly::Domain::Evaluation, true);
    let (b, a) = ev.key_switch(&zero, f.keys.relin().unwrap(), 8).unwrap();
    let ct = Ciphertext::from_parts(b, a, ckks_core::ckks::scale_pow2(40), 8).unwrap();
    let out = f.decrypt(&ct);
    assert!(out.iter().all(|z| z.norm() < f.noise.key_switch(8, f.delta())));
}

fn hmult_case(policy: RescalePolicy) {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone()).with_policy(policy);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = unit_disk(&mut rng, f.slots());
    let v = unit_disk(&mut rng, f.slots());
    let cu = f.encrypt(&u, 8);
    let cv = f.encrypt(&v, 8);
    let mut out = ev.hmult(&cu, &cv, f.keys.relin().unwrap()).unwrap();
    if policy == RescalePolicy::Lazy {
        assert!(out.pending_rescale());
        assert_eq!(out.level(), 8);
        out = ev.settle(&out).unwrap();
    }
    assert_eq!(out.level(), 6);
    let want: Vec<Complex64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    let fresh = f.noise.fresh(f.delta());
    let s = scale_f64(out.scale());
    let bound = f.noise.product(1.0, fresh, 1.0, fresh)
        + f.noise.key_switch(8, f.delta() * f.delta())
        + f.noise.rounding(0, s);
    let err = max_err(&f.decrypt(&out), &want);
    assert!(err < bound, "{policy:?}: {err} >= {bound}");
}

#[test]
fn hmult_merged() {
    hmult_case(RescalePolicy::Merged);
}

#[test]
fn hmult_unmerged() {
    hmult_case(RescalePolicy::Unmerged);
}

#[test]
fn hmult_lazy() {
    hmult_case(RescalePolicy::Lazy);
}

#[test]
fn hmult_by_encrypted_ones_and_associativity() {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = unit_disk(&mut rng, f.slots());
    let v = unit_disk(&mut rng, f.slots());
    let w = unit_disk(&mut rng, f.slots());
    let relin = f.keys.relin().unwrap().clone();
    let cu = f.encrypt(&u, 8);
    let one = f.encrypt(&vec![Complex64::new(1.0, 0.0); f.slots()], 8);
    let fresh = f.noise.fresh(f.delta());
    let noise = f.noise.clone();
    let ks = noise.key_switch(8, f.delta() * f.delta());
    let step = |e1: f64, e2: f64, s: f64| noise.product(1.0, e1, 1.0, e2) + ks + noise.rounding(0, s);
    let out = ev.hmult(&cu, &one, &relin).unwrap();
    assert!(max_err(&f.decrypt(&out), &u) < step(fresh, fresh, scale_f64(out.scale())));

    let cv = f.encrypt(&v, 8);
    let cw = f.encrypt(&w, 6);
    let uv = ev.hmult(&cu, &cv, &relin).unwrap();
    let e1 = step(fresh, fresh, scale_f64(uv.scale()));
    let uvw = ev.hmult(&uv, &cw, &relin).unwrap();
    assert_eq!(uvw.level(), 4);
    let want: Vec<Complex64> = (0..f.slots()).map(|j| u[j] * v[j] * w[j]).collect();
    let bound = step(e1, fresh, scale_f64(uvw.scale()));
    assert!(max_err(&f.decrypt(&uvw), &want) < bound);
}

#[test]
fn hrot_rotates_slots() {
    let slots = 32i64;
    let rs = [1, 2, slots / 2, -3];
    let mut f = toy(&rs);
    let ev = Evaluator::new(f.ctx.clone());
    let u = unit_disk(&mut ChaCha8Rng::seed_from_u64(10), f.slots());
    let cu = f.encrypt(&u, 8);
    let bound = f.noise.fresh(f.delta()) + f.noise.key_switch(8, f.delta());
    for r in rs {
        let out = ev.hrot(&cu, r, &f.keys).unwrap();
        assert!(max_err(&f.decrypt(&out), &rotate(&u, r)) < bound, "r = {r}");
    }
    let same = ev.hrot(&cu, slots, &f.keys).unwrap();
    assert_eq!(same, cu);
    assert!(matches!(ev.hrot(&cu, 5, &f.keys), Err(Error::MissingRotationKey(5))));
}

#[test]
fn hrot_with_relin_key_is_rejected() {
    let mut f = toy(&[1]);
    let ev = Evaluator::new(f.ctx.clone());
    let cu = f.encrypt(&[Complex64::new(1.0, 0.0)], 8);
    let state = ev.hoist(&cu).unwrap();
    let err = ev.rotate_hoisted(&cu, &state, 1, f.keys.relin().unwrap()).unwrap_err();
    assert!(matches!(err, Error::KeyKindMismatch { .. }));
}

#[test]
fn min_ks_rotation_uses_the_step_key() {
    let mut f = toy(&[1]);
    let ev = Evaluator::new(f.ctx.clone()).with_min_ks(1);
    let u = unit_disk(&mut ChaCha8Rng::seed_from_u64(12), f.slots());
    let cu = f.encrypt(&u, 8);
    let before = f.ctx.counters().snapshot();
    let out = ev.hrot(&cu, 3, &f.keys).unwrap();
    let d = f.ctx.counters().snapshot() - before;
    assert_eq!(d.mod_up, 3);
    let bound = f.noise.fresh(f.delta()) + 3.0 * f.noise.key_switch(8, f.delta());
    assert!(max_err(&f.decrypt(&out), &rotate(&u, 3)) < bound);
    assert!(matches!(Evaluator::new(f.ctx.clone()).hrot(&cu, 3, &f.keys), Err(Error::MissingRotationKey(3))));
}

#[test]
fn singleton_hoisting_equals_hrot() {
    let mut f = toy(&[3]);
    let ev = Evaluator::new(f.ctx.clone());
    let cu = f.encrypt(&unit_disk(&mut ChaCha8Rng::seed_from_u64(13), 32), 8);
    let hoisted = ev.hoisted_rotations(&cu, &[3], &f.keys).unwrap();
    assert_eq!(hoisted.len(), 1);
    assert_eq!(hoisted[0], ev.hrot(&cu, 3, &f.keys).unwrap());
}

#[test]
fn hoisting_eight_rotations() {
    let rs: Vec<i64> = (1..=8).collect();
    let mut f = toy(&rs);
    let ev = Evaluator::new(f.ctx.clone());
    let u = unit_disk(&mut ChaCha8Rng::seed_from_u64(14), f.slots());
    let cu = f.encrypt(&u, 8);
    let c = f.ctx.counters();
    let t0 = c.snapshot();
    let hoisted = ev.hoisted_rotations(&cu, &rs, &f.keys).unwrap();
    let t1 = c.snapshot();
    let plain: Vec<Ciphertext> = rs.iter().map(|&r| ev.hrot(&cu, r, &f.keys).unwrap()).collect();
    let t2 = c.snapshot();
    assert_eq!((t1 - t0).mod_up, 1);
    assert_eq!((t2 - t1).mod_up, 8);
    assert_eq!((t1 - t0).mod_down, 8);
    let bound = f.noise.fresh(f.delta()) + f.noise.key_switch(8, f.delta());
    for ((h, p), &r) in hoisted.iter().zip(&plain).zip(&rs) {
        let want = rotate(&u, r);
        assert!(max_err(&f.decrypt(h), &want) < bound);
        assert!(max_err(&f.decrypt(p), &want) < bound);
    }
}

#[test]
fn hoisted_accumulate_single_mod_down() {
    let rs = [0i64, 1, 2, 5];
    let mut f = toy(&rs);
    let ev = Evaluator::new(f.ctx.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let u = unit_disk(&mut rng, f.slots());
    let cu = f.encrypt(&u, 8);
    let ws: Vec<Vec<Complex64>> = rs.iter().map(|_| unit_disk(&mut rng, f.slots())).collect();
    let scale = ckks_core::ckks::scale_pow2(40);
    let pts: Vec<Plaintext> = ws.iter().map(|w| f.enc.encode_with_scale(w, 8, &scale, true).unwrap()).collect();
    let terms: Vec<(i64, &Plaintext)> = rs.iter().copied().zip(pts.iter()).collect();
    let c = f.ctx.counters();
    let t0 = c.snapshot();
    let out = ev.rescale(&ev.hoisted_rotate_accumulate(&cu, &terms, &f.keys).unwrap()).unwrap();
    let d = c.snapshot() - t0;
    assert_eq!((d.mod_up, d.mod_down), (1, 1));
    let mut want = vec![Complex64::new(0.0, 0.0); f.slots()];
    for (w, &r) in ws.iter().zip(&rs) {
        for (acc, (x, y)) in want.iter_mut().zip(w.iter().zip(rotate(&u, r))) {
            *acc += x * y;
        }
    }
    let per = f.noise.product(1.0, f.noise.fresh(f.delta()), 1.0, f.noise.encoding(f.delta()));
    let bound = rs.len() as f64 * per
        + f.noise.key_switch(8, f.delta() * f.delta())
        + f.noise.rounding(0, scale_f64(out.scale()));
    assert!(max_err(&f.decrypt(&out), &want) < bound);

    let bare = f.enc.encode(&ws[0], 8).unwrap();
    let err = ev.hoisted_rotate_accumulate(&cu, &[(1, &bare)], &f.keys).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

/// Diagonal method: `M v = sum_i diag_i * rot(v, i)`, with the baby steps
/// sharing one ModUp.
#[test]
fn baby_step_matrix_vector_product() {
    let rs: Vec<i64> = (0..16).collect();
    let mut f = fixture(32, 8, 2, 40, &rs, 21);
    let ev = Evaluator::new(f.ctx.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let m: Vec<Vec<f64>> = (0..16).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let v: Vec<Complex64> = (0..16).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
    let cv = f.encrypt(&v, 8);
    let scale = ckks_core::ckks::scale_pow2(40);
    let diags: Vec<Plaintext> = (0..16)
        .map(|i| {
            let d: Vec<Complex64> = (0..16).map(|j| Complex64::new(m[j][(j + i) % 16], 0.0)).collect();
            f.enc.encode_with_scale(&d, 8, &scale, true).unwrap()
        })
        .collect();
    let terms: Vec<(i64, &Plaintext)> = rs.iter().copied().zip(diags.iter()).collect();
    let out = ev.rescale(&ev.hoisted_rotate_accumulate(&cv, &terms, &f.keys).unwrap()).unwrap();
    let want: Vec<Complex64> =
        (0..16).map(|j| Complex64::new((0..16).map(|k| m[j][k] * v[k].re).sum(), 0.0)).collect();
    let got = f.decrypt(&out);
    let err = max_err(&got, &want);
    let per = f.noise.product(1.0, f.noise.fresh(f.delta()), 1.0, f.noise.encoding(f.delta()));
    assert!(err < 16.0 * per + f.noise.key_switch(8, f.delta() * f.delta()) + 1e-6, "{err}");
}

#[test]
fn mismatched_operands_are_rejected() {
    let mut f = toy(&[]);
    let ev = Evaluator::new(f.ctx.clone());
    let a = f.encrypt(&[Complex64::new(1.0, 0.0)], 8);
    let b = f.encrypt(&[Complex64::new(1.0, 0.0)], 6);
    assert!(matches!(ev.hadd(&a, &b), Err(Error::LevelMismatch(8, 6))));
    let sq = ev.pmult(&a, &f.enc.encode(&[Complex64::new(1.0, 0.0)], 8).unwrap()).unwrap();
    assert!(matches!(ev.hadd(&a, &sq), Err(Error::ScaleMismatch(_))));
    let low = f.enc.encode(&[Complex64::new(1.0, 0.0)], 6).unwrap();
    assert!(matches!(ev.padd(&a, &low), Err(Error::LevelMismatch(6, 8))));
    let dropped = ev.drop_level(&a, 6).unwrap();
    assert!(ev.hadd(&dropped, &b).is_ok());
}

#[test]
fn hmult_pool_reaches_steady_state() {
    let params = CkksParams::new(16, 4, 2, 30).with_pool();
    let ctx = CkksContext::new(params).unwrap();
    let mut kg = KeyGenerator::new(ctx.clone(), 1);
    let sk = kg.secret_key().unwrap();
    let relin = kg.relin_key(&sk).unwrap();
    let enc = Encoder::new(ctx.clone());
    let ev = Evaluator::new(ctx.clone()).with_policy(RescalePolicy::Lazy);
    let x = kg.encrypt_sk(&enc.encode(&[Complex64::new(0.5, 0.0)], 4).unwrap(), &sk).unwrap();
    let pool = ctx.pool().unwrap().clone();
    let run = || {
        let out = ev.hmult(&x, &x, &relin).unwrap();
        drop(out);
    };
    for _ in 0..100 {
        run();
    }
    let warm = pool.stats();
    for _ in 0..10_000 {
        run();
    }
    let after = pool.stats();
    assert_eq!(after.fresh_allocations, warm.fresh_allocations);
    assert_eq!(after.total_live(), warm.total_live());
    assert_eq!(after.total_free(), warm.total_free());
    assert!(after.reuses > warm.reuses);
}

#[test]
fn ciphertext_parts_must_agree() {
    let mut f = toy(&[]);
    let ct = f.encrypt(&[Complex64::new(1.0, 0.0)], 8);
    let low = ct.b().select(&f.ctx.q_rows(6)).unwrap();
    let err = Ciphertext::from_parts(low, ct.a().clone(), ct.scale().clone(), 8).unwrap_err();
    assert!(matches!(err, Error::BasisMismatch));
    let mut coeff = ct.a().clone();
    f.ctx.intt(&mut coeff).unwrap();
    let err = Ciphertext::from_parts(ct.b().clone(), coeff, ct.scale().clone(), 8).unwrap_err();
    assert!(matches!(err, Error::DomainMismatch { .. }));
}

#[test]
fn serialization_roundtrips() {
    let mut f = toy(&[2]);
    let basis = f.ctx.basis().clone();
    let ev = Evaluator::new(f.ctx.clone()).with_policy(RescalePolicy::Lazy);
    let ct = f.encrypt(&unit_disk(&mut ChaCha8Rng::seed_from_u64(30), 32), 8);
    let ct = ev.hmult(&ct, &ct, f.keys.relin().unwrap()).unwrap();
    assert!(ct.pending_rescale());
    let back = Ciphertext::from_bytes(basis.clone(), &ct.to_bytes()).unwrap();
    assert_eq!(back, ct);
    assert!(back.pending_rescale());
    let pt = f.enc.encode(&[Complex64::new(0.25, -1.0)], 6).unwrap();
    assert_eq!(Plaintext::from_bytes(basis.clone(), &pt.to_bytes()).unwrap(), pt);
    let sk = SecretKey::from_bytes(basis.clone(), &f.sk.to_bytes()).unwrap();
    assert_eq!(sk.coeffs(), f.sk.coeffs());
    assert_eq!(sk.eval(), f.sk.eval());
    let pk = f.kg.public_key(&f.sk).unwrap();
    let pk2 = ckks_core::ckks::PublicKey::from_bytes(basis.clone(), &pk.to_bytes()).unwrap();
    assert_eq!((pk2.b(), pk2.a()), (pk.b(), pk.a()));
    for evk in [f.keys.relin().unwrap(), f.keys.rotation(2, 64).unwrap()] {
        let back = ckks_core::ckks::EvaluationKey::from_bytes(basis.clone(), &evk.to_bytes()).unwrap();
        assert_eq!(back.kind(), evk.kind());
        assert_eq!(back.digits(), evk.digits());
    }
    let mut bytes = ct.to_bytes();
    bytes.truncate(bytes.len() - 1);
    assert!(matches!(Ciphertext::from_bytes(basis.clone(), &bytes), Err(Error::Serialization(_))));
    let mut bytes = ct.to_bytes();
    bytes[4] = 9;
    assert!(matches!(Ciphertext::from_bytes(basis, &bytes), Err(Error::Serialization(_))));
}

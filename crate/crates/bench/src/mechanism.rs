use std::sync::Arc;

use ckks_core::ckks::{
    Ciphertext, CkksContext, CkksParams, Encoder, Evaluator, KeyGenerator, KeySet, Plaintext, SecretKey,
};
use ckks_core::counters::CounterSnapshot;
use ckks_core::poly::Polynomial;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::Stats;
use crate::BenchError;

/// Scheme-level operation to time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    HAdd,
    PAdd,
    PMult,
    Rescale,
    HMult,
    HRot,
    ModUp,
    ModDown,
}

impl Mechanism {
    pub const ALL: [Mechanism; 8] = [
        Mechanism::HAdd,
        Mechanism::PAdd,
        Mechanism::PMult,
        Mechanism::Rescale,
        Mechanism::HMult,
        Mechanism::HRot,
        Mechanism::ModUp,
        Mechanism::ModDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::HAdd => "hadd",
            Mechanism::PAdd => "padd",
            Mechanism::PMult => "pmult",
            Mechanism::Rescale => "rescale",
            Mechanism::HMult => "hmult",
            Mechanism::HRot => "hrot",
            Mechanism::ModUp => "modup",
            Mechanism::ModDown => "moddown",
        }
    }
}

/// Latency and per-call counters of one mechanism at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MechanismRow {
    pub mechanism: &'static str,
    pub level: usize,
    pub reps: usize,
    pub warmup: usize,
    pub median_ns: Option<u64>,
    pub min_ns: Option<u64>,
    pub p99_ns: Option<u64>,
    pub ntt: Option<u64>,
    pub intt: Option<u64>,
    pub bconv: Option<u64>,
    pub mod_up: Option<u64>,
    pub mod_down: Option<u64>,
    pub rescale: Option<u64>,
    pub merged_mod_down: Option<u64>,
    pub key_mult: Option<u64>,
    pub automorphism: Option<u64>,
    pub error: String,
}

impl MechanismRow {
    pub const HEADERS: [&'static str; 17] = [
        "mechanism", "level", "reps", "warmup", "median_ns", "min_ns", "p99_ns", "ntt", "intt", "bconv", "mod_up",
        "mod_down", "rescale", "merged_mod_down", "key_mult", "automorphism", "error",
    ];

    fn new(m: Mechanism, level: usize, reps: usize, warmup: usize, stats: Option<Stats>, c: Option<CounterSnapshot>) -> Self {
        MechanismRow {
            mechanism: m.name(),
            level,
            reps,
            warmup,
            median_ns: stats.map(|s| s.median_ns),
            min_ns: stats.map(|s| s.min_ns),
            p99_ns: stats.map(|s| s.p99_ns),
            ntt: c.map(|c| c.ntt),
            intt: c.map(|c| c.intt),
            bconv: c.map(|c| c.bconv),
            mod_up: c.map(|c| c.mod_up),
            mod_down: c.map(|c| c.mod_down),
            rescale: c.map(|c| c.rescale),
            merged_mod_down: c.map(|c| c.merged_mod_down),
            key_mult: c.map(|c| c.key_mult),
            automorphism: c.map(|c| c.automorphism),
            error: String::new(),
        }
    }

    /// Row for a mechanism that could not be set up or run.
    pub fn failed(m: Mechanism, level: usize, reps: usize, warmup: usize, error: String) -> Self {
        MechanismRow { error, ..Self::new(m, level, reps, warmup, None, None) }
    }

    /// The counters as a snapshot, if any call was timed.
    pub fn counters(&self) -> Option<CounterSnapshot> {
        Some(CounterSnapshot {
            ntt: self.ntt?,
            intt: self.intt?,
            bconv: self.bconv?,
            mod_up: self.mod_up?,
            mod_down: self.mod_down?,
            rescale: self.rescale?,
            merged_mod_down: self.merged_mod_down?,
            key_mult: self.key_mult?,
            automorphism: self.automorphism?,
        })
    }
}

/// Keys and inputs for timing mechanisms on one parameter set.
pub struct MechanismBench {
    ctx: Arc<CkksContext>,
    ev: Evaluator,
    enc: Encoder,
    kg: KeyGenerator,
    sk: SecretKey,
    keys: KeySet,
    rng: ChaCha8Rng,
}

impl MechanismBench {
    /// Builds the context and only the evaluation keys `mechanisms` need.
    pub fn new(params: CkksParams, seed: u64, mechanisms: &[Mechanism]) -> Result<Self, BenchError> {
        let ctx = CkksContext::new(params)?;
        let mut kg = KeyGenerator::new(ctx.clone(), seed);
        let sk = kg.secret_key()?;
        let mut keys = KeySet::default();
        if mechanisms.contains(&Mechanism::HMult) {
            keys.insert(kg.relin_key(&sk)?);
        }
        if mechanisms.contains(&Mechanism::HRot) {
            keys.insert(kg.rotation_key(&sk, 1)?);
        }
        Ok(MechanismBench {
            ev: Evaluator::new(ctx.clone()),
            enc: Encoder::new(ctx.clone()),
            ctx,
            kg,
            sk,
            keys,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        })
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    fn message(&mut self) -> Vec<Complex64> {
        let slots = self.ctx.slots();
        (0..slots)
            .map(|_| {
                let r: f64 = self.rng.random::<f64>().sqrt();
                Complex64::from_polar(r, self.rng.random::<f64>() * std::f64::consts::TAU)
            })
            .collect()
    }

    fn inputs(&mut self, level: usize) -> Result<(Ciphertext, Ciphertext, Plaintext), BenchError> {
        let (u, v) = (self.message(), self.message());
        let x = self.kg.encrypt_sk(&self.enc.encode(&u, level)?, &self.sk)?;
        let y = self.kg.encrypt_sk(&self.enc.encode(&v, level)?, &self.sk)?;
        let pt = self.enc.encode(&v, level)?;
        Ok((x, y, pt))
    }

    /// Times `reps` calls after `warmup` untimed ones. Counters are those of
    /// the first timed call; with no timed call both are empty.
    pub fn run(&mut self, m: Mechanism, level: usize, reps: usize, warmup: usize) -> Result<MechanismRow, BenchError> {
        self.ctx.check_level(level)?;
        let (x, y, pt) = self.inputs(level)?;
        let product = self.ev.pmult(&x, &pt)?;
        let (ev, keys) = (&self.ev, &self.keys);
        let raised = if m == Mechanism::ModDown { ev.mod_up(x.a(), level)?.swap_remove(0) } else { x.a().clone() };
        let call = |m: Mechanism| -> Result<(), BenchError> {
            match m {
                Mechanism::HAdd => drop(ev.hadd(&x, &y)?),
                Mechanism::PAdd => drop(ev.padd(&x, &pt)?),
                Mechanism::PMult => drop(ev.pmult(&x, &pt)?),
                Mechanism::Rescale => drop(ev.rescale(&product)?),
                Mechanism::HMult => drop(ev.hmult(&x, &y, keys.relin()?)?),
                Mechanism::HRot => drop(ev.hrot(&x, 1, keys)?),
                Mechanism::ModUp => drop::<Vec<Polynomial>>(ev.mod_up(x.a(), level)?),
                Mechanism::ModDown => drop(ev.mod_down(&raised, &raised)?),
            }
            Ok(())
        };
        for _ in 0..warmup {
            call(m)?;
        }
        let counters = self.ctx.counters();
        let mut samples = Vec::with_capacity(reps);
        let mut profile = None;
        for _ in 0..reps {
            let before = counters.snapshot();
            let t = std::time::Instant::now();
            call(m)?;
            samples.push(t.elapsed().as_nanos() as u64);
            if profile.is_none() {
                profile = Some(counters.snapshot() - before);
            }
        }
        Ok(MechanismRow::new(m, level, reps, warmup, Stats::from_samples(samples), profile))
    }
}

/// Sets up `params` and times `m` at `level`. Setup failures (including
/// allocation-size errors) are reported in the row, not raised.
pub fn run_mechanism_bench(
    params: CkksParams,
    m: Mechanism,
    level: usize,
    reps: usize,
    warmup: usize,
    seed: u64,
) -> MechanismRow {
    MechanismBench::new(params, seed, &[m])
        .and_then(|mut b| b.run(m, level, reps, warmup))
        .unwrap_or_else(|e| MechanismRow::failed(m, level, reps, warmup, e.to_string()))
}

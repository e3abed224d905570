use std::sync::Arc;

use crate::automorphism::AutomorphismCache;
use crate::bconv::{BConvTiling, BaseConverter};
use crate::counters::Counters;
use crate::error::{Error, Result};
use crate::ntt::{NttParams, NttPlan};
use crate::poly::{BufferPool, Domain, Polynomial, PrimeSet};
use crate::rns::RnsBasis;

/// Scheme parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CkksParams {
    pub n: usize,
    /// Main primes (two per scale group).
    pub l: usize,
    /// Auxiliary primes, also the gadget digit width.
    pub alpha: usize,
    pub delta_bits: u32,
    /// Nonzero coefficients of the ternary secret.
    pub hamming_weight: usize,
    /// Standard deviation of the rounded Gaussian error.
    pub sigma: f64,
    /// NTT plan; `None` picks the default for `n`.
    pub ntt: Option<NttParams>,
    pub tiling: BConvTiling,
    /// Back polynomial storage with a size-classed buffer pool.
    pub pooled: bool,
}

impl CkksParams {
    pub fn new(n: usize, l: usize, alpha: usize, delta_bits: u32) -> Self {
        Self {
            n,
            l,
            alpha,
            delta_bits,
            hamming_weight: 256.min(n / 2),
            sigma: 3.2,
            ntt: None,
            tiling: BConvTiling::default(),
            pooled: false,
        }
    }

    /// `N = 2^16, L = 54, alpha = 14, Delta = 2^48`.
    pub fn full_scale() -> Self {
        Self::new(1 << 16, 54, 14, 48)
    }

    pub fn with_hamming_weight(mut self, h: usize) -> Self {
        self.hamming_weight = h;
        self
    }

    pub fn with_pool(mut self) -> Self {
        self.pooled = true;
        self
    }
}

/// Basis, transforms, converters and counters shared by all scheme objects.
#[derive(Debug)]
pub struct CkksContext {
    params: CkksParams,
    basis: Arc<RnsBasis>,
    plan: Arc<NttPlan>,
    converter: BaseConverter,
    counters: Arc<Counters>,
    automorphisms: AutomorphismCache,
    pool: Option<Arc<BufferPool>>,
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Arc<Self>> {
        let basis = Arc::new(RnsBasis::generate(params.n, params.l, params.alpha, params.delta_bits)?);
        Self::with_basis(params, basis)
    }

    pub fn with_basis(params: CkksParams, basis: Arc<RnsBasis>) -> Result<Arc<Self>> {
        if basis.n() != params.n || basis.l() != params.l || basis.alpha() != params.alpha {
            return Err(Error::InvalidBasis("basis does not match the parameters".into()));
        }
        if params.hamming_weight == 0 || params.hamming_weight > params.n {
            return Err(Error::InvalidInput(format!("Hamming weight {} out of range", params.hamming_weight)));
        }
        if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid sigma {}", params.sigma)));
        }
        let ntt = params.ntt.unwrap_or_else(|| NttParams::default_for(params.n));
        let plan = Arc::new(NttPlan::new(basis.clone(), ntt)?);
        let counters = Arc::new(Counters::default());
        let converter = BaseConverter::new(plan.clone(), params.tiling, counters.clone())?;
        let pool = params.pooled.then(|| Arc::new(BufferPool::with_max_limbs(params.n, basis.len())));
        Ok(Arc::new(Self {
            params,
            basis,
            plan,
            converter,
            counters,
            automorphisms: AutomorphismCache::new(),
            pool,
        }))
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn slots(&self) -> usize {
        self.params.n / 2
    }

    pub fn max_level(&self) -> usize {
        self.params.l
    }

    pub fn plan(&self) -> &Arc<NttPlan> {
        &self.plan
    }

    pub fn converter(&self) -> &BaseConverter {
        &self.converter
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.counters
    }

    pub fn automorphisms(&self) -> &AutomorphismCache {
        &self.automorphisms
    }

    pub fn pool(&self) -> Option<&Arc<BufferPool>> {
        self.pool.as_ref()
    }

    /// Main primes `0..level`.
    pub fn q_rows(&self, level: usize) -> PrimeSet {
        PrimeSet::prefix(level)
    }

    /// Main primes `0..level` plus all auxiliary primes.
    pub fn ext_rows(&self, level: usize) -> PrimeSet {
        PrimeSet::extended(&self.basis, level)
    }

    pub fn p_rows(&self) -> PrimeSet {
        PrimeSet::from(self.basis.aux_indices())
    }

    /// The scale group dropped by a rescale from `level`.
    pub fn top_group(&self, level: usize) -> PrimeSet {
        PrimeSet::new(vec![level - 2, level - 1])
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level < 2 || level > self.params.l || level % 2 != 0 {
            return Err(Error::LevelOutOfRange { level, max: self.params.l });
        }
        Ok(())
    }

    pub fn zero(&self, rows: PrimeSet, domain: Domain, mont: bool) -> Polynomial {
        Polynomial::zero_in(self.basis.clone(), rows, domain, mont, self.pool.as_ref())
    }

    /// Coefficient-domain polynomial from signed coefficients.
    pub fn from_signed(&self, rows: PrimeSet, coeffs: &[i64]) -> Result<Polynomial> {
        if coeffs.len() != self.n() {
            return Err(Error::InvalidInput(format!("expected {} coefficients, got {}", self.n(), coeffs.len())));
        }
        let mut p = self.zero(rows, Domain::Coefficient, false);
        p.fill_signed(coeffs);
        Ok(p)
    }

    /// Forward NTT, counted.
    pub fn ntt(&self, p: &mut Polynomial) -> Result<()> {
        self.plan.forward(p)?;
        self.counters.ntt(1);
        Ok(())
    }

    /// Inverse NTT, counted.
    pub fn intt(&self, p: &mut Polynomial) -> Result<()> {
        self.plan.inverse(p)?;
        self.counters.intt(1);
        Ok(())
    }
}

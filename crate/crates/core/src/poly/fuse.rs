//! Fused element-wise pipelines.
//!
//! A pipeline keeps one `i64` accumulator per element, seeded from input 0,
//! and applies its stages in order. The fused executor runs all stages on a
//! small block of columns before moving on, so each input is read once and
//! the output written once. [`execute_sequential`] materializes every
//! intermediate array instead and serves as the reference.
//!
//! Lazy budgets: `Add`, `Sub` and `AddConst` fold the accumulator back into
//! `(-q, q)`. `LazyAdd`, `MulAcc` and `MulSub` do not; with residues in
//! `(-q, q)` and `q < 2^30` an `i64` accumulator absorbs more than `2^32` such
//! terms, far beyond any pipeline built here. Multiplicative stages first
//! narrow the accumulator into `(-q, q)`.

use std::sync::Arc;

use rayon::prelude::*;

use super::{product_form, Polynomial, PrimeSet};
use crate::error::{Error, Result};
use crate::modarith::{mont_mul, PrimeContext};

const BLOCK: usize = 256;

#[derive(Clone, Debug)]
pub enum Stage {
    /// `acc + x_k`, folded.
    Add(usize),
    /// `acc - x_k`, folded.
    Sub(usize),
    /// `acc + x_k` without reduction.
    LazyAdd(usize),
    /// `acc * x_k` (Montgomery).
    Mul(usize),
    /// Multiply by a per-row Montgomery-form constant.
    MulConst(Arc<[i32]>),
    /// Add a per-row constant given in the accumulator's form, folded.
    AddConst(Arc<[i32]>),
    /// `acc + x_i * x_j` without reduction of the sum.
    MulAcc(usize, usize),
    /// `acc - x_i * x_j` without reduction of the sum.
    MulSub(usize, usize),
    Neg,
    /// Canonical representative in `[0, q)`.
    Correct,
    /// Column permutation `out[k] = acc[perm[k]]`; not element-aligned.
    Gather(Arc<[usize]>),
}

#[inline(always)]
fn fold(v: i64, q: i64) -> i64 {
    if v >= q || v <= -q {
        v % q
    } else {
        v
    }
}

/// Folds like [`crate::modarith::reduce_lazy2`], so folded stages agree bit for bit with the
/// unfused element-wise operations.
#[inline(always)]
fn fold_add(v: i64, q: i64) -> i64 {
    let v = if v <= -2 * q || v >= 2 * q { v % q } else { v };
    let v = if v < 0 { v + q } else { v };
    if v >= q {
        v - q
    } else {
        v
    }
}

#[inline(always)]
fn mul(a: i64, b: i32, ctx: &PrimeContext) -> i64 {
    mont_mul(fold(a, ctx.q_i32() as i64) as i32, b, ctx) as i64
}

/// Validated pipeline of element-aligned stages.
#[derive(Clone, Debug)]
pub struct FusedPipeline {
    stages: Vec<Stage>,
}

fn max_input(stages: &[Stage]) -> usize {
    stages
        .iter()
        .map(|s| match *s {
            Stage::Add(k) | Stage::Sub(k) | Stage::LazyAdd(k) | Stage::Mul(k) => k,
            Stage::MulAcc(i, j) | Stage::MulSub(i, j) => i.max(j),
            _ => 0,
        })
        .max()
        .unwrap_or(0)
}

/// Checks inputs and returns the output Montgomery flag.
fn check_inputs(stages: &[Stage], inputs: &[&Polynomial], rows: &PrimeSet) -> Result<bool> {
    let Some(first) = inputs.first() else {
        return Err(Error::InvalidInput("a pipeline needs at least one input".into()));
    };
    if max_input(stages) >= inputs.len() {
        return Err(Error::InvalidInput("pipeline references a missing input".into()));
    }
    for p in inputs {
        if p.domain() != first.domain() {
            return Err(Error::DomainMismatch { expected: first.domain(), found: p.domain() });
        }
        if !rows.is_subset_of(p.rows()) || p.basis().moduli() != first.basis().moduli() {
            return Err(Error::BasisMismatch);
        }
    }
    let mut form = first.is_mont();
    for s in stages {
        match s {
            Stage::Add(k) | Stage::Sub(k) | Stage::LazyAdd(k) => {
                if inputs[*k].is_mont() != form {
                    return Err(Error::FormMismatch("addition requires equal Montgomery flags"));
                }
            }
            Stage::Mul(k) => form = product_form(form, inputs[*k].is_mont())?,
            Stage::MulAcc(i, j) | Stage::MulSub(i, j) => {
                if product_form(inputs[*i].is_mont(), inputs[*j].is_mont())? != form {
                    return Err(Error::FormMismatch("accumulated product has a different form"));
                }
            }
            Stage::MulConst(c) | Stage::AddConst(c) => {
                if c.len() != rows.len() {
                    return Err(Error::InvalidInput("one constant per output row required".into()));
                }
            }
            Stage::Gather(p) => {
                if p.len() != first.n() {
                    return Err(Error::InvalidInput("gather permutation has the wrong length".into()));
                }
            }
            Stage::Neg | Stage::Correct => {}
        }
    }
    Ok(form)
}

/// Applies one stage to `acc` for columns `start..start + acc.len()` of row `r`.
#[inline(always)]
fn apply(stage: &Stage, acc: &mut [i64], xs: &[&[i32]], start: usize, r: usize, ctx: &PrimeContext) {
    let q = ctx.q_i32() as i64;
    let end = start + acc.len();
    match stage {
        Stage::Add(k) => acc.iter_mut().zip(&xs[*k][start..end]).for_each(|(a, &x)| *a = fold_add(*a + x as i64, q)),
        Stage::Sub(k) => acc.iter_mut().zip(&xs[*k][start..end]).for_each(|(a, &x)| *a = fold_add(*a - x as i64, q)),
        Stage::LazyAdd(k) => acc.iter_mut().zip(&xs[*k][start..end]).for_each(|(a, &x)| *a += x as i64),
        Stage::Mul(k) => acc.iter_mut().zip(&xs[*k][start..end]).for_each(|(a, &x)| *a = mul(*a, x, ctx)),
        Stage::MulConst(c) => {
            let c = c[r];
            acc.iter_mut().for_each(|a| *a = mul(*a, c, ctx));
        }
        Stage::AddConst(c) => {
            let c = c[r] as i64;
            acc.iter_mut().for_each(|a| *a = fold_add(*a + c, q));
        }
        Stage::MulAcc(i, j) => acc
            .iter_mut()
            .zip(xs[*i][start..end].iter().zip(&xs[*j][start..end]))
            .for_each(|(a, (&x, &y))| *a += mont_mul(x, y, ctx) as i64),
        Stage::MulSub(i, j) => acc
            .iter_mut()
            .zip(xs[*i][start..end].iter().zip(&xs[*j][start..end]))
            .for_each(|(a, (&x, &y))| *a -= mont_mul(x, y, ctx) as i64),
        Stage::Neg => acc.iter_mut().for_each(|a| *a = -*a),
        Stage::Correct => acc.iter_mut().for_each(|a| *a = a.rem_euclid(q)),
        Stage::Gather(_) => unreachable!("gather is rejected or handled by the caller"),
    }
}

impl FusedPipeline {
    /// Builds a pipeline, rejecting stages that are not element-aligned.
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if let Some(i) = stages.iter().position(|s| matches!(s, Stage::Gather(_))) {
            return Err(Error::NotElementAligned(i));
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Runs the pipeline on the rows `rows` of every input.
    pub fn execute(&self, inputs: &[&Polynomial], rows: &PrimeSet) -> Result<Polynomial> {
        let form = check_inputs(&self.stages, inputs, rows)?;
        let first = inputs[0];
        let mut out = first.zero_like(rows.clone(), first.domain(), form);
        self.run_into(&mut out, inputs)?;
        Ok(out)
    }

    /// Runs the pipeline on the rows of `out`, overwriting it.
    pub fn execute_into(&self, out: &mut Polynomial, inputs: &[&Polynomial]) -> Result<()> {
        let form = check_inputs(&self.stages, inputs, out.rows())?;
        out.set_mont(form);
        out.set_domain(inputs[0].domain());
        self.run_into(out, inputs)
    }

    fn run_into(&self, out: &mut Polynomial, inputs: &[&Polynomial]) -> Result<()> {
        let rows = out.rows().clone();
        let views: Vec<Vec<&[i32]>> = inputs.iter().map(|p| p.view(&rows)).collect::<Result<_>>()?;
        let n = out.n();
        let basis = out.basis().clone();
        let stages = &self.stages;
        out.data_mut().par_chunks_mut(n).enumerate().for_each(|(r, dst)| {
            let ctx = basis.prime(rows.indices()[r]);
            let q = ctx.q_i32() as i64;
            let xs: Vec<&[i32]> = views.iter().map(|v| v[r]).collect();
            let mut acc = [0i64; BLOCK];
            for start in (0..n).step_by(BLOCK) {
                let len = BLOCK.min(n - start);
                let acc = &mut acc[..len];
                acc.iter_mut().zip(&xs[0][start..start + len]).for_each(|(a, &x)| *a = x as i64);
                for s in stages {
                    apply(s, acc, &xs, start, r, ctx);
                }
                for (d, &a) in dst[start..start + len].iter_mut().zip(acc.iter()) {
                    *d = fold(a, q) as i32;
                }
            }
        });
        Ok(())
    }
}

/// Reference executor: applies each stage to the whole array before the
/// next. Also accepts `Gather`.
pub fn execute_sequential(stages: &[Stage], inputs: &[&Polynomial], rows: &PrimeSet) -> Result<Polynomial> {
    let form = check_inputs(stages, inputs, rows)?;
    let first = inputs[0];
    let mut out = first.zero_like(rows.clone(), first.domain(), form);
    let views: Vec<Vec<&[i32]>> = inputs.iter().map(|p| p.view(rows)).collect::<Result<_>>()?;
    for r in 0..rows.len() {
        let ctx = *first.basis().prime(rows.indices()[r]);
        let xs: Vec<&[i32]> = views.iter().map(|v| v[r]).collect();
        let mut acc: Vec<i64> = xs[0].iter().map(|&x| x as i64).collect();
        for s in stages {
            match s {
                Stage::Gather(perm) => acc = perm.iter().map(|&k| acc[k]).collect(),
                _ => apply(s, &mut acc, &xs, 0, r, &ctx),
            }
        }
        let q = ctx.q_i32() as i64;
        for (d, a) in out.row_mut(r).iter_mut().zip(acc) {
            *d = fold(a, q) as i32;
        }
    }
    Ok(out)
}

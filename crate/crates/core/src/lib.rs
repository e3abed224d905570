//! 32-bit RNS-CKKS homomorphic encryption on the CPU.
//!
//! Layers, bottom up: [`modarith`] (signed Montgomery arithmetic), [`rns`]
//! (prime bases), [`poly`] (residue matrices and fused element-wise passes),
//! [`ntt`], [`bconv`], [`automorphism`], and the scheme itself in [`ckks`].

pub mod automorphism;
pub mod bconv;
pub mod ckks;
pub mod counters;
pub mod error;
pub mod modarith;
pub mod ntt;
pub mod poly;
pub mod rns;

pub use error::{Error, Result};

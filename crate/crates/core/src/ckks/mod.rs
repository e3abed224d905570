//! Approximate homomorphic encryption over the RNS substrate.

mod ciphertext;
mod context;
mod encoding;
mod evaluator;
mod keys;
mod noise;
mod serialize;

pub use ciphertext::{check_scales, log2_scale, scale_f64, scale_pow2, Ciphertext, Plaintext, Scale, SCALE_TOLERANCE};
pub use context::{CkksContext, CkksParams};
pub use encoding::{centered_coefficients, Encoder};
pub use noise::{NoiseEstimator, TAIL};
pub use evaluator::{Evaluator, HoistState, RescalePolicy};
pub use keys::{
    decrypt, sample_gaussian, sample_ternary, sample_zo, EvaluationKey, KeyGenerator, KeyKind, KeySet, PublicKey,
    SecretKey,
};

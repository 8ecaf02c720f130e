//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! The kernel set is exactly what the surrogate's forward pass and training
//! loop need: matmul, elementwise nonlinearities, layer normalization,
//! row gather/scatter, and segment-wise softmax/sum for per-neighborhood
//! attention. Every op records onto a [`Tape`]; [`Tape::grad`] replays the
//! tape in reverse and returns exact vector-Jacobian products.
//!
//! Summation order inside every kernel is fixed (ascending index), so a
//! given tape produces bit-identical values and gradients on every run.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("grad target is not a scalar (shape {rows}x{cols})")]
    NotScalar { rows: usize, cols: usize },
    #[error("segment ids must be sorted and contiguous from 0")]
    BadSegments,
}

/// Sinusoidal embedding of a time step: `dim/2` geometric frequencies,
/// interleaved sin/cos. Deterministic in `dt`; used as a constant input
/// feature, so it lives outside the tape.
pub fn sinusoid_embed<T: Scalar>(dt: T, dim: usize) -> Vec<T> {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let exponent = if half > 1 {
            k as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = T::from_f64(10_000f64.powf(-exponent));
        let arg = dt * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

//! Dense matrix arithmetic, reverse-mode differentiation and Adam.

mod adam;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use sparse::CsrMatrix;
pub use tape::{Elementwise, Gradients, Pool, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Cosine similarity of two vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            op: "cosine",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

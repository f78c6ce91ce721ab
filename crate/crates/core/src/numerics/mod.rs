//! Dense tensors and a tape-based reverse-mode differentiator.
//!
//! Everything is `f64`. The op set is deliberately small: exactly what the
//! transformer, the adapters and the losses need. Shapes must match exactly;
//! the only implicit expansion is the per-column gain of [`Graph::rms_norm`].

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;

/// Untracked softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> crate::Result<Tensor> {
    let mut g = Graph::new();
    let v = g.leaf_ref(x, false);
    let y = g.softmax(v, axis)?;
    Ok(g.value(y).clone())
}

/// Untracked row-wise RMS norm.
pub fn rms_norm(x: &Tensor, gain: &Tensor, eps: f64) -> crate::Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.leaf_ref(x, false);
    let gv = g.leaf_ref(gain, false);
    let y = g.rms_norm(xv, gv, eps)?;
    Ok(g.value(y).clone())
}

/// Untracked SiLU.
pub fn silu(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.leaf_ref(x, false);
    let y = g.silu(v);
    g.value(y).clone()
}

//! Dense f64 matrices and a Wengert-list reverse-mode tape.
//!
//! Accumulation order is fixed (left to right over the inner index), so
//! every operation is bit-reproducible across runs and thread counts.

pub mod tape;
pub mod tensor;

pub use tape::{GradTape, NodeId};
pub use tensor::Tensor2;

/// Gaussian error linear unit, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

//! Dense tensor kernels, a deterministic seedable random source,
//! differentiable layers with hand-written gradients, the Adam optimizer, and
//! finite-difference oracles.

pub mod adam;
pub mod dense;
pub mod finite_diff;
pub mod prng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, DenseLayer, Mlp};
pub use finite_diff::{finite_diff_grad, finite_diff_jacobian, slogdet};
pub use prng::Prng;
pub use tensor::{argmax, l2_dist, linf_dist, log_softmax, Tensor};

/// Tensor of i.i.d. N(0,1) draws; deterministic given seed and call order.
pub fn standard_normal_tensor(shape: Vec<usize>, prng: &mut Prng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut t = Tensor::zeros(shape);
    debug_assert_eq!(t.len(), n);
    prng.fill_standard_normal(t.data_mut());
    t
}

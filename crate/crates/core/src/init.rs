//! Weight initialisers.

use num_traits::Float;

use crate::{Rng, Scalar, Tensor};

/// He (fan-in) normal: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = Float::sqrt(2.0 / fan_in.max(1) as f64);
    Tensor::randn(shape, std, rng)
}

//! A small reverse-mode tensor engine and the feature-enhancement modules
//! built on it: style recalibration, squeeze-excitation gating and recurrent
//! criss-cross attention inside a residual image classifier.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the file
//! system, the clock or the command line lives in the `fetr` crate.
//!
//! * [`tensor`] and [`autograd`] provide dense tensors and a dynamic tape.
//! * [`attention`] holds the style recalibration, squeeze-excitation and
//!   criss-cross attention modules.
//! * [`backbone`] assembles them into a residual classifier.
//! * [`train`] and [`metrics`] cover the optimisation loop and evaluation.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod data;
mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod params;
mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Mode, Session, Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamKind, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

/// Deterministic generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

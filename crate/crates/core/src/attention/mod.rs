//! Feature-enhancement modules: style recalibration, squeeze-excitation
//! gating and recurrent criss-cross attention.

mod dca;
mod se;
mod stylerm;

pub use dca::{Dca, Projection, NONLOCAL_MAX_POSITIONS};
pub use se::SqueezeExcite;
pub use stylerm::StyleRm;

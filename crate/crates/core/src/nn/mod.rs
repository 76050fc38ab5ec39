//! Minimal neural-network kit: parameter registry, layers with explicit
//! forward/backward passes, and Adam. Everything is f64 and deterministic
//! given a seeded stream.

pub mod adam;
pub mod attention;
pub mod conv;
pub mod norm;
pub mod ops;
pub mod params;

pub use adam::Adam;
pub use attention::AttentionBlock;
pub use conv::{Conv2d, Linear};
pub use norm::{GroupNorm, NORM_EPS};
pub use params::{Grads, Init, ParamId, ParamSet};

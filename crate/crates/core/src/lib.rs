pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod label;
pub mod rng;
pub mod nn;
pub mod transform;

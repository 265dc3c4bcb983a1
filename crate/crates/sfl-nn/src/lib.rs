//! Minimal deterministic neural-network engine: tensors, splittable layer
//! units, reverse-mode differentiation (including the second-order path for
//! gradient matching), losses, optimizers and LR schedules.
//!
//! Everything runs on the CPU in f32; an f64 instantiation exists for the
//! finite-difference oracle tests. All randomness flows through named
//! streams of a counter-based PRNG, so runs are reproducible bit-for-bit.

pub mod checkpoint;
pub mod error;
pub mod gen;
pub mod loss;
pub mod net;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod second_order;
pub mod tensor;
pub mod unit;

pub use error::NnError;
pub use rng::Rng;
pub use tensor::{Real, Tensor};
pub use unit::{ParamSet, UnitParams, UnitSpec};

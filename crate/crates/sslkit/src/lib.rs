//! Desk-scale representation learning for class-imbalanced image sets.
//!
//! Everything is CPU-only, dependency-light, and bit-deterministic for a
//! fixed seed: gradients are derived and implemented by hand, random
//! streams are fanned out from a single root seed, and parallel work is
//! reduced in a fixed order.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numeric;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

//! Adaptive LED-array illumination for microscopy classification.
//!
//! [`optics`] renders per-LED image stacks of thin samples, [`datasets`]
//! persists and splits them, [`agent`] is the recurrent policy that picks
//! illumination patterns and decides when to stop, and [`training`] holds
//! the exit/stay reward scheme, the single-shot baseline and evaluation.

pub mod agent;
pub mod datasets;
pub mod error;
pub mod numerics;
pub mod optics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

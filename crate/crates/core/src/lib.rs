//! Discrete motion tokenization, plan-then-infill co-speech motion
//! generation, and audio-motion synchronization metrics.

pub mod dsp;
pub mod error;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod plan;
pub mod rvq;
pub mod synth;

pub use error::{Error, Result};

//! Dimensional speech emotion recognition pipeline.
//!
//! Extracts per-utterance high-level statistical acoustic features (means
//! and standard deviations of frame-level low-level descriptors plus a
//! silence-ratio feature), trains a deep multilayer-perceptron regressor
//! with three output heads (valence, arousal, dominance), and evaluates
//! with the concordance correlation coefficient under speaker-dependent,
//! leave-one-session-out, and mixed-corpus protocols.

pub mod data;
pub mod dsp;
pub mod error;
pub mod features;
pub mod harness;
pub mod nn;
pub mod objectives;

pub use error::{Error, Result};

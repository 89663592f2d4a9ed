//! Dog face identification toolkit: classical recognizers, random-weight
//! convnet features with architecture search, deep-feature SVMs, and the
//! cross-validation protocol that compares them.

pub mod archsearch;
pub mod classical;
pub mod cli;
pub mod container;
pub mod deepfeat;
pub mod error;
pub mod evalkit;
pub mod imaging;
pub mod numerics;
pub mod randconv;
pub mod recognizer;
pub mod sparse;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};

/// Score given to classes with no training samples; below every real score.
pub const ABSENT_SCORE: f64 = f64::MIN;

//! Few-shot sequence tagging with a prototypical amortized CRF.
//!
//! Emission scores come from dot products between query tokens and label
//! prototypes averaged over the support set. Transition scores are Gaussian
//! random variables whose means and variances are produced from the same
//! prototypes, and training minimises a Monte-Carlo estimate of the CRF
//! negative log-likelihood.

pub mod cli;
pub mod crf;
pub mod emission;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod labelspace;
pub mod numeric;
pub mod trainer;
pub mod transition;

pub use error::{Error, Result};

/// Random stream used everywhere a seed is accepted.
pub type ChaRng = rand_chacha::ChaCha8Rng;

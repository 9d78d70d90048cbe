//! Noise-amplified diffusion defense on toy Gaussian-mixture data.
//!
//! The crate covers the full desk-scale pipeline: time grids with the
//! variance-exploding schedule `sigma(t) = t`, exact mixture scores and
//! denoisers, Euler/Heun probability-flow solvers, ring-corrected
//! purification with stochastic churn, PGD-style attacks against a smooth
//! Bayes classifier, and Monte Carlo verification of the return-probability
//! bounds. The `harness` module ties everything into reproducible,
//! config-driven experiments.

pub mod adversarial;
pub mod denoiser;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod purify;
pub mod schedule;
pub mod solver;
pub mod stats;
pub mod theory;
pub(crate) mod vecmath;

pub use error::{Error, Result};

/// A point in R^d, the object that gets diffused, purified and attacked.
pub type Sample = Vec<f64>;

/// Derive a per-trial RNG seed from a master seed.
///
/// SplitMix64 over `master ^ index` so that serial and parallel execution
/// orders produce identical per-trial streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

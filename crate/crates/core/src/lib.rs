//! Statistical machinery for deciding, from samples alone, whether two text
//! generation sources serve the same completion distribution.
//!
//! The pieces:
//!
//! - [`corpus`]: prompts, completions, pools, deterministic with-replacement
//!   sampling, and the line-delimited JSON dataset format.
//! - [`kernels`]: unit-norm string kernels (position match, exact match,
//!   all-substrings, edit distance) with the prompt gate.
//! - [`mmd`]: the two-sample kernel distance estimator, exact population
//!   values for small explicit distributions, and bootstrap effect sizes.
//! - [`classical`]: multinomial two-sample statistics and goodness-of-fit
//!   statistics against a probability oracle.
//! - [`testing`]: null simulation, permutation relabeling, p-values, and the
//!   calibrated test entry points, with content-addressed null caching.
//! - [`audit`]: the composite two-reference audit protocol with repetition,
//!   fail thresholds, and family-wise combination across tasks.
//! - [`power`]: Monte-Carlo rejection-rate harnesses, length sweeps,
//!   distance matrices, and synthetic pool generators.
//!
//! Everything stochastic takes an explicit [`rng::RandomStream`]; results
//! are pure functions of the seed regardless of worker count. The `parallel`
//! feature (default) runs trial loops and kernel matrix assembly on rayon; a
//! build without it computes identical results sequentially.

pub mod audit;
pub mod classical;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod kernels;
pub mod mmd;
pub mod power;
pub mod rng;
pub mod testing;

pub use error::{Error, Result};

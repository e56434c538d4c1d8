//! Batch Bayesian optimization of extended Thompson sampling (BOTS).
//!
//! An extended Thompson sampling (xTS) bandit selects actions by a utility
//! that adds a per-action bias term to the sampled immediate reward. The bias
//! terms (and optionally the reward-noise variances) are tuned across rounds
//! of parallel episodes by Gaussian-process Bayesian optimization, either
//! globally (qEI over the full box) or locally (a single TuRBO trust region).
//!
//! The crate provides:
//!
//! - [`reward`]: conjugate Bayesian linear-Gaussian reward models per action.
//! - [`policy`]: the xTS policy, episode runner and micro-randomized trials.
//! - [`env`]: the adaptive-intervention (JITAI) simulator, three diagnostic
//!   tabular MDPs and a value-iteration oracle behind one episodic interface.
//! - [`gp`]: a Matérn-5/2 Gaussian-process surrogate with MAP hyperparameter
//!   fitting under Gamma hyperpriors.
//! - [`sobol`]: a seedable digital-shifted Sobol sequence.
//! - [`acquisition`]: Monte-Carlo batch expected improvement (qEI) and
//!   trust-region management.
//! - [`driver`]: the outer optimization loop over episode batches.
//! - [`baselines`]: tabular Q-learning and the standard-TS baselines.

pub mod acquisition;
pub mod baselines;
pub mod driver;
pub mod env;
pub mod error;
pub mod gp;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod sobol;

pub use error::{Error, Result};

//! Episodic environments behind one interface.
//!
//! Environments own their randomness (seeded at construction), so an
//! episode is a pure function of (environment seed, policy decisions).

use nalgebra::DVector;

use crate::error::Result;

mod jitai;
mod mdp;

pub use jitai::{JitaiConfig, JitaiEnv, JitaiState, ObsMode};
pub use mdp::{mdp1, mdp2, mdp3, value_iteration, MdpEnv, StartDist, TabularMdp};

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct Step {
    /// Observation for the next decision point.
    pub features: DVector<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    /// Starts a fresh episode and returns the initial observation.
    fn reset(&mut self) -> DVector<f64>;

    /// Applies one action.
    fn step(&mut self, action: usize) -> Result<Step>;

    fn n_actions(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Maximum number of steps per episode.
    fn horizon(&self) -> usize;
}

/// Constructor for per-episode environment instances, keyed by seed.
pub type EnvFactory<'a> = &'a (dyn Fn(u64) -> Box<dyn Environment> + Sync);

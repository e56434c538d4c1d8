//! Small deterministic tabular MDPs and a finite-horizon value-iteration
//! oracle. The three built-in MDPs are diagnostics separating what a myopic
//! bandit, a bias-extended bandit and a full value-based learner can solve.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Environment, Step};

/// Start-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StartDist {
    Fixed(usize),
    UniformOver(Vec<usize>),
}

/// Deterministic finite MDP given by transition and reward tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `state * n_actions + action`.
    pub transition: Vec<usize>,
    /// Row-major `state * n_actions + action`.
    pub reward: Vec<f64>,
    pub start: StartDist,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<usize>,
        reward: Vec<f64>,
        start: StartDist,
        horizon: usize,
    ) -> Result<Self> {
        if transition.len() != n_states * n_actions || reward.len() != n_states * n_actions {
            return Err(Error::Config("mdp table size mismatch".into()));
        }
        if transition.iter().any(|&s| s >= n_states) {
            return Err(Error::Config("mdp transition target out of range".into()));
        }
        if horizon < 1 {
            return Err(Error::Config("mdp horizon must be >= 1".into()));
        }
        let start_ok = match &start {
            StartDist::Fixed(s) => *s < n_states,
            StartDist::UniformOver(v) => !v.is_empty() && v.iter().all(|&s| s < n_states),
        };
        if !start_ok {
            return Err(Error::Config("mdp start state out of range".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            start,
            horizon,
        })
    }

    pub fn next_state(&self, state: usize, action: usize) -> Result<usize> {
        self.check(state, action)?;
        Ok(self.transition[state * self.n_actions + action])
    }

    pub fn reward_at(&self, state: usize, action: usize) -> Result<f64> {
        self.check(state, action)?;
        Ok(self.reward[state * self.n_actions + action])
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states || action >= self.n_actions {
            return Err(Error::RejectedInput(format!(
                "state {state} / action {action} out of range for {}x{} mdp",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// Rolls the deterministic greedy policy out from `start`.
    pub fn rollout(&self, policy: &[usize], start: usize) -> f64 {
        let mut s = start;
        let mut total = 0.0;
        for _ in 0..self.horizon {
            let a = policy[s];
            total += self.reward[s * self.n_actions + a];
            s = self.transition[s * self.n_actions + a];
        }
        total
    }

    /// Expected rollout return of a policy under the start distribution.
    pub fn expected_rollout(&self, policy: &[usize]) -> f64 {
        match &self.start {
            StartDist::Fixed(s) => self.rollout(policy, *s),
            StartDist::UniformOver(v) => {
                v.iter().map(|&s| self.rollout(policy, s)).sum::<f64>() / v.len() as f64
            }
        }
    }
}

/// Two-state loop where the myopically best action is also optimal:
/// alternating between the states collects the full reward every step.
pub fn mdp1() -> TabularMdp {
    TabularMdp::new(
        2,
        2,
        vec![0, 1, 0, 1],
        vec![0.0, 10.0, 10.0, 0.0],
        StartDist::Fixed(0),
        100,
    )
    .expect("static table")
}

/// Two-state trap: the myopically attractive action pays 10 once and then
/// absorbs at zero reward, while staying pays 1 per step.
pub fn mdp2() -> TabularMdp {
    TabularMdp::new(
        2,
        2,
        vec![0, 1, 1, 1],
        vec![1.0, 10.0, 0.0, 0.0],
        StartDist::Fixed(0),
        100,
    )
    .expect("static table")
}

/// Four-state mirror of the trap in which the trap action differs by start
/// state, so no single state-independent action preference fixes both.
pub fn mdp3() -> TabularMdp {
    TabularMdp::new(
        4,
        2,
        vec![0, 0, 0, 1, 2, 3, 3, 3],
        vec![0.0, 0.0, 10.0, 1.0, 1.0, 10.0, 0.0, 0.0],
        StartDist::UniformOver(vec![1, 2]),
        100,
    )
    .expect("static table")
}

/// Finite-horizon dynamic programming over a deterministic tabular MDP.
///
/// Runs `horizon` backups and extracts the first-step greedy policy. The
/// returned per-state values are the undiscounted `horizon`-step rollouts of
/// that stationary policy, which is the quantity the stationary learners in
/// this crate can aspire to. (A time-varying policy can sometimes do better
/// on a finite horizon, e.g. cashing in a trap reward on the very last step;
/// that ceiling is not the relevant oracle here.)
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, horizon: usize) -> (Vec<f64>, Vec<usize>) {
    let mut values = vec![0.0; mdp.n_states];
    let mut policy = vec![0; mdp.n_states];
    for _ in 0..horizon {
        let mut next = vec![f64::NEG_INFINITY; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let q = mdp.reward[s * mdp.n_actions + a]
                    + gamma * values[mdp.transition[s * mdp.n_actions + a]];
                if q > next[s] {
                    next[s] = q;
                    policy[s] = a;
                }
            }
        }
        values = next;
    }
    let returns = (0..mdp.n_states).map(|s| mdp.rollout(&policy, s)).collect();
    (returns, policy)
}

/// Episodic wrapper around a tabular MDP. Observations are an intercept
/// plus a one-hot state encoding, so a linear reward model is exactly
/// expressive.
pub struct MdpEnv {
    mdp: TabularMdp,
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
}

impl MdpEnv {
    pub fn new(mdp: TabularMdp, seed: u64) -> Self {
        let mut env = Self {
            mdp,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 0,
            t: 0,
        };
        env.reset_state();
        env
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn reset_state(&mut self) {
        self.state = match &self.mdp.start {
            StartDist::Fixed(s) => *s,
            StartDist::UniformOver(v) => v[self.rng.random_range(0..v.len())],
        };
        self.t = 0;
    }

    fn features(&self) -> DVector<f64> {
        let mut f = DVector::zeros(1 + self.mdp.n_states);
        f[0] = 1.0;
        f[1 + self.state] = 1.0;
        f
    }
}

impl Environment for MdpEnv {
    fn reset(&mut self) -> DVector<f64> {
        self.reset_state();
        self.features()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        let reward = self.mdp.reward_at(self.state, action)?;
        self.state = self.mdp.next_state(self.state, action)?;
        self.t += 1;
        Ok(Step {
            features: self.features(),
            reward,
            done: self.t >= self.mdp.horizon,
        })
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    fn feature_dim(&self) -> usize {
        1 + self.mdp.n_states
    }

    fn horizon(&self) -> usize {
        self.mdp.horizon
    }
}

//! Daily-message physical-activity intervention simulator.
//!
//! Models a single participant over a study of `horizon` days. Each day one
//! of four actions is taken: send nothing (0), send a generic message (1),
//! or send a message tailored to context 0 (2) or context 1 (3). Messages
//! raise a habituation level that erodes their effect on the step count;
//! mis-tailored messages raise a disengagement risk, and the participant
//! withdraws once that risk crosses a threshold. The agent never observes
//! the latent habituation, disengagement or true context; it only sees a
//! noisy context inference.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Environment, Step};

/// Observation encoding handed to the reward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// `[1, p_1]`: intercept plus the inferred probability of context 1.
    Prob,
    /// `[1, l]`: intercept plus the hard context guess.
    Onehot,
}

/// Simulator parameters. Defaults are the standard configuration used in
/// the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitaiConfig {
    /// Context feature noise (standard deviation of the context signal).
    pub sigma: f64,
    /// Habituation decay on message-free days.
    pub delta_h: f64,
    /// Habituation increment per message.
    pub eps_h: f64,
    /// Disengagement decay on well-tailored message days.
    pub delta_d: f64,
    /// Disengagement increment per mis-tailored message.
    pub eps_d: f64,
    /// Baseline step count per true context.
    pub mu_s: [f64; 2],
    /// Step-count effect of a non-tailored message.
    pub rho1: f64,
    /// Step-count effect of a correctly tailored message.
    pub rho2: f64,
    /// Disengagement threshold ending the study.
    pub d_threshold: f64,
    /// Study length in days.
    pub horizon: usize,
    /// Observation encoding.
    pub obs_mode: ObsMode,
}

impl Default for JitaiConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            delta_h: 0.1,
            eps_h: 0.05,
            delta_d: 0.1,
            eps_d: 0.4,
            mu_s: [0.1, 0.1],
            rho1: 50.0,
            rho2: 200.0,
            d_threshold: 0.99,
            horizon: 50,
            obs_mode: ObsMode::Prob,
        }
    }
}

impl JitaiConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("sigma", self.sigma, 0.0, f64::INFINITY),
            ("delta_h", self.delta_h, 0.0, 1.0),
            ("eps_h", self.eps_h, 0.0, 1.0),
            ("delta_d", self.delta_d, 0.0, 1.0),
            ("eps_d", self.eps_d, 0.0, 1.0),
            ("d_threshold", self.d_threshold, 0.0, 1.0 + 1e-12),
        ];
        for (name, v, lo, hi) in rates {
            if !v.is_finite() || v <= lo || v >= hi {
                return Err(Error::Config(format!(
                    "jitai parameter {name} = {v} out of range ({lo}, {hi})"
                )));
            }
        }
        if self.horizon < 1 {
            return Err(Error::Config("jitai horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full simulator state for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct JitaiState {
    /// True context.
    pub c: usize,
    /// Posterior probabilities over the two contexts.
    pub p: [f64; 2],
    /// Inferred context (argmax of `p`).
    pub l: usize,
    /// Habituation level in `[0, 1]`.
    pub h: f64,
    /// Disengagement risk in `[0, 1]`.
    pub d: f64,
    /// Most recent step count.
    pub s: f64,
}

impl JitaiState {
    /// The feature vector exposed to the agent. Never reveals `h`, `d` or
    /// the true context.
    pub fn features(&self, mode: ObsMode) -> DVector<f64> {
        match mode {
            ObsMode::Prob => DVector::from_vec(vec![1.0, self.p[1]]),
            ObsMode::Onehot => DVector::from_vec(vec![1.0, self.l as f64]),
        }
    }
}

pub struct JitaiEnv {
    cfg: JitaiConfig,
    rng: ChaCha8Rng,
    state: JitaiState,
    t: usize,
    done: bool,
}

impl JitaiEnv {
    pub fn new(cfg: JitaiConfig, seed: u64) -> Self {
        let mut env = Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: JitaiState {
                c: 0,
                p: [0.5, 0.5],
                l: 0,
                h: 0.0,
                d: 0.0,
                s: 0.0,
            },
            t: 0,
            done: false,
        };
        env.reset_state();
        env
    }

    pub fn state(&self) -> &JitaiState {
        &self.state
    }

    fn reset_state(&mut self) {
        self.state.h = 0.0;
        self.state.d = 0.0;
        self.state.s = 0.0;
        self.t = 0;
        self.done = false;
        self.draw_context();
    }

    /// Draws the next day's true context and the agent's inference of it.
    ///
    /// The context signal is `x ~ N(c, sigma^2)`; under a uniform prior over
    /// the two contexts, Bayes' rule gives
    /// `p_1 = 1 / (1 + exp((1 - 2x) / (2 sigma^2)))`.
    fn draw_context(&mut self) {
        let c = usize::from(self.rng.random::<bool>());
        let x = c as f64 + self.cfg.sigma * self.rng.sample::<f64, _>(StandardNormal);
        let p1 = 1.0 / (1.0 + ((1.0 - 2.0 * x) / (2.0 * self.cfg.sigma.powi(2))).exp());
        self.state.c = c;
        self.state.p = [1.0 - p1, p1];
        self.state.l = usize::from(p1 > 0.5);
    }
}

impl Environment for JitaiEnv {
    fn reset(&mut self) -> DVector<f64> {
        self.reset_state();
        self.state.features(self.cfg.obs_mode)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action > 3 {
            return Err(Error::RejectedInput(format!(
                "jitai action {action} out of range 0..=3"
            )));
        }
        let cfg = self.cfg.clone();
        let st = &mut self.state;
        let tailored = action == st.c + 2;

        // Habituation responds to any message; the reward below uses the
        // already-updated level.
        st.h = if action == 0 {
            (1.0 - cfg.delta_h) * st.h
        } else {
            (st.h + cfg.eps_h).min(1.0)
        };
        st.d = if action == 0 {
            st.d
        } else if action == 1 || tailored {
            (1.0 - cfg.delta_d) * st.d
        } else {
            (st.d + cfg.eps_d).min(1.0)
        };
        st.h = st.h.clamp(0.0, 1.0);
        st.d = st.d.clamp(0.0, 1.0);

        let base = cfg.mu_s[st.c];
        st.s = match action {
            1 => base + (1.0 - st.h) * cfg.rho1,
            _ if tailored => base + (1.0 - st.h) * cfg.rho2,
            _ => base,
        };
        let reward = st.s;

        self.t += 1;
        let withdrew = st.d > cfg.d_threshold;
        self.done = withdrew || self.t >= cfg.horizon;

        self.draw_context();
        Ok(Step {
            features: self.state.features(cfg.obs_mode),
            reward,
            done: self.done,
        })
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
}

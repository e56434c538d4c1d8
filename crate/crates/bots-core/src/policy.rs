//! The extended Thompson sampling policy.
//!
//! At each decision point one weight vector is drawn per action (in action
//! index order) from that action's posterior; the action maximizing
//! `sampled_reward + bias` is taken, and only the taken action's posterior
//! is updated with the observed reward. With all biases zero this is
//! standard linear-Gaussian Thompson sampling, draw for draw.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvFactory, Environment};
use crate::error::{Error, Result};
use crate::reward::{batch_fit, posterior_update, BeliefSet};
use crate::seeding;

/// Policy parameters: per-action biases plus the initial posterior set.
#[derive(Debug, Clone)]
pub struct XtsParams {
    beta: Vec<f64>,
    pub beliefs: BeliefSet,
    /// Whether posteriors update as the episode unfolds. True for xTS;
    /// only pure-random trial episodes run without updates.
    pub update_within_episode: bool,
}

impl XtsParams {
    /// The reference action's bias (index 0) must be exactly zero; only the
    /// remaining biases are free parameters.
    pub fn new(beta: Vec<f64>, beliefs: BeliefSet) -> Result<Self> {
        if beta.len() != beliefs.n_actions() {
            return Err(Error::RejectedInput(format!(
                "{} biases for {} actions",
                beta.len(),
                beliefs.n_actions()
            )));
        }
        if beta[0] != 0.0 {
            return Err(Error::RejectedInput(format!(
                "reference action bias must be 0, got {}",
                beta[0]
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::RejectedInput("non-finite action bias".into()));
        }
        Ok(Self {
            beta,
            beliefs,
            update_within_episode: true,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

/// One recorded decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

/// Everything observed during one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
    pub terminated_early: bool,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One JSON object per line, one line per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for step in &self.steps {
            let line = serde_json::to_string(step)
                .map_err(|e| Error::Config(format!("trace serialization: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::Config(format!("trace write: {e}")))?;
        }
        Ok(())
    }
}

/// Samples one weight vector per action and returns the argmax of
/// `sampled_reward + bias`, ties broken toward the lowest action index.
pub fn select_action<R: Rng + ?Sized>(
    params: &XtsParams,
    beliefs_now: &BeliefSet,
    s: &DVector<f64>,
    rng: &mut R,
) -> Result<usize> {
    let mut best = 0usize;
    let mut best_u = f64::NEG_INFINITY;
    for a in 0..beliefs_now.n_actions() {
        let theta = beliefs_now.belief(a).sample_weights(rng)?;
        let utility = theta.dot(s) + params.beta[a];
        if utility > best_u {
            best_u = utility;
            best = a;
        }
    }
    Ok(best)
}

/// Plays one episode of xTS against a freshly reset environment.
///
/// The caller's `params.beliefs` are copied; the episode evolves its own
/// posterior set, updating only the taken action after each step.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    params: &XtsParams,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    run_episode_with_beliefs(env, params, rng).map(|(trace, _)| trace)
}

/// [`run_episode`] variant that also returns the episode's final posterior
/// set, for callers that chain posteriors across episodes.
pub fn run_episode_with_beliefs<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    params: &XtsParams,
    rng: &mut R,
) -> Result<(EpisodeTrace, BeliefSet)> {
    let mut beliefs = params.beliefs.clone();
    let mut features = env.reset();
    let mut steps = Vec::new();
    let mut total = 0.0;
    let horizon = env.horizon();
    let mut done = false;

    for t in 0..horizon {
        let action = select_action(params, &beliefs, &features, rng)?;
        let step = env.step(action).map_err(|e| e.at_step(t))?;
        total += step.reward;
        steps.push(TraceStep {
            t,
            features: features.iter().copied().collect(),
            action,
            reward: step.reward,
        });
        if params.update_within_episode {
            let updated = posterior_update(beliefs.belief(action), &features, step.reward, true)?;
            *beliefs.belief_mut(action) = updated;
        }
        features = step.features;
        if step.done {
            done = true;
            break;
        }
    }

    let trace = EpisodeTrace {
        terminated_early: done && steps.len() < horizon,
        total_return: total,
        steps,
    };
    Ok((trace, beliefs))
}

/// Plays one episode with uniformly random actions (no reward model).
pub fn run_random_episode<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let n_actions = env.n_actions();
    let mut features = env.reset();
    let mut steps = Vec::new();
    let mut total = 0.0;
    let horizon = env.horizon();
    let mut done = false;

    for t in 0..horizon {
        let action = rng.random_range(0..n_actions);
        let step = env.step(action).map_err(|e| e.at_step(t))?;
        total += step.reward;
        steps.push(TraceStep {
            t,
            features: features.iter().copied().collect(),
            action,
            reward: step.reward,
        });
        features = step.features;
        if step.done {
            done = true;
            break;
        }
    }

    Ok(EpisodeTrace {
        terminated_early: done && steps.len() < horizon,
        total_return: total,
        steps,
    })
}

/// Micro-randomized trial: `n_episodes` independent uniformly randomized
/// episodes, pooled into one conjugate refit of the base prior per action.
///
/// Episodes run in parallel; seeds derive from `(base_seed, rep, episode)`
/// so the result is independent of scheduling.
pub fn run_mrt(
    env_factory: EnvFactory,
    n_episodes: usize,
    base_prior: &BeliefSet,
    base_seed: u64,
    rep: u64,
) -> Result<(BeliefSet, Vec<EpisodeTrace>)> {
    if n_episodes < 1 {
        return Err(Error::Config("mrt needs at least one episode".into()));
    }
    let traces: Vec<EpisodeTrace> = (0..n_episodes)
        .into_par_iter()
        .map(|e| {
            let env_seed = seeding::mix(base_seed, &[seeding::salt::MRT_ENV, rep, e as u64]);
            let pol_seed = seeding::mix(base_seed, &[seeding::salt::MRT_POLICY, rep, e as u64]);
            let mut env = env_factory(env_seed);
            let mut rng = ChaCha8Rng::seed_from_u64(pol_seed);
            run_random_episode(env.as_mut(), &mut rng)
        })
        .collect::<Result<_>>()?;

    let beliefs = fit_pooled(base_prior, &traces)?;
    Ok((beliefs, traces))
}

/// Refits every action's posterior from `prior` using all steps of the
/// given traces, grouped by taken action.
pub fn fit_pooled(prior: &BeliefSet, traces: &[EpisodeTrace]) -> Result<BeliefSet> {
    let mut per_action: Vec<Vec<(DVector<f64>, f64)>> = vec![Vec::new(); prior.n_actions()];
    for trace in traces {
        for step in &trace.steps {
            if step.action >= per_action.len() {
                return Err(Error::RejectedInput(format!(
                    "trace action {} out of range",
                    step.action
                )));
            }
            per_action[step.action]
                .push((DVector::from_vec(step.features.clone()), step.reward));
        }
    }
    let beliefs = per_action
        .iter()
        .enumerate()
        .map(|(a, obs)| batch_fit(prior.belief(a), obs))
        .collect::<Result<Vec<_>>>()?;
    BeliefSet::new(beliefs)
}

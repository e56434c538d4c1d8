//! The outer optimization loop.
//!
//! One repetition runs: a micro-randomized trial that fits the reward-model
//! priors, a Sobol round seeding the surrogate, then synchronized rounds in
//! which a batch of candidate parameter vectors is selected by batch
//! expected improvement (globally, or inside a trust region), one episode
//! runs per candidate (in parallel), and the surrogate is refit on all
//! (candidate, return) pairs seen so far.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{optimize_qei, sobol_batch, turbo_bounds, turbo_update, TrustRegionState};
use crate::baselines::PriorStrategy;
use crate::env::EnvFactory;
use crate::error::{Error, Result};
use crate::gp::{FitOptions, GpSurrogate, ParamBounds};
use crate::policy::{fit_pooled, run_episode, run_mrt, EpisodeTrace, XtsParams};
use crate::reward::BeliefSet;
use crate::seeding;

/// Which parameters the outer optimizer searches over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchSpace {
    /// Action biases for actions 1..A (action 0 pinned at zero).
    Beta,
    /// Biases plus one reward variance shared by all actions.
    BetaSharedVar,
    /// Biases plus one reward variance per action.
    BetaPerActionVar,
}

impl SearchSpace {
    pub fn dim(&self, n_actions: usize) -> usize {
        match self {
            SearchSpace::Beta => n_actions - 1,
            SearchSpace::BetaSharedVar => n_actions,
            SearchSpace::BetaPerActionVar => (n_actions - 1) + n_actions,
        }
    }
}

/// Global or trust-region candidate selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoMode {
    Global,
    Turbo,
}

/// Acquisition and surrogate-fit effort knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcqConfig {
    /// Monte-Carlo samples per qEI evaluation.
    pub n_mc: usize,
    /// Pattern-search refinements per acquisition optimization.
    pub n_restarts: usize,
    /// Raw Sobol candidate batches scored before refinement.
    pub n_raw: usize,
    /// Hyperprior-sampled restarts of the surrogate MAP fit.
    pub gp_restarts: usize,
    /// Nelder-Mead iteration cap per restart.
    pub gp_max_iters: usize,
}

impl Default for AcqConfig {
    fn default() -> Self {
        Self {
            n_mc: 512,
            n_restarts: 8,
            n_raw: 256,
            gp_restarts: 5,
            gp_max_iters: 150,
        }
    }
}

/// Full configuration of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotsConfig {
    pub search_space: SearchSpace,
    pub bo_mode: BoMode,
    pub prior_strategy: PriorStrategy,
    /// Total episode budget including the randomized trial and Sobol round.
    pub total_episodes: usize,
    pub mrt_episodes: usize,
    pub sobol_episodes: usize,
    /// Number of optimization rounds after the Sobol round.
    pub rounds: usize,
    pub base_seed: u64,
    /// Action-bias box, applied to every free bias dimension.
    pub beta_bounds: (f64, f64),
    /// Reward-variance box, applied to every variance dimension.
    pub var_bounds: (f64, f64),
    /// Reward-noise variance used when the search space does not include it.
    pub fixed_sigma_y2: f64,
    /// Diagonal of the broad base prior covariance.
    pub prior_var: f64,
    pub acq: AcqConfig,
    /// Diagnostic hook: evaluate this fixed parameter vector in every slot
    /// of every round instead of running the optimizer.
    pub force_candidate: Option<Vec<f64>>,
}

impl Default for BotsConfig {
    fn default() -> Self {
        Self {
            search_space: SearchSpace::Beta,
            bo_mode: BoMode::Turbo,
            prior_strategy: PriorStrategy::Fixed,
            total_episodes: 140,
            mrt_episodes: 10,
            sobol_episodes: 10,
            rounds: 6,
            base_seed: 0,
            beta_bounds: (-100.0, 0.0),
            var_bounds: (0.1, 2500.0),
            fixed_sigma_y2: 625.0,
            prior_var: 100.0,
            acq: AcqConfig::default(),
            force_candidate: None,
        }
    }
}

/// Episode allocation: the randomized trial plus one batch size per round
/// (round 0 is the Sobol round).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub mrt_episodes: usize,
    pub batch_sizes: Vec<usize>,
}

impl BudgetSchedule {
    pub fn total(&self) -> usize {
        self.mrt_episodes + self.batch_sizes.iter().sum::<usize>()
    }
}

/// Splits `total` into the randomized trial, the Sobol round, and `rounds`
/// even batches. The remainder after the first two blocks must divide
/// evenly.
pub fn make_schedule(
    total: usize,
    mrt: usize,
    sobol: usize,
    rounds: usize,
) -> Result<BudgetSchedule> {
    if mrt < 1 || sobol < 1 {
        return Err(Error::Config(
            "randomized-trial and sobol rounds need at least one episode each".into(),
        ));
    }
    if total < mrt + sobol {
        return Err(Error::Config(format!(
            "budget {total} cannot cover trial {mrt} + sobol {sobol}"
        )));
    }
    let rest = total - mrt - sobol;
    let mut batch_sizes = vec![sobol];
    if rounds == 0 {
        if rest != 0 {
            return Err(Error::Config(format!(
                "{rest} episodes left over with zero rounds"
            )));
        }
    } else {
        if rest % rounds != 0 {
            return Err(Error::Config(format!(
                "{rest} episodes do not divide evenly into {rounds} rounds"
            )));
        }
        let per = rest / rounds;
        if per == 0 {
            return Err(Error::Config(format!(
                "{rounds} rounds leave empty batches from {rest} episodes"
            )));
        }
        batch_sizes.extend(std::iter::repeat(per).take(rounds));
    }
    Ok(BudgetSchedule {
        mrt_episodes: mrt,
        batch_sizes,
    })
}

/// Turns one candidate vector into per-action biases and noise variances.
pub fn decode_candidate(
    space: SearchSpace,
    v: &[f64],
    n_actions: usize,
    fixed_sigma_y2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let free = n_actions - 1;
    if v.len() != space.dim(n_actions) {
        return Err(Error::RejectedInput(format!(
            "candidate has {} entries, search space needs {}",
            v.len(),
            space.dim(n_actions)
        )));
    }
    let mut beta = vec![0.0];
    beta.extend_from_slice(&v[..free]);
    let vars = match space {
        SearchSpace::Beta => vec![fixed_sigma_y2; n_actions],
        SearchSpace::BetaSharedVar => vec![v[free]; n_actions],
        SearchSpace::BetaPerActionVar => v[free..].to_vec(),
    };
    Ok((beta, vars))
}

/// Search box for the configured space, in original units.
pub fn search_bounds(cfg: &BotsConfig, n_actions: usize) -> Result<ParamBounds> {
    let free = n_actions - 1;
    let d = cfg.search_space.dim(n_actions);
    let mut lower = vec![cfg.beta_bounds.0; free];
    let mut upper = vec![cfg.beta_bounds.1; free];
    lower.extend(std::iter::repeat(cfg.var_bounds.0).take(d - free));
    upper.extend(std::iter::repeat(cfg.var_bounds.1).take(d - free));
    ParamBounds::new(lower, upper)
}

/// Prior propagation across rounds: `Fixed` reuses the trial-fitted beliefs
/// unchanged; `Update` refits from the broad base prior over every pooled
/// observation so far (trial episodes included).
pub fn apply_prior_strategy(
    strategy: PriorStrategy,
    mrt_beliefs: &BeliefSet,
    base_prior: &BeliefSet,
    pooled: &[EpisodeTrace],
) -> Result<BeliefSet> {
    match strategy {
        PriorStrategy::Fixed => Ok(mrt_beliefs.clone()),
        PriorStrategy::Update => fit_pooled(base_prior, pooled),
    }
}

/// Surrogate hyperparameters captured per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    pub noise_sd: f64,
    pub n_train: usize,
}

/// One synchronized round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub batch_size: usize,
    /// Candidate parameter vectors in original units, one per episode slot.
    pub candidates: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    /// Best observed return after this round (trial episodes excluded).
    pub best_so_far: f64,
    pub gp: Option<GpSnapshot>,
    pub tr_length: Option<f64>,
    pub acq_qei: Option<f64>,
}

/// Everything produced by one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub base_seed: u64,
    /// Provenance hash of the launching configuration; filled by callers
    /// that persist records.
    pub config_hash: String,
    pub mrt_returns: Vec<f64>,
    pub mrt_beliefs: BeliefSet,
    pub rounds: Vec<RoundRecord>,
    /// Mean return over every episode consumed, trial included.
    pub avg_return: f64,
    pub best_return: f64,
    pub episodes_run: usize,
}

/// Runs one repetition of the full loop.
pub fn run_bots(cfg: &BotsConfig, rep: usize, env_factory: EnvFactory) -> Result<RunRecord> {
    let schedule = make_schedule(
        cfg.total_episodes,
        cfg.mrt_episodes,
        cfg.sobol_episodes,
        cfg.rounds,
    )?;
    let probe = env_factory(0);
    let n_actions = probe.n_actions();
    let feature_dim = probe.feature_dim();
    drop(probe);
    if n_actions < 2 {
        return Err(Error::Config("need at least two actions".into()));
    }
    let dim = cfg.search_space.dim(n_actions);
    let bounds = search_bounds(cfg, n_actions)?;
    if let Some(v) = &cfg.force_candidate {
        if v.len() != dim {
            return Err(Error::Config(format!(
                "forced candidate has {} entries, search space needs {dim}",
                v.len()
            )));
        }
    }

    let base_prior = BeliefSet::broad(n_actions, feature_dim, cfg.prior_var, cfg.fixed_sigma_y2);
    let (mrt_beliefs, mrt_traces) = run_mrt(
        env_factory,
        schedule.mrt_episodes,
        &base_prior,
        cfg.base_seed,
        rep as u64,
    )?;
    let mrt_returns: Vec<f64> = mrt_traces.iter().map(|t| t.total_return).collect();

    let mut pooled = mrt_traces;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut best_return = f64::NEG_INFINITY;
    let mut tr = match cfg.bo_mode {
        BoMode::Global => TrustRegionState::full(dim),
        BoMode::Turbo => TrustRegionState::new(dim),
    };
    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(schedule.batch_sizes.len());

    for (round, &batch_size) in schedule.batch_sizes.iter().enumerate() {
        let beliefs = apply_prior_strategy(cfg.prior_strategy, &mrt_beliefs, &base_prior, &pooled)
            .map_err(|e| e.at_round(round, 0))?;

        let mut gp_snapshot = None;
        let mut acq_qei = None;
        let candidates: Vec<Vec<f64>> = if let Some(v) = &cfg.force_candidate {
            vec![v.clone(); batch_size]
        } else if round == 0 {
            let seed = seeding::mix(cfg.base_seed, &[seeding::salt::SOBOL_ROUND, rep as u64]);
            sobol_batch(&bounds, batch_size, seed)
                .map_err(|e| e.at_round(round, 0))?
                .points
        } else {
            let fit_seed = seeding::mix(
                cfg.base_seed,
                &[seeding::salt::GP_FIT, rep as u64, round as u64],
            );
            let model = GpSurrogate::fit(
                &xs,
                &ys,
                &bounds,
                &FitOptions {
                    restarts: cfg.acq.gp_restarts,
                    max_iters: cfg.acq.gp_max_iters,
                    seed: fit_seed,
                },
            )
            .map_err(|e| e.at_round(round, 0))?;
            gp_snapshot = Some(GpSnapshot {
                lengthscales: model.hyper().lengthscales.clone(),
                outputscale: model.hyper().outputscale,
                noise_sd: model.hyper().noise_sd,
                n_train: model.n_train(),
            });
            let local = turbo_bounds(&tr, &model.hyper().lengthscales, &bounds)
                .map_err(|e| e.at_round(round, 0))?;
            let acq_seed = seeding::mix(
                cfg.base_seed,
                &[seeding::salt::ACQUISITION, rep as u64, round as u64],
            );
            let res = optimize_qei(
                &model,
                local.lower(),
                local.upper(),
                best_return,
                batch_size,
                cfg.acq.n_restarts,
                cfg.acq.n_raw,
                acq_seed,
            )
            .map_err(|e| e.at_round(round, 0))?;
            acq_qei = Some(res.qei);
            res.batch.points
        };

        // All episodes of the round run in parallel on independent streams;
        // results are collected in slot order.
        let traces: Vec<EpisodeTrace> = candidates
            .par_iter()
            .enumerate()
            .map(|(slot, cand)| {
                let (beta, vars) =
                    decode_candidate(cfg.search_space, cand, n_actions, cfg.fixed_sigma_y2)?;
                let episode_beliefs = beliefs.with_sigma_y2(&vars)?;
                let params = XtsParams::new(beta, episode_beliefs)?;
                let env_seed = seeding::episode_env_seed(
                    cfg.base_seed,
                    rep as u64,
                    round as u64,
                    slot as u64,
                );
                let pol_seed = seeding::episode_policy_seed(
                    cfg.base_seed,
                    rep as u64,
                    round as u64,
                    slot as u64,
                );
                let mut env = env_factory(env_seed);
                let mut rng = ChaCha8Rng::seed_from_u64(pol_seed);
                run_episode(env.as_mut(), &params, &mut rng)
                    .map_err(|e| e.at_round(round, slot))
            })
            .collect::<Result<_>>()?;

        let returns: Vec<f64> = traces.iter().map(|t| t.total_return).collect();
        let batch_best = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let incumbent_before = best_return;

        if round > 0 {
            tr = turbo_update(&tr, batch_best, incumbent_before);
        }
        if batch_best > best_return {
            best_return = batch_best;
        }
        // Keep the region centered on the best observed input.
        if let Some(best_idx) = best_index(&ys, &returns) {
            let best_x = if best_idx < ys.len() {
                &xs[best_idx]
            } else {
                &candidates[best_idx - ys.len()]
            };
            tr.center = bounds.normalize(best_x);
        }

        xs.extend(candidates.iter().cloned());
        ys.extend(returns.iter().cloned());
        pooled.extend(traces);

        rounds.push(RoundRecord {
            round,
            batch_size,
            candidates,
            returns,
            best_so_far: best_return,
            gp: gp_snapshot,
            tr_length: (!tr.is_full()).then_some(tr.length),
            acq_qei,
        });
    }

    let episodes_run = mrt_returns.len() + ys.len();
    debug_assert_eq!(episodes_run, schedule.total());
    let total: f64 = mrt_returns.iter().sum::<f64>() + ys.iter().sum::<f64>();
    Ok(RunRecord {
        rep,
        base_seed: cfg.base_seed,
        config_hash: String::new(),
        mrt_returns,
        mrt_beliefs,
        rounds,
        avg_return: total / episodes_run as f64,
        best_return,
        episodes_run,
    })
}

/// Index of the global best across previous observations and the new round.
fn best_index(prev: &[f64], now: &[f64]) -> Option<usize> {
    prev.iter()
        .chain(now.iter())
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_budget_text() {
        let s = make_schedule(140, 10, 10, 6).unwrap();
        assert_eq!(s.mrt_episodes, 10);
        assert_eq!(s.batch_sizes, vec![10, 20, 20, 20, 20, 20, 20]);
        assert_eq!(s.total(), 140);

        let s = make_schedule(140, 10, 10, 120).unwrap();
        assert_eq!(s.batch_sizes.len(), 121);
        assert_eq!(s.batch_sizes[0], 10);
        assert!(s.batch_sizes[1..].iter().all(|&b| b == 1));
        assert_eq!(s.total(), 140);

        let s = make_schedule(30, 10, 10, 2).unwrap();
        assert_eq!(s.batch_sizes, vec![10, 5, 5]);
    }

    #[test]
    fn uneven_split_is_a_configuration_error() {
        assert!(matches!(
            make_schedule(140, 10, 10, 7),
            Err(Error::Config(_))
        ));
        assert!(matches!(make_schedule(15, 10, 10, 1), Err(Error::Config(_))));
        assert!(matches!(
            make_schedule(140, 10, 10, 121),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn candidate_decoding_layouts() {
        // Bias-only: pinned zero plus the vector, fixed variances.
        let (beta, vars) =
            decode_candidate(SearchSpace::Beta, &[-5.0, -10.0, -2.0], 4, 625.0).unwrap();
        assert_eq!(beta, vec![0.0, -5.0, -10.0, -2.0]);
        assert_eq!(vars, vec![625.0; 4]);

        let (beta, vars) =
            decode_candidate(SearchSpace::BetaSharedVar, &[-5.0, -10.0, -2.0, 49.0], 4, 625.0)
                .unwrap();
        assert_eq!(beta, vec![0.0, -5.0, -10.0, -2.0]);
        assert_eq!(vars, vec![49.0; 4]);

        let (beta, vars) = decode_candidate(
            SearchSpace::BetaPerActionVar,
            &[-5.0, -10.0, -2.0, 1.0, 2.0, 3.0, 4.0],
            4,
            625.0,
        )
        .unwrap();
        assert_eq!(beta, vec![0.0, -5.0, -10.0, -2.0]);
        assert_eq!(vars, vec![1.0, 2.0, 3.0, 4.0]);

        assert!(decode_candidate(SearchSpace::Beta, &[1.0], 4, 625.0).is_err());
    }

    #[test]
    fn search_space_dimensions() {
        assert_eq!(SearchSpace::Beta.dim(4), 3);
        assert_eq!(SearchSpace::BetaSharedVar.dim(4), 4);
        assert_eq!(SearchSpace::BetaPerActionVar.dim(4), 7);
        assert_eq!(SearchSpace::Beta.dim(2), 1);
    }

    #[test]
    fn bounds_cover_bias_and_variance_blocks() {
        let cfg = BotsConfig {
            search_space: SearchSpace::BetaSharedVar,
            ..BotsConfig::default()
        };
        let b = search_bounds(&cfg, 4).unwrap();
        assert_eq!(b.lower(), &[-100.0, -100.0, -100.0, 0.1]);
        assert_eq!(b.upper(), &[0.0, 0.0, 0.0, 2500.0]);
    }
}

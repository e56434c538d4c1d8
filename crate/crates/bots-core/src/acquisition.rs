//! Batch candidate generation: Sobol initialization, Monte-Carlo batch
//! expected improvement (qEI) and single-trust-region management.
//!
//! qEI uses common random numbers: the standard-normal base matrix is drawn
//! column-by-column from `base_seed`, so within one optimization run the
//! acquisition value is a deterministic function of (model, batch) and
//! appending a point to a batch reuses the existing columns. Candidate
//! refinement is derivative-free coordinate pattern search on the joint
//! batch.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{cholesky_with_jitter, GpSurrogate, ParamBounds};
use crate::seeding;
use crate::sobol;

/// A set of `q` candidate parameter vectors in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub points: Vec<Vec<f64>>,
}

impl CandidateBatch {
    pub fn q(&self) -> usize {
        self.points.len()
    }
}

/// First `n` points of a digitally shifted Sobol sequence mapped into the
/// bounds box.
pub fn sobol_batch(bounds: &ParamBounds, n: usize, seed: u64) -> Result<CandidateBatch> {
    if n < 1 {
        return Err(Error::Config("sobol batch needs n >= 1".into()));
    }
    let points = sobol::sample_box(bounds.lower(), bounds.upper(), n, seed)?;
    Ok(CandidateBatch { points })
}

/// Monte-Carlo batch expected improvement in original return units.
///
/// Estimates `E[max(0, max_j f(x_j) - best_f)]` over `n_mc` joint posterior
/// samples of the latent function at the batch.
pub fn qei(
    model: &GpSurrogate,
    batch: &[Vec<f64>],
    best_f: f64,
    n_mc: usize,
    base_seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::RejectedInput("empty candidate batch".into()));
    }
    let q = batch.len();
    let (mean, cov) = model.posterior(batch)?;
    let (chol, _) = cholesky_with_jitter(cov)?;
    let l = chol.unpack();
    let best_std = model.standardize(best_f);

    // Base normals drawn column-major: column j is reused verbatim when the
    // same seed scores a longer batch whose first j points are unchanged.
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut z = DMatrix::zeros(n_mc, q);
    for j in 0..q {
        for i in 0..n_mc {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }

    // q x n_mc sample matrix: each column is mean + L z_i.
    let samples = &l * z.transpose();
    let mut acc = 0.0;
    for i in 0..n_mc {
        let mut best = f64::NEG_INFINITY;
        for j in 0..q {
            let v = mean[j] + samples[(j, i)];
            if v > best {
                best = v;
            }
        }
        acc += (best - best_std).max(0.0);
    }
    Ok(model.y_sd() * acc / n_mc as f64)
}

/// Result of a batch acquisition optimization.
#[derive(Debug, Clone)]
pub struct AcqResult {
    pub batch: CandidateBatch,
    /// qEI of the returned batch.
    pub qei: f64,
    /// qEI of the best unrefined Sobol batch, for diagnostics.
    pub raw_best_qei: f64,
}

/// Selects a `q`-point batch maximizing qEI inside `[lower, upper]`
/// (original units; a collapsed box is allowed and returns copies of the
/// single feasible point).
///
/// `n_raw` Sobol batches seed the search; the best `n_restarts` of them are
/// refined by coordinate pattern search with shrinking steps under a fixed
/// base-sample seed, so refinement never regresses.
#[allow(clippy::too_many_arguments)]
pub fn optimize_qei(
    model: &GpSurrogate,
    lower: &[f64],
    upper: &[f64],
    best_f: f64,
    q: usize,
    n_restarts: usize,
    n_raw: usize,
    seed: u64,
) -> Result<AcqResult> {
    if q < 1 || n_raw < 1 || n_restarts < 1 {
        return Err(Error::Config("acquisition sizes must be >= 1".into()));
    }
    if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::Config("invalid acquisition bounds".into()));
    }
    let d = lower.len();
    let mc_seed = seeding::mix(seed, &[0xac9, 1]);
    let raw_seed = seeding::mix(seed, &[0xac9, 2]);
    let n_mc = DEFAULT_N_MC.min(usize::MAX);

    let score = |batch: &[Vec<f64>]| qei(model, batch, best_f, n_mc, mc_seed);

    // Raw phase: n_raw candidate batches from one Sobol stream.
    let flat = sobol::sample_box(lower, upper, n_raw * q, raw_seed)?;
    let mut raw: Vec<(Vec<Vec<f64>>, f64)> = Vec::with_capacity(n_raw);
    for chunk in flat.chunks_exact(q) {
        let batch = chunk.to_vec();
        let v = score(&batch)?;
        raw.push((batch, v));
    }
    raw.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let raw_best_qei = raw[0].1;

    let widths: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let mut best_batch = raw[0].0.clone();
    let mut best_val = raw[0].1;

    for (start, start_val) in raw.into_iter().take(n_restarts) {
        let (refined, val) = pattern_search(&score, start, start_val, lower, upper, &widths)?;
        if val > best_val {
            best_val = val;
            best_batch = refined;
        }
    }

    Ok(AcqResult {
        batch: CandidateBatch { points: best_batch },
        qei: best_val,
        raw_best_qei,
    })
}

pub(crate) const DEFAULT_N_MC: usize = 512;

/// Coordinate descent over all q*d batch coordinates, accepting only strict
/// improvements; the step shrinks after each sweep without one.
fn pattern_search<F: Fn(&[Vec<f64>]) -> Result<f64>>(
    score: &F,
    mut batch: Vec<Vec<f64>>,
    mut val: f64,
    lower: &[f64],
    upper: &[f64],
    widths: &[f64],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut scale = 0.2;
    let mut shrinks = 0;
    for _sweep in 0..12 {
        let mut improved = false;
        for j in 0..batch.len() {
            for dd in 0..lower.len() {
                if widths[dd] == 0.0 {
                    continue;
                }
                let delta = scale * widths[dd];
                let orig = batch[j][dd];
                for dir in [1.0, -1.0] {
                    let cand = (orig + dir * delta).clamp(lower[dd], upper[dd]);
                    if cand == orig {
                        continue;
                    }
                    batch[j][dd] = cand;
                    let v = score(&batch)?;
                    if v > val {
                        val = v;
                        improved = true;
                        break;
                    }
                    batch[j][dd] = orig;
                }
            }
        }
        if !improved {
            scale *= 0.5;
            shrinks += 1;
            if shrinks >= 4 {
                break;
            }
        }
    }
    Ok((batch, val))
}

/// Single trust region for local batch optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionState {
    /// Incumbent location in unit-cube coordinates.
    pub center: Vec<f64>,
    /// Current edge length (unit-cube scale).
    pub length: f64,
    pub succ_count: usize,
    pub fail_count: usize,
    pub succ_tol: usize,
    pub fail_tol: usize,
    pub l_min: f64,
    pub l_max: f64,
    pub l_init: f64,
}

impl TrustRegionState {
    /// Reference defaults: start at 0.8, double up to 1.6 after 3 successes,
    /// halve after `max(3, dim)` failures, restart below 2^-7.
    pub fn new(dim: usize) -> Self {
        Self {
            center: vec![0.5; dim],
            length: 0.8,
            succ_count: 0,
            fail_count: 0,
            succ_tol: 3,
            fail_tol: 3.max(dim),
            l_min: 2f64.powi(-7),
            l_max: 1.6,
            l_init: 0.8,
        }
    }

    /// Degenerate region covering the whole cube forever; the global-mode
    /// code path runs through the same machinery with this state.
    pub fn full(dim: usize) -> Self {
        Self {
            center: vec![0.5; dim],
            length: f64::INFINITY,
            succ_count: 0,
            fail_count: 0,
            succ_tol: usize::MAX,
            fail_tol: usize::MAX,
            l_min: 0.0,
            l_max: f64::INFINITY,
            l_init: f64::INFINITY,
        }
    }

    pub fn is_full(&self) -> bool {
        self.length.is_infinite()
    }
}

/// Counter-and-resize step after one round: success when the batch improved
/// on the incumbent (strictly), failure otherwise. Hitting the success
/// tolerance doubles the edge (capped); hitting the failure tolerance halves
/// it, and falling below the minimum restarts the region at its initial
/// size with the center kept at the incumbent.
pub fn turbo_update(
    tr: &TrustRegionState,
    batch_best_return: f64,
    incumbent_return: f64,
) -> TrustRegionState {
    let mut next = tr.clone();
    if batch_best_return > incumbent_return {
        next.succ_count += 1;
        next.fail_count = 0;
        if next.succ_count >= next.succ_tol {
            next.length = (2.0 * next.length).min(next.l_max);
            next.succ_count = 0;
        }
    } else {
        next.fail_count += 1;
        next.succ_count = 0;
        if next.fail_count >= next.fail_tol {
            next.length /= 2.0;
            next.fail_count = 0;
        }
    }
    if next.length < next.l_min {
        next.length = next.l_init;
        next.succ_count = 0;
        next.fail_count = 0;
    }
    next
}

/// The trust-region box in original units: per-axis widths proportional to
/// the model lengthscales, rescaled so the edge-length product is
/// `length^dim`, centered on the incumbent and clipped to the global box.
pub fn turbo_bounds(
    tr: &TrustRegionState,
    lengthscales: &[f64],
    global: &ParamBounds,
) -> Result<ParamBounds> {
    let d = global.dim();
    if tr.center.len() != d || lengthscales.len() != d {
        return Err(Error::Config("trust region dimension mismatch".into()));
    }
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    if tr.is_full() {
        hi.fill(1.0);
    } else {
        let geo_mean = lengthscales.iter().map(|l| l.ln()).sum::<f64>() / d as f64;
        for i in 0..d {
            let weight = (lengthscales[i].ln() - geo_mean).exp();
            let half = 0.5 * weight * tr.length;
            lo[i] = (tr.center[i] - half).clamp(0.0, 1.0);
            hi[i] = (tr.center[i] + half).clamp(0.0, 1.0);
        }
    }
    let lower = global.denormalize(&lo);
    let upper = global.denormalize(&hi);
    ParamBounds::new(lower, upper)
}

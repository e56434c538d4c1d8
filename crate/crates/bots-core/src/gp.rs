//! Gaussian-process surrogate of the expected-return function.
//!
//! Inputs are normalized to the unit cube through the search bounds and
//! targets are standardized, so the Matérn-5/2 hyperpriors below are on a
//! fixed scale regardless of the problem. Hyperparameters are set by MAP:
//! log marginal likelihood plus log hyperprior density, maximized by
//! multi-start Nelder-Mead in log space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.23606797749979;

/// Search-space box in original parameter units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("bounds must be non-empty, equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config(
                "each lower bound must be strictly below its upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (v - l) / (u - l))
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| l + v * (u - l))
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }

    /// Intersection with another box of the same dimension.
    pub fn intersect(&self, other: &ParamBounds) -> Result<ParamBounds> {
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(&a, &b)| a.max(b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(&a, &b)| a.min(b))
            .collect();
        ParamBounds::new(lower, upper)
    }
}

/// Matérn-5/2 kernel hyperparameters. `outputscale` is the kernel value at
/// zero distance; `noise_sd` is the observation-noise standard deviation in
/// standardized target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    pub noise_sd: f64,
}

impl GpHyper {
    fn validate(&self) -> Result<()> {
        let ok = self.lengthscales.iter().all(|&l| l.is_finite() && l > 0.0)
            && self.outputscale.is_finite()
            && self.outputscale > 0.0
            && self.noise_sd.is_finite()
            && self.noise_sd > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("gp hyperparameters must be positive".into()))
        }
    }
}

/// Matérn-5/2 covariance with per-dimension lengthscales:
/// `outputscale * (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r)` where `r` is
/// the lengthscale-weighted distance.
pub fn matern52(x1: &[f64], x2: &[f64], lengthscales: &[f64], outputscale: f64) -> f64 {
    let mut r2 = 0.0;
    for ((a, b), l) in x1.iter().zip(x2).zip(lengthscales) {
        let u = (a - b) / l;
        r2 += u * u;
    }
    let r = r2.sqrt();
    outputscale * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * (-SQRT5 * r).exp()
}

fn kernel_matrix(x: &[Vec<f64>], hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        matern52(&x[i], &x[j], &hyper.lengthscales, hyper.outputscale)
    })
}

/// Cholesky with an escalating diagonal jitter; duplicate rows make the
/// plain factorization fail routinely.
pub(crate) fn cholesky_with_jitter(
    mut k: DMatrix<f64>,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    match k.clone().cholesky() {
        Some(c) => return Ok((c, 0.0)),
        None => {
            let mut jitter = 1e-8;
            while jitter <= 1e-4 {
                let mut kj = k.clone();
                for i in 0..kj.nrows() {
                    kj[(i, i)] += jitter;
                }
                if let Some(c) = kj.cholesky() {
                    return Ok((c, jitter));
                }
                jitter *= 10.0;
            }
        }
    }
    k.fill(0.0);
    Err(Error::Numerical(
        "kernel matrix not positive definite after jitter escalation".into(),
    ))
}

/// Log marginal likelihood of `y` under the GP with the given (already
/// normalized) inputs and hyperparameters. Operates on the provided targets
/// as-is; no standardization is applied here.
pub fn log_marginal_likelihood_of(x: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyper) -> Result<f64> {
    hyper.validate()?;
    let n = x.len();
    let mut k = kernel_matrix(x, hyper);
    for i in 0..n {
        k[(i, i)] += hyper.noise_sd * hyper.noise_sd;
    }
    let (chol, _) = cholesky_with_jitter(k)?;
    let alpha = chol.solve(y);
    let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    Ok(-0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Analytic gradient of [`log_marginal_likelihood_of`] with respect to the
/// log hyperparameters, ordered `[log l_1 .. log l_D, log outputscale,
/// log noise_sd]`. Uses `dL/dt = tr((aa' - Ky^-1) dKy/dt) / 2`.
pub fn log_marginal_likelihood_grad_of(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    hyper: &GpHyper,
) -> Result<Vec<f64>> {
    hyper.validate()?;
    let n = x.len();
    let d = hyper.lengthscales.len();
    let k_signal = kernel_matrix(x, hyper);
    let mut k = k_signal.clone();
    for i in 0..n {
        k[(i, i)] += hyper.noise_sd * hyper.noise_sd;
    }
    let (chol, _) = cholesky_with_jitter(k)?;
    let alpha = chol.solve(y);
    let k_inv = chol.inverse();
    // inner = alpha alpha' - Ky^-1
    let mut inner = &alpha * alpha.transpose();
    inner -= &k_inv;

    let mut grad = vec![0.0; d + 2];
    // d k / d log l_m = outputscale * (5/3) (1 + sqrt5 r) exp(-sqrt5 r) * u_m^2
    for m in 0..d {
        let mut dk = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut r2 = 0.0;
                for dd in 0..d {
                    let u = (x[i][dd] - x[j][dd]) / hyper.lengthscales[dd];
                    r2 += u * u;
                }
                let r = r2.sqrt();
                let um = (x[i][m] - x[j][m]) / hyper.lengthscales[m];
                dk[(i, j)] = hyper.outputscale
                    * (5.0 / 3.0)
                    * (1.0 + SQRT5 * r)
                    * (-SQRT5 * r).exp()
                    * um
                    * um;
            }
        }
        grad[m] = 0.5 * (&inner * &dk).trace();
    }
    // Kernel is linear in outputscale, so d Ky / d log outputscale = K_signal.
    grad[d] = 0.5 * (&inner * &k_signal).trace();
    // d Ky / d log noise_sd = 2 noise_sd^2 I.
    let noise_var = hyper.noise_sd * hyper.noise_sd;
    grad[d + 1] = 0.5 * 2.0 * noise_var * inner.trace();
    Ok(grad)
}

/// Options for the MAP hyperparameter search.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Restarts drawn from the hyperpriors, in addition to the default
    /// initialization (lengthscales at the prior mean, noise sd 0.7).
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 150,
            seed: 0,
        }
    }
}

/// Fitted surrogate: normalized inputs, standardized targets, MAP
/// hyperparameters and the cached Cholesky factor of `K + noise^2 I`.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_std: DVector<f64>,
    bounds: ParamBounds,
    y_mean: f64,
    y_sd: f64,
    hyper: GpHyper,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

// Gamma log-density in shape-rate form, dropping the normalizing constant
// (it cannot move the MAP).
fn log_gamma_unnorm(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * x.ln() - rate * x
}

const LS_PRIOR: (f64, f64) = (3.0, 6.0);
const OS_PRIOR: (f64, f64) = (2.0, 0.15);
const NOISE_FLOOR: f64 = 1e-4;

fn clamp_log_params(phi: &mut [f64], d: usize) {
    for v in phi.iter_mut().take(d) {
        *v = v.clamp((1e-3f64).ln(), (1e3f64).ln());
    }
    phi[d] = phi[d].clamp((1e-6f64).ln(), (1e4f64).ln());
    phi[d + 1] = phi[d + 1].clamp(NOISE_FLOOR.ln(), (1e2f64).ln());
}

fn hyper_from_log(phi: &[f64], d: usize) -> GpHyper {
    GpHyper {
        lengthscales: phi[..d].iter().map(|v| v.exp()).collect(),
        outputscale: phi[d].exp(),
        noise_sd: phi[d + 1].exp(),
    }
}

/// Derivative-free Nelder-Mead ascent on `f`, with standard coefficients.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], max_iters: usize) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += 0.25;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| fvals[b].partial_cmp(&fvals[a]).unwrap_or(std::cmp::Ordering::Equal));
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let fvals_sorted: Vec<f64> = order.iter().map(|&i| fvals[i]).collect();
        simplex = simplex_sorted;
        fvals = fvals_sorted;

        if fvals[0] - fvals[dim] < 1e-9 * (1.0 + fvals[0].abs()) {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> = (0..dim).map(|j| 2.0 * centroid[j] - worst[j]).collect();
        let f_reflect = f(&reflect);

        if f_reflect > fvals[0] {
            let expand: Vec<f64> = (0..dim).map(|j| centroid[j] + 2.0 * (reflect[j] - centroid[j])).collect();
            let f_expand = f(&expand);
            if f_expand > f_reflect {
                simplex[dim] = expand;
                fvals[dim] = f_expand;
            } else {
                simplex[dim] = reflect;
                fvals[dim] = f_reflect;
            }
        } else if f_reflect > fvals[dim - 1] {
            simplex[dim] = reflect;
            fvals[dim] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..dim).map(|j| centroid[j] + 0.5 * (worst[j] - centroid[j])).collect();
            let f_contract = f(&contract);
            if f_contract > fvals[dim] {
                simplex[dim] = contract;
                fvals[dim] = f_contract;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=dim {
                    let best = simplex[0].clone();
                    for j in 0..dim {
                        simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                    }
                    fvals[i] = f(&simplex[i]);
                }
            }
        }
    }

    let best = fvals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (simplex[best].clone(), fvals[best])
}

impl GpSurrogate {
    /// Fits hyperparameters by MAP from raw inputs and returns.
    pub fn fit(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        bounds: &ParamBounds,
        opts: &FitOptions,
    ) -> Result<Self> {
        if x_raw.len() < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                actual: x_raw.len(),
            });
        }
        let (x, y_std, y_mean, y_sd) = Self::prepare(x_raw, y_raw, bounds)?;
        let d = bounds.dim();

        let objective = |phi: &[f64]| -> f64 {
            let mut phi = phi.to_vec();
            clamp_log_params(&mut phi, d);
            let hyper = hyper_from_log(&phi, d);
            let lml = match log_marginal_likelihood_of(&x, &y_std, &hyper) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            let mut log_prior = 0.0;
            for &l in &hyper.lengthscales {
                log_prior += log_gamma_unnorm(l, LS_PRIOR.0, LS_PRIOR.1);
            }
            log_prior += log_gamma_unnorm(hyper.outputscale, OS_PRIOR.0, OS_PRIOR.1);
            lml + log_prior
        };

        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.restarts + 1);
        let mut start0 = vec![(0.5f64).ln(); d];
        start0.push(0.0); // outputscale 1 on standardized targets
        start0.push((0.7f64).ln());
        starts.push(start0);

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let ls_prior = Gamma::new(LS_PRIOR.0, 1.0 / LS_PRIOR.1)
            .map_err(|e| Error::Config(format!("lengthscale prior: {e}")))?;
        let os_prior = Gamma::new(OS_PRIOR.0, 1.0 / OS_PRIOR.1)
            .map_err(|e| Error::Config(format!("outputscale prior: {e}")))?;
        for _ in 0..opts.restarts {
            let mut start: Vec<f64> = (0..d)
                .map(|_| ls_prior.sample(&mut rng).max(1e-3).ln())
                .collect();
            start.push(os_prior.sample(&mut rng).max(1e-6).ln());
            start.push(rng.random_range((0.05f64).ln()..(1.0f64).ln()));
            starts.push(start);
        }

        let mut best_phi = starts[0].clone();
        let mut best_val = f64::NEG_INFINITY;
        for start in &starts {
            let (phi, val) = nelder_mead(objective, start, opts.max_iters);
            if val > best_val {
                best_val = val;
                best_phi = phi;
            }
        }
        if !best_val.is_finite() {
            return Err(Error::Numerical("hyperparameter search diverged".into()));
        }
        clamp_log_params(&mut best_phi, d);
        let hyper = hyper_from_log(&best_phi, d);
        Self::assemble(x, y_std, bounds.clone(), y_mean, y_sd, hyper)
    }

    /// Builds a surrogate with fixed hyperparameters (no MAP search).
    /// Inputs are normalized and targets standardized exactly as in `fit`.
    pub fn with_hyperparameters(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        bounds: &ParamBounds,
        hyper: GpHyper,
    ) -> Result<Self> {
        let (x, y_std, y_mean, y_sd) = Self::prepare(x_raw, y_raw, bounds)?;
        Self::assemble(x, y_std, bounds.clone(), y_mean, y_sd, hyper)
    }

    fn prepare(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        bounds: &ParamBounds,
    ) -> Result<(Vec<Vec<f64>>, DVector<f64>, f64, f64)> {
        if x_raw.len() != y_raw.len() || x_raw.is_empty() {
            return Err(Error::RejectedInput(
                "inputs and targets must be non-empty and equal length".into(),
            ));
        }
        if y_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("non-finite target".into()));
        }
        let mut x = Vec::with_capacity(x_raw.len());
        for row in x_raw {
            if row.len() != bounds.dim() {
                return Err(Error::RejectedInput(format!(
                    "input row has {} coordinates, bounds have {}",
                    row.len(),
                    bounds.dim()
                )));
            }
            if !bounds.contains(row, 1e-9) {
                return Err(Error::RejectedInput("input outside search bounds".into()));
            }
            let z: Vec<f64> = bounds
                .normalize(row)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            x.push(z);
        }

        let n = y_raw.len() as f64;
        let y_mean = y_raw.iter().sum::<f64>() / n;
        let y_sd = if y_raw.len() > 1 {
            (y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        // Constant targets: keep them at zero rather than dividing by ~0,
        // so the predictive mean reverts to the constant everywhere.
        let y_sd = if y_sd < 1e-12 { 1.0 } else { y_sd };
        let y_std = DVector::from_iterator(y_raw.len(), y_raw.iter().map(|v| (v - y_mean) / y_sd));
        Ok((x, y_std, y_mean, y_sd))
    }

    fn assemble(
        x: Vec<Vec<f64>>,
        y_std: DVector<f64>,
        bounds: ParamBounds,
        y_mean: f64,
        y_sd: f64,
        hyper: GpHyper,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = x.len();
        let mut k = kernel_matrix(&x, &hyper);
        for i in 0..n {
            k[(i, i)] += hyper.noise_sd * hyper.noise_sd;
        }
        let (chol, jitter) = cholesky_with_jitter(k)?;
        let alpha = chol.solve(&y_std);
        Ok(Self {
            x,
            y_std,
            bounds,
            y_mean,
            y_sd,
            hyper,
            l: chol.unpack(),
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_sd(&self) -> f64 {
        self.y_sd
    }

    /// Standardizes a raw return into model units.
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_sd
    }

    /// Exact joint posterior at the queries (original units in, standardized
    /// units out): mean vector and symmetric covariance of the latent
    /// function.
    pub fn posterior(&self, xq_raw: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = xq_raw.len();
        if q == 0 {
            return Err(Error::RejectedInput("empty query".into()));
        }
        let xq: Vec<Vec<f64>> = xq_raw.iter().map(|r| {
            self.bounds
                .normalize(r)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        }).collect();
        self.posterior_normalized(&xq)
    }

    /// Same as [`GpSurrogate::posterior`] but with queries already in unit-cube
    /// coordinates.
    pub fn posterior_normalized(
        &self,
        xq: &[Vec<f64>],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.x.len();
        let q = xq.len();
        let k_star = DMatrix::from_fn(n, q, |i, j| {
            matern52(&self.x[i], &xq[j], &self.hyper.lengthscales, self.hyper.outputscale)
        });
        let mean = k_star.transpose() * &self.alpha;
        let v = self
            .l
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let k_qq = DMatrix::from_fn(q, q, |i, j| {
            matern52(&xq[i], &xq[j], &self.hyper.lengthscales, self.hyper.outputscale)
        });
        let mut cov = k_qq - v.transpose() * v;
        let cov_t = cov.transpose();
        cov += cov_t;
        cov *= 0.5;
        Ok((mean, cov))
    }

    /// Per-point predictive mean and variance of the latent function in
    /// original return units. Variances are clamped at zero.
    pub fn predict(&self, xq_raw: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mean, cov) = self.posterior(xq_raw)?;
        let means = mean.iter().map(|m| self.y_mean + self.y_sd * m).collect();
        let vars = (0..xq_raw.len())
            .map(|i| self.y_sd * self.y_sd * cov[(i, i)].max(0.0))
            .collect();
        Ok((means, vars))
    }

    /// Log marginal likelihood of the standardized training targets under
    /// the fitted hyperparameters.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        log_marginal_likelihood_of(&self.x, &self.y_std, &self.hyper)
    }

    /// Training rows in unit-cube coordinates.
    pub fn train_x_normalized(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Standardized training targets.
    pub fn train_y_standardized(&self) -> &DVector<f64> {
        &self.y_std
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_bounds(d: usize) -> ParamBounds {
        ParamBounds::new(vec![0.0; d], vec![1.0; d]).unwrap()
    }

    fn default_hyper(d: usize) -> GpHyper {
        GpHyper {
            lengthscales: vec![0.3; d],
            outputscale: 1.0,
            noise_sd: 0.1,
        }
    }

    #[test]
    fn kernel_at_zero_distance_is_outputscale() {
        let x = [0.3, 0.7];
        assert_eq!(matern52(&x, &x, &[0.5, 0.5], 2.5), 2.5);
    }

    #[test]
    fn kernel_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let ls: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
            assert_eq!(matern52(&a, &b, &ls, 1.3), matern52(&b, &a, &ls, 1.3));
        }
    }

    #[test]
    fn kernel_matches_direct_formula_at_unit_distance() {
        // rho = 1, outputscale 1: (1 + sqrt5 + 5/3) exp(-sqrt5)
        let expected = (1.0 + 5.0f64.sqrt() + 5.0 / 3.0) * (-(5.0f64.sqrt())).exp();
        let got = matern52(&[0.0], &[1.0], &[1.0], 1.0);
        assert_relative_eq!(got, expected, max_relative = 1e-14);
        assert_relative_eq!(got, 0.5240, max_relative = 1e-3);
    }

    #[test]
    fn gram_matrices_are_psd_before_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let x: Vec<Vec<f64>> = (0..15)
                .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
                .collect();
            let hyper = GpHyper {
                lengthscales: vec![rng.random::<f64>() + 0.05, rng.random::<f64>() + 0.05],
                outputscale: rng.random::<f64>() * 3.0 + 0.1,
                noise_sd: 0.1,
            };
            let k = kernel_matrix(&x, &hyper);
            let eig = k.symmetric_eigenvalues();
            assert!(
                eig.iter().all(|&e| e >= -1e-8),
                "trial {trial}: min eigenvalue {}",
                eig.min()
            );
        }
    }

    #[test]
    fn noiseless_model_interpolates_training_points() {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let y = vec![1.0, -2.0, 0.5];
        let hyper = GpHyper {
            lengthscales: vec![0.3],
            outputscale: 1.0,
            noise_sd: 1e-6,
        };
        let model = GpSurrogate::with_hyperparameters(&x, &y, &unit_bounds(1), hyper).unwrap();
        let (means, vars) = model.predict(&x).unwrap();
        for (m, want) in means.iter().zip(&y) {
            assert_relative_eq!(m, want, epsilon = 1e-3);
        }
        for v in vars {
            assert!(v < 1e-4, "variance {v} not near zero at training point");
        }
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let x = vec![vec![0.0, 0.0], vec![0.02, 0.01]];
        let y = vec![5.0, 6.0];
        let hyper = GpHyper {
            lengthscales: vec![0.05, 0.05],
            outputscale: 1.7,
            noise_sd: 0.1,
        };
        let model = GpSurrogate::with_hyperparameters(&x, &y, &unit_bounds(2), hyper).unwrap();
        let (mean, cov) = model.posterior(&[vec![1.0, 1.0]]).unwrap();
        assert!(mean[0].abs() < 1e-6, "standardized mean {}", mean[0]);
        assert_relative_eq!(cov[(0, 0)], 1.7, max_relative = 1e-6);
    }

    #[test]
    fn duplicate_queries_share_posterior_rows() {
        let x = vec![vec![0.2], vec![0.8]];
        let y = vec![0.0, 1.0];
        let model =
            GpSurrogate::with_hyperparameters(&x, &y, &unit_bounds(1), default_hyper(1)).unwrap();
        let (mean, cov) = model.posterior(&[vec![0.4], vec![0.4]]).unwrap();
        assert_eq!(mean[0], mean[1]);
        assert_eq!(cov[(0, 0)], cov[(1, 1)]);
        assert_relative_eq!(cov[(0, 0)], cov[(0, 1)], max_relative = 1e-12);
        // Rank deficient: determinant of the 2x2 block is ~0.
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        assert!(det.abs() < 1e-12);
    }

    #[test]
    fn posterior_variances_stay_above_minus_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
        let hyper = GpHyper {
            lengthscales: vec![0.2],
            outputscale: 1.0,
            noise_sd: 1e-3,
        };
        let model = GpSurrogate::with_hyperparameters(&x, &y, &unit_bounds(1), hyper).unwrap();
        let queries: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
        let (_, cov) = model.posterior(&queries).unwrap();
        for i in 0..queries.len() {
            assert!(cov[(i, i)] >= -1e-10, "variance {}", cov[(i, i)]);
        }
    }

    #[test]
    fn single_point_evidence_matches_closed_form() {
        let hyper = GpHyper {
            lengthscales: vec![0.4],
            outputscale: 0.8,
            noise_sd: 0.3,
        };
        let lml =
            log_marginal_likelihood_of(&[vec![0.5]], &DVector::from_vec(vec![0.0]), &hyper)
                .unwrap();
        let expected =
            -0.5 * (2.0 * std::f64::consts::PI * (0.8 + 0.09)).ln();
        assert_relative_eq!(lml, expected, max_relative = 1e-12);
    }

    #[test]
    fn evidence_shift_under_target_scaling_is_closed_form() {
        let x = vec![vec![0.1], vec![0.4], vec![0.9]];
        let y = DVector::from_vec(vec![0.3, -0.6, 0.2]);
        let hyper = default_hyper(1);
        let lml1 = log_marginal_likelihood_of(&x, &y, &hyper).unwrap();
        let c = 2.0;
        let lml_c = log_marginal_likelihood_of(&x, &(&y * c), &hyper).unwrap();
        // lml(c y) - lml(y) = -(c^2 - 1)/2 * y' Ky^-1 y; recover the quadratic
        // form from the single-target evidence pieces.
        let mut k = kernel_matrix(&x, &hyper);
        for i in 0..3 {
            k[(i, i)] += hyper.noise_sd * hyper.noise_sd;
        }
        let quad = y.dot(&k.cholesky().unwrap().solve(&y));
        assert_relative_eq!(lml_c - lml1, -0.5 * (c * c - 1.0) * quad, max_relative = 1e-10);
    }

    #[test]
    fn absurd_noise_lowers_evidence_of_well_fit_data() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let y = DVector::from_iterator(12, x.iter().map(|v| (4.0 * v[0]).sin()));
        let good = GpHyper {
            lengthscales: vec![0.3],
            outputscale: 1.0,
            noise_sd: 0.05,
        };
        let noisy = GpHyper {
            noise_sd: 50.0,
            ..good.clone()
        };
        let lml_good = log_marginal_likelihood_of(&x, &y, &good).unwrap();
        let lml_noisy = log_marginal_likelihood_of(&x, &y, &noisy).unwrap();
        assert!(lml_good > lml_noisy);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y = DVector::from_iterator(
            10,
            x.iter().map(|v| (3.0 * v[0]).sin() + 0.5 * v[1]),
        );
        let hyper = GpHyper {
            lengthscales: vec![0.4, 0.7],
            outputscale: 1.3,
            noise_sd: 0.2,
        };
        let grad = log_marginal_likelihood_grad_of(&x, &y, &hyper).unwrap();

        let phi0 = [
            hyper.lengthscales[0].ln(),
            hyper.lengthscales[1].ln(),
            hyper.outputscale.ln(),
            hyper.noise_sd.ln(),
        ];
        let eval = |phi: &[f64]| {
            let h = GpHyper {
                lengthscales: vec![phi[0].exp(), phi[1].exp()],
                outputscale: phi[2].exp(),
                noise_sd: phi[3].exp(),
            };
            log_marginal_likelihood_of(&x, &y, &h).unwrap()
        };
        let h = 1e-5;
        for i in 0..4 {
            let mut hi = phi0.to_vec();
            let mut lo = phi0.to_vec();
            hi[i] += h;
            lo[i] -= h;
            let numeric = (eval(&hi) - eval(&lo)) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / numeric.abs().max(1e-8);
            assert!(
                rel <= 1e-4,
                "coordinate {i}: analytic {} vs numeric {numeric}, rel {rel}",
                grad[i]
            );
        }
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let x = vec![vec![0.1], vec![0.5], vec![0.8]];
        let y = vec![3.25, 3.25, 3.25];
        let model = GpSurrogate::fit(&x, &y, &unit_bounds(1), &FitOptions::default()).unwrap();
        let (means, _) = model.predict(&[vec![0.0], vec![0.33], vec![1.0]]).unwrap();
        for m in means {
            assert_relative_eq!(m, 3.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_beats_constant_predictor_on_smooth_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = |v: f64| (2.0 * std::f64::consts::PI * v).sin() * 3.0 + 1.0;
        let x_train: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let y_train: Vec<f64> = x_train
            .iter()
            .map(|v| f(v[0]) + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let model = GpSurrogate::fit(&x_train, &y_train, &unit_bounds(1), &FitOptions::default())
            .unwrap();

        let x_test: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 + 0.5) / 50.0]).collect();
        let (pred, _) = model.predict(&x_test).unwrap();
        let truth: Vec<f64> = x_test.iter().map(|v| f(v[0])).collect();
        let const_pred = y_train.iter().sum::<f64>() / y_train.len() as f64;

        let rmse = |a: &[f64], b: &[f64]| {
            (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
        };
        let model_rmse = rmse(&pred, &truth);
        let const_rmse = rmse(&vec![const_pred; truth.len()], &truth);
        assert!(
            model_rmse < const_rmse,
            "gp rmse {model_rmse} not below constant rmse {const_rmse}"
        );
    }

    #[test]
    fn refit_with_same_seed_is_identical() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * v[0]).collect();
        let opts = FitOptions {
            seed: 17,
            ..FitOptions::default()
        };
        let a = GpSurrogate::fit(&x, &y, &unit_bounds(1), &opts).unwrap();
        let b = GpSurrogate::fit(&x, &y, &unit_bounds(1), &opts).unwrap();
        assert_eq!(a.hyper(), b.hyper());
    }

    #[test]
    fn predictions_are_invariant_to_row_order() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v[0]).cos()).collect();
        let opts = FitOptions::default();
        let a = GpSurrogate::fit(&x, &y, &unit_bounds(1), &opts).unwrap();

        let mut xr = x.clone();
        let mut yr = y.clone();
        xr.reverse();
        yr.reverse();
        let b = GpSurrogate::fit(&xr, &yr, &unit_bounds(1), &opts).unwrap();

        let queries: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 29.0]).collect();
        let (pa, _) = a.predict(&queries).unwrap();
        let (pb, _) = b.predict(&queries).unwrap();
        for (ma, mb) in pa.iter().zip(&pb) {
            assert!((ma - mb).abs() <= 1e-6, "means {ma} vs {mb}");
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let err = GpSurrogate::fit(
            &[vec![0.5]],
            &[1.0],
            &unit_bounds(1),
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData { required: 2, actual: 1 }));
    }

    #[test]
    fn duplicate_training_rows_are_usable() {
        let x = vec![vec![0.5], vec![0.5], vec![0.7]];
        let y = vec![1.0, 1.0, 2.0];
        let hyper = GpHyper {
            lengthscales: vec![0.3],
            outputscale: 1.0,
            noise_sd: 1e-4,
        };
        let model = GpSurrogate::with_hyperparameters(&x, &y, &unit_bounds(1), hyper).unwrap();
        let (means, vars) = model.predict(&[vec![0.5], vec![0.6]]).unwrap();
        assert!(means.iter().chain(&vars).all(|v| v.is_finite()));
    }

    #[test]
    fn jitter_ladder_rescues_singular_kernels() {
        // Exactly singular rank-one matrix: the plain factorization fails,
        // the first ladder rung fixes it.
        let singular = DMatrix::from_element(3, 3, 1.0);
        assert!(singular.clone().cholesky().is_none());
        let (_, jitter) = cholesky_with_jitter(singular).unwrap();
        assert_eq!(jitter, 1e-8);
    }

    #[test]
    fn bounds_validation() {
        assert!(ParamBounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(ParamBounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let b = ParamBounds::new(vec![-100.0, 0.1], vec![0.0, 2500.0]).unwrap();
        let z = b.normalize(&[-50.0, 0.1]);
        assert_relative_eq!(z[0], 0.5);
        assert_relative_eq!(z[1], 0.0);
        let x = b.denormalize(&z);
        assert_relative_eq!(x[0], -50.0);
        assert_relative_eq!(x[1], 0.1);
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
}

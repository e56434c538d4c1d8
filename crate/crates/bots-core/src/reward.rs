//! Conjugate Bayesian linear-Gaussian reward models, one per action.
//!
//! Each action keeps an independent Gaussian posterior over the weights of a
//! linear immediate-reward model `r ~ N(theta' s, sigma_y2)`. Updates come in
//! two algebraically equivalent routes that are tested against each other:
//! a rank-one sequential update applied after every taken action, and a batch
//! refit from the prior over a pooled observation set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Posterior state of one action's linear-Gaussian reward model.
///
/// `sigma` stays symmetric positive definite across updates; `sigma_y2` is
/// the fixed reward-noise variance used by the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearBelief {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_y2: f64,
}

impl GaussianLinearBelief {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, sigma_y2: f64) -> Result<Self> {
        if !sigma_y2.is_finite() || sigma_y2 <= 0.0 {
            return Err(Error::RejectedInput(format!(
                "sigma_y2 must be positive, got {sigma_y2}"
            )));
        }
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::RejectedInput(format!(
                "covariance shape {}x{} does not match mean length {}",
                sigma.nrows(),
                sigma.ncols(),
                mu.len()
            )));
        }
        let belief = Self { mu, sigma, sigma_y2 };
        belief.check_invariants()?;
        Ok(belief)
    }

    /// Broad default prior: zero mean, `prior_var * I` covariance.
    pub fn broad(dim: usize, prior_var: f64, sigma_y2: f64) -> Self {
        Self {
            mu: DVector::zeros(dim),
            sigma: DMatrix::identity(dim, dim) * prior_var,
            sigma_y2,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check_invariants(&self) -> Result<()> {
        let asym = (&self.sigma - self.sigma.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::Numerical(format!(
                "covariance asymmetry {asym:.3e} exceeds 1e-9"
            )));
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::Numerical(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(())
    }

    /// Draws one weight vector `mu + L z` with `L` the Cholesky factor of
    /// `sigma` and `z` standard normal, one coordinate per rng draw in index
    /// order.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Cholesky failed in weight sampling".into()))?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.mu + chol.l() * z)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// One-observation conjugate update.
///
/// With `taken = false` the belief is returned unchanged (the indicator in
/// the update zeroes both the design and the target). With `taken = true`
/// the rank-one Sherman-Morrison form is used, so no matrix is inverted:
///
/// ```text
/// k      = sigma s / (sigma_y2 + s' sigma s)
/// mu'    = mu + k (r - s' mu)
/// sigma' = sigma - (sigma s)(sigma s)' / (sigma_y2 + s' sigma s)
/// ```
pub fn posterior_update(
    belief: &GaussianLinearBelief,
    s: &DVector<f64>,
    r: f64,
    taken: bool,
) -> Result<GaussianLinearBelief> {
    if s.len() != belief.dim() {
        return Err(Error::RejectedInput(format!(
            "feature length {} does not match belief dimension {}",
            s.len(),
            belief.dim()
        )));
    }
    if !r.is_finite() || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::RejectedInput(
            "non-finite feature or reward in posterior update".into(),
        ));
    }
    if !taken {
        return Ok(belief.clone());
    }

    let sigma_s = &belief.sigma * s;
    let denom = belief.sigma_y2 + s.dot(&sigma_s);
    if !denom.is_finite() || denom <= 0.0 {
        return Err(Error::Numerical(format!(
            "degenerate innovation variance {denom}"
        )));
    }
    let gain = &sigma_s / denom;
    let mu = &belief.mu + &gain * (r - s.dot(&belief.mu));
    let mut sigma = &belief.sigma - &sigma_s * (sigma_s.transpose() / denom);
    symmetrize(&mut sigma);

    GaussianLinearBelief::new(mu, sigma, belief.sigma_y2)
}

/// Joint conjugate refit from the prior over all observations at once.
///
/// Works in precision form so the result is independent of observation
/// order; recomputed from the prior on every call. An empty observation
/// list returns the prior unchanged.
pub fn batch_fit(
    prior: &GaussianLinearBelief,
    observations: &[(DVector<f64>, f64)],
) -> Result<GaussianLinearBelief> {
    if observations.is_empty() {
        return Ok(prior.clone());
    }
    let d = prior.dim();
    for (s, r) in observations {
        if s.len() != d {
            return Err(Error::RejectedInput(format!(
                "observation dimension {} does not match prior dimension {d}",
                s.len()
            )));
        }
        if !r.is_finite() || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput(
                "non-finite observation in batch fit".into(),
            ));
        }
    }

    let prior_chol = prior
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("prior covariance is not positive definite".into()))?;
    // Sigma0^-1 and Sigma0^-1 mu0 via Cholesky solves against I and mu0.
    let mut precision = prior_chol.inverse();
    let mut shift = prior_chol.solve(&prior.mu);

    let inv_noise = 1.0 / prior.sigma_y2;
    for (s, r) in observations {
        precision.ger(inv_noise, s, s, 1.0);
        shift.axpy(inv_noise * r, s, 1.0);
    }
    symmetrize(&mut precision);

    let post_chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mu = post_chol.solve(&shift);
    let mut sigma = post_chol.inverse();
    symmetrize(&mut sigma);

    GaussianLinearBelief::new(mu, sigma, prior.sigma_y2)
}

/// The per-action belief collection consumed by the xTS policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSet {
    beliefs: Vec<GaussianLinearBelief>,
}

impl BeliefSet {
    pub fn new(beliefs: Vec<GaussianLinearBelief>) -> Result<Self> {
        if beliefs.is_empty() {
            return Err(Error::RejectedInput("belief set must not be empty".into()));
        }
        let d = beliefs[0].dim();
        if beliefs.iter().any(|b| b.dim() != d) {
            return Err(Error::RejectedInput(
                "all beliefs must share the same feature dimension".into(),
            ));
        }
        Ok(Self { beliefs })
    }

    /// One broad prior per action.
    pub fn broad(n_actions: usize, dim: usize, prior_var: f64, sigma_y2: f64) -> Self {
        Self {
            beliefs: (0..n_actions)
                .map(|_| GaussianLinearBelief::broad(dim, prior_var, sigma_y2))
                .collect(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.beliefs.len()
    }

    pub fn dim(&self) -> usize {
        self.beliefs[0].dim()
    }

    pub fn belief(&self, action: usize) -> &GaussianLinearBelief {
        &self.beliefs[action]
    }

    pub fn belief_mut(&mut self, action: usize) -> &mut GaussianLinearBelief {
        &mut self.beliefs[action]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GaussianLinearBelief> {
        self.beliefs.iter()
    }

    /// Replaces every action's noise variance (used when the outer optimizer
    /// searches over reward variances).
    pub fn with_sigma_y2(&self, per_action: &[f64]) -> Result<Self> {
        if per_action.len() != self.n_actions() {
            return Err(Error::RejectedInput(format!(
                "got {} variances for {} actions",
                per_action.len(),
                self.n_actions()
            )));
        }
        let beliefs = self
            .beliefs
            .iter()
            .zip(per_action)
            .map(|(b, &v)| GaussianLinearBelief::new(b.mu.clone(), b.sigma.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { beliefs })
    }
}

// Run-record serialization uses plain arrays: mu as a vector, sigma row-major.
#[derive(Serialize, Deserialize)]
struct BeliefRepr {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    sigma_y2: f64,
}

impl Serialize for GaussianLinearBelief {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = BeliefRepr {
            mu: self.mu.iter().copied().collect(),
            sigma: self.sigma.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect(),
            sigma_y2: self.sigma_y2,
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianLinearBelief {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = BeliefRepr::deserialize(deserializer)?;
        let d = repr.mu.len();
        if repr.sigma.len() != d * d {
            return Err(D::Error::custom(format!(
                "sigma has {} entries, expected {}",
                repr.sigma.len(),
                d * d
            )));
        }
        let sigma = DMatrix::from_row_slice(d, d, &repr.sigma);
        GaussianLinearBelief::new(DVector::from_vec(repr.mu), sigma, repr.sigma_y2)
            .map_err(D::Error::custom)
    }
}

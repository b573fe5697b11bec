//! Binary Gaussian class-conditional model with a shared covariance.
//!
//! The model caches an eigendecomposition of the covariance so that the
//! effective gain under isotropic distortion, `½ δᵀ(Σ + σ²I)⁻¹δ`, and its
//! derivative reduce to O(d) sums over the spectrum.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{poisson_binomial_pmf, q_function, NumericsError};

pub type FeatureVector = DVector<f64>;

/// Smallest eigenvalue accepted for a covariance matrix.
pub const MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: mu1 has {mu1}, mu2 has {mu2}, sigma is {rows}x{cols}")]
    Dimension {
        mu1: usize,
        mu2: usize,
        rows: usize,
        cols: usize,
    },
    #[error("feature dimension must be at least 1")]
    Empty,
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("covariance is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("covariance inverse check failed (max deviation from identity {0:e})")]
    IllConditioned(f64),
    #[error("non-finite entry in model parameters")]
    NonFinite,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Class label of the binary hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    One,
    Two,
}

impl Class {
    pub fn index(self) -> u8 {
        match self {
            Class::One => 1,
            Class::Two => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceModel {
    mu1: DVector<f64>,
    mu2: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    cholesky_lower: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// Mean difference `μ₁ − μ₂` projected on the eigenvectors of Σ.
    projected_delta: DVector<f64>,
    score_weights: DVector<f64>,
    score_bias: f64,
}

impl InferenceModel {
    pub fn new(mu1: DVector<f64>, mu2: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self, ModelError> {
        let d = mu1.len();
        if mu2.len() != d || sigma.nrows() != d || sigma.ncols() != d {
            return Err(ModelError::Dimension {
                mu1: d,
                mu2: mu2.len(),
                rows: sigma.nrows(),
                cols: sigma.ncols(),
            });
        }
        if d == 0 {
            return Err(ModelError::Empty);
        }
        if mu1.iter().chain(mu2.iter()).chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let scale = sigma.amax().max(1.0);
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(ModelError::NotSymmetric(asym));
        }

        let eig = SymmetricEigen::new(sigma.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig <= MIN_EIGENVALUE {
            return Err(ModelError::NotPositiveDefinite(min_eig));
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(ModelError::NotPositiveDefinite(min_eig))?;
        let sigma_inv = chol.inverse();
        let deviation = (&sigma * &sigma_inv - DMatrix::identity(d, d)).amax();
        if deviation > 1e-8 {
            return Err(ModelError::IllConditioned(deviation));
        }

        let delta = &mu1 - &mu2;
        let projected_delta = eig.eigenvectors.transpose() * &delta;
        let score_weights = &sigma_inv * (&mu2 - &mu1);
        let score_bias = 0.5 * (mu1.dot(&(&sigma_inv * &mu1)) - mu2.dot(&(&sigma_inv * &mu2)));

        Ok(Self {
            mu1,
            mu2,
            cholesky_lower: chol.l(),
            sigma,
            sigma_inv,
            eigenvalues: eig.eigenvalues,
            projected_delta,
            score_weights,
            score_bias,
        })
    }

    /// Centroids `±magnitude·𝟙` with identity covariance.
    pub fn symmetric_isotropic(dim: usize, magnitude: f64) -> Result<Self, ModelError> {
        Self::new(
            DVector::from_element(dim, magnitude),
            DVector::from_element(dim, -magnitude),
            DMatrix::identity(dim, dim),
        )
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn mean(&self, class: Class) -> &DVector<f64> {
        match class {
            Class::One => &self.mu1,
            Class::Two => &self.mu2,
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Half the squared Mahalanobis distance between the centroids, `D₀`.
    pub fn discriminant_gain(&self) -> f64 {
        self.effective_discriminant_gain(0.0)
    }

    /// Gain after isotropic distortion of variance `sigma_q2` is added to
    /// every feature.
    pub fn effective_discriminant_gain(&self, sigma_q2: f64) -> f64 {
        0.5 * self
            .projected_delta
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(nu, lambda)| nu * nu / (lambda + sigma_q2))
            .sum::<f64>()
    }

    /// `‖(Σ + σ²I)⁻¹(μ₁ − μ₂)‖²`, i.e. `−2·dD/dσ²`.
    pub fn whitened_delta_norm2(&self, sigma_q2: f64) -> f64 {
        self.projected_delta
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(nu, lambda)| (nu / (lambda + sigma_q2)).powi(2))
            .sum()
    }

    /// Bounds on the relative gain reduction `(D₀ − D)/D₀`.
    pub fn dg_reduction_bounds(&self, sigma_q2: f64) -> ReductionBounds {
        let d = self.dim() as f64;
        let trace = self.eigenvalues.sum() + d * sigma_q2;
        let inv_trace: f64 = self.eigenvalues.iter().map(|l| 1.0 / (l + sigma_q2)).sum();
        ReductionBounds {
            lower: sigma_q2 / trace,
            upper: sigma_q2 * inv_trace,
        }
    }

    /// Minus log-likelihood ratio `−ln p₁(x)/p₂(x)`; negative favours class 1.
    pub fn discriminant_score(&self, x: &FeatureVector) -> f64 {
        self.score_weights.dot(x) + self.score_bias
    }

    /// Draws `count` i.i.d. features from `N(μ_class, Σ)`.
    pub fn sample_features<R: Rng + ?Sized>(&self, class: Class, count: usize, rng: &mut R) -> Vec<FeatureVector> {
        (0..count).map(|_| self.sample_feature(class, rng)).collect()
    }

    pub fn sample_feature<R: Rng + ?Sized>(&self, class: Class, rng: &mut R) -> FeatureVector {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.mean(class) + &self.cholesky_lower * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Sign rule on the summed scores. `None` when nothing was received.
pub fn classify(scores: &[f64]) -> Option<Class> {
    if scores.is_empty() {
        return None;
    }
    let total: f64 = scores.iter().sum();
    Some(if total < 0.0 { Class::One } else { Class::Two })
}

/// Bayes error of a single observation with gain `D`.
pub fn bayes_error_single(gain: f64) -> f64 {
    q_function((gain / 2.0).sqrt())
}

/// Upper bound on the sequential sensing error over `K` slots with average
/// loss `eps_bar`.
pub fn sensing_error_bound(gain: f64, eps_bar: f64, observations: u32) -> f64 {
    let e = (-gain / 4.0).exp();
    (e + (1.0 - e) * eps_bar).powi(observations as i32)
}

/// Exact error of the sign classifier when each received observation carries
/// gain `D` and slot `k` is lost with probability `loss_probs[k]`.
/// Zero received packets count as a fair coin flip.
pub fn semi_analytic_error(gain: f64, loss_probs: &[f64]) -> Result<f64, NumericsError> {
    let success: Vec<f64> = loss_probs.iter().map(|e| 1.0 - e).collect();
    let pmf = poisson_binomial_pmf(&success)?;
    Ok(pmf
        .iter()
        .map(|(m, p)| {
            let conditional = if m == 0 {
                0.5
            } else {
                q_function((m as f64 * gain / 2.0).sqrt())
            };
            p * conditional
        })
        .sum())
}

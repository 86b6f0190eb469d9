//! Operational Bayesian (MAP) retrieval with closed-form bias and coverage
//! diagnostics.
//!
//! With the whitened operator `K_w` and the regularised normal matrix
//! `N = K_w^T K_w + S_a^{-1}`, every diagnostic is a function of the single
//! vector `v = N^{-1} h`:
//!
//! * posterior variance `sigma^2 = h^T v`
//! * sampling variance `se^2 = |K_w v|^2`
//! * bias multipliers `m = K_w^T K_w v - h`

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{whiten_operator, LinearProblem, WhitenedProblem};
use crate::simulation::GenerativeModel;
use crate::stats::{normal_cdf, z_two_sided};

/// Gaussian prior `x ~ N(mu_a, sigma_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub mu_a: DVector<f64>,
    pub sigma_a: DMatrix<f64>,
}

impl PriorModel {
    pub fn new(mu_a: DVector<f64>, sigma_a: DMatrix<f64>) -> Result<Self> {
        let p = mu_a.len();
        if sigma_a.shape() != (p, p) {
            return Err(Error::dim("sigma_a", format!("{p}x{p}"), format!("{}x{}", sigma_a.nrows(), sigma_a.ncols())));
        }
        if mu_a.iter().chain(sigma_a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior", "entries must be finite"));
        }
        if !linalg::is_symmetric(&sigma_a, 1e-12) {
            return Err(Error::invalid("sigma_a", "matrix is not symmetric"));
        }
        if sigma_a.clone().cholesky().is_none() {
            return Err(Error::CholeskyFailure("sigma_a".into()));
        }
        Ok(PriorModel { mu_a, sigma_a })
    }

    pub fn dim(&self) -> usize {
        self.mu_a.len()
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.dim() != p {
            return Err(Error::dim("mu_a", p, self.dim()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorFile {
    pub mu_a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_a_diag: Option<Vec<f64>>,
}

impl PriorFile {
    pub fn from_prior(prior: &PriorModel) -> Self {
        PriorFile {
            mu_a: prior.mu_a.iter().copied().collect(),
            sigma_a: Some(linalg::to_rows(&prior.sigma_a)),
            sigma_a_diag: None,
        }
    }

    pub fn into_prior(self) -> Result<PriorModel> {
        let p = self.mu_a.len();
        let sigma = linalg::from_square_or_diag("sigma_a", self.sigma_a.as_ref(), self.sigma_a_diag.as_ref(), p)?;
        PriorModel::new(DVector::from_vec(self.mu_a), sigma)
    }
}

#[derive(Debug, Clone)]
pub struct BayesResult {
    pub x_hat: DVector<f64>,
    pub theta_hat: f64,
    pub posterior_sd: f64,
    pub standard_error: f64,
    pub credible_interval: (f64, f64),
    /// `G`, `p x n`, acting on raw (unwhitened) observations.
    pub gain_matrix: DMatrix<f64>,
    /// `A_k = G K`, `p x p`.
    pub averaging_kernel: DMatrix<f64>,
    pub bias_multipliers: DVector<f64>,
}

/// Everything about the Bayesian estimator that does not depend on `y`.
/// Building it once lets Monte Carlo studies evaluate `theta_hat` with a
/// single dot product per draw.
#[derive(Debug, Clone)]
pub struct BayesOperator {
    whitened: WhitenedProblem,
    normal: Cholesky<f64, Dyn>,
    sa_inv_mu: DVector<f64>,
    mu_a: DVector<f64>,
    kv: DVector<f64>,
    offset: f64,
    posterior_sd: f64,
    standard_error: f64,
    m: DVector<f64>,
}

impl BayesOperator {
    pub fn new(problem: &LinearProblem, prior: &PriorModel) -> Result<Self> {
        Self::from_whitened(whiten_operator(problem)?, prior)
    }

    pub fn from_whitened(whitened: WhitenedProblem, prior: &PriorModel) -> Result<Self> {
        prior.check_dim(whitened.p())?;
        let sa_chol = prior
            .sigma_a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::CholeskyFailure("sigma_a".into()))?;
        let sa_inv = sa_chol.inverse();
        let ktk = whitened.k_w.tr_mul(&whitened.k_w);
        let normal = (&ktk + &sa_inv).cholesky().ok_or(Error::SingularSystem)?;
        if normal.l_dirty().diagonal().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::SingularSystem);
        }
        let sa_inv_mu = sa_chol.solve(&prior.mu_a);
        let v = normal.solve(&whitened.h);
        let kv = &whitened.k_w * &v;
        let offset = v.dot(&sa_inv_mu);
        let posterior_sd = whitened.h.dot(&v).sqrt();
        let standard_error = kv.norm();
        let m = &ktk * &v - &whitened.h;
        Ok(BayesOperator {
            whitened,
            normal,
            sa_inv_mu,
            mu_a: prior.mu_a.clone(),
            kv,
            offset,
            posterior_sd,
            standard_error,
            m,
        })
    }

    pub fn whitened(&self) -> &WhitenedProblem {
        &self.whitened
    }

    pub fn posterior_sd(&self) -> f64 {
        self.posterior_sd
    }

    pub fn standard_error(&self) -> f64 {
        self.standard_error
    }

    pub fn bias_multipliers(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn bias(&self, x_true: &DVector<f64>) -> Result<f64> {
        if x_true.len() != self.m.len() {
            return Err(Error::dim("x_true", self.m.len(), x_true.len()));
        }
        Ok(self.m.dot(&(x_true - &self.mu_a)))
    }

    /// `theta_hat` from a whitened observation.
    pub fn theta_hat_whitened(&self, y_w: &DVector<f64>) -> f64 {
        self.kv.dot(y_w) + self.offset
    }

    /// Posterior mode from a whitened observation.
    pub fn x_hat_whitened(&self, y_w: &DVector<f64>) -> DVector<f64> {
        let rhs = self.whitened.k_w.tr_mul(y_w) + &self.sa_inv_mu;
        self.normal.solve(&rhs)
    }

    pub fn interval(&self, theta_hat: f64, alpha: f64) -> (f64, f64) {
        let half = z_two_sided(alpha) * self.posterior_sd;
        (theta_hat - half, theta_hat + half)
    }

    /// Analytic frequentist coverage of the credible interval at `x_true`.
    pub fn coverage(&self, x_true: &DVector<f64>, alpha: f64) -> Result<f64> {
        Ok(bayes_coverage(self.bias(x_true)?, self.standard_error, self.posterior_sd, alpha))
    }

    pub fn retrieve(&self, y: &DVector<f64>, alpha: f64) -> Result<BayesResult> {
        check_alpha(alpha)?;
        let y_w = self.whitened.whiten_obs(y)?;
        let x_hat = self.x_hat_whitened(&y_w);
        let theta_hat = self.whitened.h.dot(&x_hat);
        // G = N^{-1} K_w^T L^{-1}; (L^{-1})^T K_w = L^{-T} K_w.
        let kt_linv = self.whitened.chol_l.solve_mat_transposed(&self.whitened.k_w).transpose();
        let gain_matrix = self.normal.solve(&kt_linv);
        let averaging_kernel = self.normal.solve(&self.whitened.k_w.tr_mul(&self.whitened.k_w));
        Ok(BayesResult {
            x_hat,
            theta_hat,
            posterior_sd: self.posterior_sd,
            standard_error: self.standard_error,
            credible_interval: self.interval(theta_hat, alpha),
            gain_matrix,
            averaging_kernel,
            bias_multipliers: self.m.clone(),
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// MAP retrieval and `1 - alpha` credible interval for `theta = h^T x`.
pub fn bayes_retrieve(problem: &LinearProblem, prior: &PriorModel, y: &DVector<f64>, alpha: f64) -> Result<BayesResult> {
    BayesOperator::new(problem, prior)?.retrieve(y, alpha)
}

/// `m = (A_k^T - I) h`; the bias of `theta_hat` is `m^T (x - mu_a)`.
pub fn bias_multipliers(problem: &LinearProblem, prior: &PriorModel) -> Result<DVector<f64>> {
    Ok(BayesOperator::new(problem, prior)?.m)
}

pub fn bayes_bias(problem: &LinearProblem, prior: &PriorModel, x_true: &DVector<f64>) -> Result<f64> {
    BayesOperator::new(problem, prior)?.bias(x_true)
}

/// Frequentist coverage of the credible interval `theta_hat -/+ z sigma` when
/// `theta_hat ~ N(theta + bias, se^2)`.
pub fn bayes_coverage(bias: f64, standard_error: f64, posterior_sd: f64, alpha: f64) -> f64 {
    assert!(standard_error > 0.0 && posterior_sd > 0.0, "standard deviations must be positive");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    let z = z_two_sided(alpha);
    // Work with |b| so that the function is exactly even in the bias.
    let b = bias.abs() / standard_error;
    let w = z * posterior_sd / standard_error;
    // Phi(b + w) - Phi(b - w) = Phi(w - b) - Phi(-w - b), in the tail-safe form.
    normal_cdf(w - b) - normal_cdf(-w - b)
}

/// Mean and variance of the bias `m^T (x - mu_a)` when `x ~ N(mu_x, sigma_x)`.
pub fn bias_distribution(problem: &LinearProblem, prior: &PriorModel, generative: &GenerativeModel) -> Result<(f64, f64)> {
    let op = BayesOperator::new(problem, prior)?;
    op.bias_distribution(generative)
}

impl BayesOperator {
    pub fn bias_distribution(&self, generative: &GenerativeModel) -> Result<(f64, f64)> {
        let p = self.m.len();
        if generative.mu_x.len() != p {
            return Err(Error::dim("mu_x", p, generative.mu_x.len()));
        }
        let mean = self.m.dot(&(&generative.mu_x - &self.mu_a));
        let variance = self.m.dot(&(&generative.sigma_x * &self.m));
        Ok((mean, variance.max(0.0)))
    }
}

//! Problem definition, noise whitening, spectral analysis and the linear
//! functional of interest.
//!
//! Everything downstream of this module works on the whitened problem
//! `y_w = K_w x + e`, `e ~ N(0, I)`, obtained from the Cholesky factor of the
//! noise covariance. Raw-covariance code paths live only here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative threshold on `sigma_1` used to decide numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Observation noise covariance. Diagonal covariances are the common case and
/// are kept as a vector of variances.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl NoiseCovariance {
    pub fn dim(&self) -> usize {
        match self {
            NoiseCovariance::Diagonal(v) => v.len(),
            NoiseCovariance::Dense(m) => m.nrows(),
        }
    }

    pub fn identity(n: usize) -> Self {
        NoiseCovariance::Diagonal(DVector::from_element(n, 1.0))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            NoiseCovariance::Diagonal(v) => DMatrix::from_diagonal(v),
            NoiseCovariance::Dense(m) => m.clone(),
        }
    }

    fn cholesky(&self) -> Result<NoiseFactor> {
        match self {
            NoiseCovariance::Diagonal(v) => {
                if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::CholeskyFailure("noise_cov_diag".into()));
                }
                Ok(NoiseFactor::Diagonal(v.map(f64::sqrt)))
            }
            NoiseCovariance::Dense(m) => {
                if !linalg::is_symmetric(m, 1e-12) {
                    return Err(Error::CholeskyFailure("noise_cov (not symmetric)".into()));
                }
                let chol = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::CholeskyFailure("noise_cov".into()))?;
                Ok(NoiseFactor::Lower(chol.l()))
            }
        }
    }
}

/// Lower-triangular factor `L` with `L L^T = noise_cov`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFactor {
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

impl NoiseFactor {
    /// `L^{-1} v`
    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseFactor::Diagonal(sd) => v.component_div(sd),
            NoiseFactor::Lower(l) => l
                .solve_lower_triangular(v)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `L^{-1} M`
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NoiseFactor::Diagonal(sd) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= sd[i];
                }
                out
            }
            NoiseFactor::Lower(l) => l
                .solve_lower_triangular(m)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `L^{-T} M`
    pub fn solve_mat_transposed(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NoiseFactor::Diagonal(_) => self.solve_mat(m),
            NoiseFactor::Lower(l) => l
                .tr_solve_lower_triangular(m)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `L v`
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseFactor::Diagonal(sd) => v.component_mul(sd),
            NoiseFactor::Lower(l) => l * v,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            NoiseFactor::Diagonal(sd) => DMatrix::from_diagonal(sd),
            NoiseFactor::Lower(l) => l.clone(),
        }
    }
}

/// The inference problem `y = K x + e`, `e ~ N(0, noise_cov)`, with target
/// functional `theta = h^T x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    k: DMatrix<f64>,
    noise_cov: NoiseCovariance,
    h: DVector<f64>,
    labels: Option<Vec<String>>,
}

impl LinearProblem {
    pub fn new(k: DMatrix<f64>, noise_cov: NoiseCovariance, h: DVector<f64>) -> Result<Self> {
        Self::with_labels(k, noise_cov, h, None)
    }

    pub fn with_labels(
        k: DMatrix<f64>,
        noise_cov: NoiseCovariance,
        h: DVector<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = k.shape();
        if n == 0 || p == 0 {
            return Err(Error::invalid("K", "matrix must have at least one row and one column"));
        }
        if noise_cov.dim() != n {
            return Err(Error::dim("noise_cov", n, noise_cov.dim()));
        }
        if let NoiseCovariance::Dense(m) = &noise_cov {
            if m.ncols() != n {
                return Err(Error::dim("noise_cov (columns)", n, m.ncols()));
            }
        }
        if h.len() != p {
            return Err(Error::dim("h", p, h.len()));
        }
        if let Some(l) = &labels {
            if l.len() != p {
                return Err(Error::dim("labels", p, l.len()));
            }
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("K", "contains non-finite entries"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("h", "contains non-finite entries"));
        }
        if h.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid("h", "functional weights are identically zero"));
        }
        noise_cov.cholesky()?;
        Ok(LinearProblem {
            k,
            noise_cov,
            h,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn p(&self) -> usize {
        self.k.ncols()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn noise_cov(&self) -> &NoiseCovariance {
        &self.noise_cov
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Label of state element `i`, falling back to `x{i+1}`.
    pub fn label(&self, i: usize) -> String {
        self.labels
            .as_ref()
            .and_then(|l| l.get(i).cloned())
            .unwrap_or_else(|| format!("x{}", i + 1))
    }

    /// Index of the state element named `name`, also accepting `x{k}` (1-based).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        if let Some(labels) = &self.labels {
            if let Some(i) = labels.iter().position(|l| l == name) {
                return Some(i);
            }
        }
        name.strip_prefix('x')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= self.p())
            .map(|k| k - 1)
    }

    /// Same problem with a different functional.
    pub fn with_h(&self, h: DVector<f64>) -> Result<Self> {
        Self::with_labels(self.k.clone(), self.noise_cov.clone(), h, self.labels.clone())
    }
}

/// Noise-whitened operator `K_w = L^{-1} K` together with the factor `L`.
#[derive(Debug, Clone)]
pub struct WhitenedProblem {
    pub k_w: DMatrix<f64>,
    pub h: DVector<f64>,
    pub chol_l: NoiseFactor,
}

impl WhitenedProblem {
    /// Whitened problem for an identity-covariance operator.
    pub fn from_whitened(k_w: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = k_w.nrows();
        let problem = LinearProblem::new(k_w, NoiseCovariance::identity(n), h)?;
        Ok(whiten_operator(&problem)?)
    }

    pub fn n(&self) -> usize {
        self.k_w.nrows()
    }

    pub fn p(&self) -> usize {
        self.k_w.ncols()
    }

    /// `y_w = L^{-1} y`
    pub fn whiten_obs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n() {
            return Err(Error::dim("y", self.n(), y.len()));
        }
        Ok(self.chol_l.solve_vec(y))
    }
}

/// Whiten the operator only; observations are transformed later with
/// [`WhitenedProblem::whiten_obs`].
pub fn whiten_operator(problem: &LinearProblem) -> Result<WhitenedProblem> {
    let chol_l = problem.noise_cov.cholesky()?;
    let k_w = chol_l.solve_mat(&problem.k);
    Ok(WhitenedProblem {
        k_w,
        h: problem.h.clone(),
        chol_l,
    })
}

/// Transform `(K, y)` so that the noise has identity covariance.
pub fn whiten(problem: &LinearProblem, y: &DVector<f64>) -> Result<(WhitenedProblem, DVector<f64>)> {
    let w = whiten_operator(problem)?;
    let y_w = w.whiten_obs(y)?;
    Ok((w, y_w))
}

/// Singular spectrum of the whitened operator.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub numeric_rank: usize,
    pub condition_number: f64,
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SpectralSummary {
    /// Right singular vectors spanning the numerical null space, `p x (p - rank)`.
    pub fn null_space(&self) -> DMatrix<f64> {
        let p = self.v.nrows();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for j in self.numeric_rank..self.v.ncols() {
            cols.push(self.v.column(j).into_owned());
        }
        // Thin SVD with n < p leaves directions without a singular value.
        if self.v.ncols() < p {
            let extra = linalg::orthogonal_complement(&self.v);
            for j in 0..extra.ncols() {
                cols.push(extra.column(j).into_owned());
            }
        }
        if cols.is_empty() {
            DMatrix::zeros(p, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

pub fn spectral_summary(problem: &LinearProblem, rank_tol: f64) -> Result<SpectralSummary> {
    let w = whiten_operator(problem)?;
    Ok(spectral_summary_whitened(&w.k_w, rank_tol))
}

pub fn spectral_summary_whitened(k_w: &DMatrix<f64>, rank_tol: f64) -> SpectralSummary {
    assert!(rank_tol > 0.0, "rank_tol must be positive");
    let (u, d, v) = linalg::thin_svd(k_w);
    let s1 = d.get(0).copied().unwrap_or(0.0);
    let numeric_rank = d.iter().filter(|&&s| s > rank_tol * s1).count();
    let condition_number = if numeric_rank == 0 {
        f64::INFINITY
    } else {
        s1 / d[numeric_rank - 1]
    };
    SpectralSummary {
        singular_values: d.iter().copied().collect(),
        numeric_rank,
        condition_number,
        u,
        d,
        v,
    }
}

/// `theta = h^T x`
pub fn apply_functional(h: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if h.len() != x.len() {
        return Err(Error::dim("x", h.len(), x.len()));
    }
    Ok(h.dot(x))
}

/// Uniform-average weights over `support` with the two boundary entries at
/// half the interior weight, normalised to sum to one.
pub fn boundary_halved_average(p: usize, support: std::ops::Range<usize>) -> Result<DVector<f64>> {
    if support.is_empty() || support.end > p {
        return Err(Error::invalid("support", format!("range {support:?} invalid for p = {p}")));
    }
    let mut h = DVector::zeros(p);
    let len = support.len();
    for (j, i) in support.clone().enumerate() {
        h[i] = if len > 1 && (j == 0 || j == len - 1) { 0.5 } else { 1.0 };
    }
    let s = h.sum();
    h /= s;
    Ok(h)
}

// ---------------------------------------------------------------------------
// Interchange format

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cov_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cov: Option<Vec<Vec<f64>>>,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ProblemFile {
    pub fn from_problem(problem: &LinearProblem) -> Self {
        let (noise_cov_diag, noise_cov) = match &problem.noise_cov {
            NoiseCovariance::Diagonal(v) => (Some(v.iter().copied().collect()), None),
            NoiseCovariance::Dense(m) => (None, Some(linalg::to_rows(m))),
        };
        ProblemFile {
            n: problem.n(),
            p: problem.p(),
            k: linalg::to_rows(&problem.k),
            noise_cov_diag,
            noise_cov,
            h: problem.h.iter().copied().collect(),
            labels: problem.labels.clone(),
        }
    }

    pub fn into_problem(self) -> Result<LinearProblem> {
        let k = linalg::from_rows("K", &self.k, self.n, self.p)?;
        let noise_cov = match (self.noise_cov_diag, self.noise_cov) {
            (Some(d), None) => {
                if d.len() != self.n {
                    return Err(Error::dim("noise_cov_diag", self.n, d.len()));
                }
                NoiseCovariance::Diagonal(DVector::from_vec(d))
            }
            (None, Some(m)) => NoiseCovariance::Dense(linalg::from_rows("noise_cov", &m, self.n, self.n)?),
            (Some(_), Some(_)) => {
                return Err(Error::invalid("noise_cov", "give exactly one of `noise_cov_diag` and `noise_cov`"))
            }
            (None, None) => {
                return Err(Error::invalid("noise_cov", "missing: give `noise_cov_diag` or `noise_cov`"))
            }
        };
        if self.h.len() != self.p {
            return Err(Error::dim("h", self.p, self.h.len()));
        }
        LinearProblem::with_labels(k, noise_cov, DVector::from_vec(self.h), self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_covariance_leaves_problem_unchanged() {
        let k = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = LinearProblem::new(k.clone(), NoiseCovariance::identity(3), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let (w, yw) = whiten(&p, &y).unwrap();
        assert_eq!(w.k_w, k);
        assert_eq!(yw, y);
    }

    #[test]
    fn scalar_whitening() {
        let p = LinearProblem::new(
            dmatrix![2.0],
            NoiseCovariance::Diagonal(DVector::from_vec(vec![4.0])),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let (w, yw) = whiten(&p, &DVector::from_vec(vec![6.0])).unwrap();
        assert_eq!(w.k_w[(0, 0)], 1.0);
        assert_eq!(yw[0], 3.0);
    }

    #[test]
    fn dense_whitening_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(5, &mut rng);
        let k = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
        let p = LinearProblem::new(k.clone(), NoiseCovariance::Dense(cov.clone()), DVector::from_element(3, 1.0)).unwrap();
        let (w, yw) = whiten(&p, &y).unwrap();
        // Independent factor.
        let l = cov.cholesky().unwrap().l();
        assert!((&l * &w.k_w - &k).abs().max() <= 1e-10 * k.abs().max());
        assert!((&l * &yw - &y).abs().max() <= 1e-10);
    }

    #[test]
    fn whitened_misfit_equals_mahalanobis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cov = random_spd(6, &mut rng);
        let k = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let p = LinearProblem::new(k.clone(), NoiseCovariance::Dense(cov.clone()), DVector::from_element(4, 0.25)).unwrap();
        let (w, yw) = whiten(&p, &y).unwrap();
        let cov_inv = cov.try_inverse().unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let r = &y - &k * &x;
            let mahal = (r.transpose() * &cov_inv * &r)[(0, 0)];
            let white = (&yw - &w.k_w * &x).norm_squared();
            assert_relative_eq!(white, mahal, max_relative = 1e-8);
        }
    }

    #[test]
    fn rejects_non_pd_noise() {
        let err = LinearProblem::new(
            dmatrix![1.0],
            NoiseCovariance::Dense(dmatrix![-1.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CholeskyFailure(_)));
    }

    #[test]
    fn rejects_zero_functional_and_bad_dims() {
        assert!(LinearProblem::new(dmatrix![1.0], NoiseCovariance::identity(1), DVector::zeros(1)).is_err());
        let err = LinearProblem::new(dmatrix![1.0, 2.0], NoiseCovariance::identity(1), DVector::zeros(3)).unwrap_err();
        assert!(err.to_string().contains("`h`"), "{err}");
    }

    #[test]
    fn spectrum_of_identity() {
        let p = LinearProblem::new(DMatrix::identity(3, 3), NoiseCovariance::identity(3), DVector::from_element(3, 1.0)).unwrap();
        let s = spectral_summary(&p, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.singular_values, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.numeric_rank, 3);
        assert_eq!(s.condition_number, 1.0);
    }

    #[test]
    fn threshold_drops_tiny_singular_value() {
        let k = dmatrix![1.0, 0.0; 0.0, 1e-13];
        let p = LinearProblem::new(k, NoiseCovariance::identity(2), DVector::from_element(2, 1.0)).unwrap();
        let s = spectral_summary(&p, 1e-10).unwrap();
        assert_eq!(s.numeric_rank, 1);
        assert_eq!(s.condition_number, 1.0);
        assert_eq!(s.null_space().ncols(), 1);
    }

    #[test]
    fn spectrum_reconstructs_and_is_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = DMatrix::from_fn(9, 4, |_, _| rng.random_range(-1.0..1.0));
        let p = LinearProblem::new(k.clone(), NoiseCovariance::identity(9), DVector::from_element(4, 1.0)).unwrap();
        let s = spectral_summary(&p, DEFAULT_RANK_TOL).unwrap();
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let rec = &s.u * DMatrix::from_diagonal(&s.d) * s.v.transpose();
        assert!((rec - &k).norm() <= 1e-8 * k.norm());
    }

    #[test]
    fn condition_number_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let var = DVector::from_fn(6, |_, _| rng.random_range(0.5..2.0));
        let perm = [3usize, 0, 5, 1, 4, 2];
        let kp = DMatrix::from_fn(6, 3, |i, j| k[(perm[i], j)]);
        let vp = DVector::from_fn(6, |i, _| var[perm[i]]);
        let h = DVector::from_element(3, 1.0);
        let a = spectral_summary(&LinearProblem::new(k, NoiseCovariance::Diagonal(var), h.clone()).unwrap(), 1e-10).unwrap();
        let b = spectral_summary(&LinearProblem::new(kp, NoiseCovariance::Diagonal(vp), h).unwrap(), 1e-10).unwrap();
        assert_relative_eq!(a.condition_number, b.condition_number, max_relative = 1e-10);
    }

    #[test]
    fn functional_examples() {
        let mut x = DVector::from_element(39, 1.0);
        x[0] = 7.0;
        let mut e1 = DVector::zeros(39);
        e1[0] = 1.0;
        assert_eq!(apply_functional(&e1, &x).unwrap(), 7.0);

        let h = boundary_halved_average(39, 0..20).unwrap();
        assert_relative_eq!(h.sum(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(h[0], 0.5 / 19.0, epsilon = 1e-15);
        assert_relative_eq!(h[5], 1.0 / 19.0, epsilon = 1e-15);
        assert_eq!(h[20], 0.0);
        let c = DVector::from_element(39, 400.0);
        assert_relative_eq!(apply_functional(&h, &c).unwrap(), 400.0, epsilon = 1e-10);

        assert!(apply_functional(&h, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn functional_matches_loop_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = rng.random_range(1..60);
            let h = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
            let x = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
            let mut acc = 0.0;
            for i in 0..p {
                acc += h[i] * x[i];
            }
            assert!((apply_functional(&h, &x).unwrap() - acc).abs() <= 1e-12 * (1.0 + acc.abs()));
        }
    }

    #[test]
    fn problem_file_rejects_inconsistent_dims() {
        let json = r#"{"n":2,"p":2,"K":[[1,0],[0,1,3]],"noise_cov_diag":[1,1],"h":[1,0]}"#;
        let f: ProblemFile = serde_json::from_str(json).unwrap();
        let err = f.into_problem().unwrap_err();
        assert!(err.to_string().contains("K"), "{err}");

        let json = r#"{"n":2,"p":2,"K":[[1,0],[0,1]],"noise_cov_diag":[1],"h":[1,0]}"#;
        let err = serde_json::from_str::<ProblemFile>(json).unwrap().into_problem().unwrap_err();
        assert!(err.to_string().contains("noise_cov_diag"), "{err}");

        let json = r#"{"n":2,"p":2,"K":[[1,0],[0,1]],"noise_cov_diag":[1,1],"h":[1,0],"labels":["a"]}"#;
        let err = serde_json::from_str::<ProblemFile>(json).unwrap().into_problem().unwrap_err();
        assert!(err.to_string().contains("labels"), "{err}");
    }

    #[test]
    fn problem_file_round_trip() {
        let p = LinearProblem::with_labels(
            dmatrix![1.0, 2.0; 3.0, 4.0; 0.5, 0.0],
            NoiseCovariance::Diagonal(DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DVector::from_vec(vec![0.5, 0.5]),
            Some(vec!["co2".into(), "psurf".into()]),
        )
        .unwrap();
        let s = serde_json::to_string(&ProblemFile::from_problem(&p)).unwrap();
        let q = serde_json::from_str::<ProblemFile>(&s).unwrap().into_problem().unwrap();
        assert_eq!(p, q);
        assert_eq!(q.index_of("psurf"), Some(1));
        assert_eq!(q.index_of("x1"), Some(0));
    }
}

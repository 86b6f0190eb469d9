//! Slack-inflated frequentist intervals for `theta = h^T x` under `A x <= b`.
//!
//! The interval endpoints minimise and maximise `h^T x` over
//! `{x : |y_w - K_w x|^2 <= r^2, A x <= b}` where the radius is
//! `r^2 = z^2 + s^2` (one-at-a-time, with `s^2` the constrained least-squares
//! residual) or a chi-square quantile (simultaneous). Each endpoint comes with
//! a Lagrange dual certificate `(w, c)` that can be checked independently.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, Cones, Status};
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{spectral_summary_whitened, WhitenedProblem, DEFAULT_RANK_TOL};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    OneAtATime,
    Simultaneous,
}

impl FromStr for RadiusMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_at_a_time" => Ok(RadiusMode::OneAtATime),
            "simultaneous" => Ok(RadiusMode::Simultaneous),
            other => Err(Error::invalid("mode", format!("unknown radius mode '{other}'"))),
        }
    }
}

impl fmt::Display for RadiusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadiusMode::OneAtATime => "one_at_a_time",
            RadiusMode::Simultaneous => "simultaneous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Lower,
    Upper,
}

impl Endpoint {
    fn label(self) -> &'static str {
        match self {
            Endpoint::Lower => "lower",
            Endpoint::Upper => "upper",
        }
    }

    /// +1 when minimising, -1 when maximising.
    fn sense(self) -> f64 {
        match self {
            Endpoint::Lower => 1.0,
            Endpoint::Upper => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalOptions {
    /// Solve on the SVD-reduced problem instead of the n-dimensional ball.
    pub reduce: bool,
    /// Use closed-form solutions when the constraints are inactive.
    pub fast_path: bool,
    pub rank_tol: f64,
    pub conic: conic::Settings,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        IntervalOptions {
            reduce: true,
            fast_path: true,
            rank_tol: DEFAULT_RANK_TOL,
            conic: conic::Settings::default(),
        }
    }
}

/// Lagrange multipliers for one endpoint.
///
/// Lower: `h + A^T c - K^T w = 0` and objective `w^T y - r |w| - b^T c`.
/// Upper: `h - A^T c - K^T w = 0` and objective `w^T y + r |w| + b^T c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub endpoint: Endpoint,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
}

/// Outcome of re-checking a certificate from `(w, c)` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    pub stationarity: f64,
    pub min_c: f64,
    pub objective: f64,
}

impl CertificateCheck {
    pub fn passes(&self, h_norm: f64) -> bool {
        self.stationarity <= 1e-6 * (1.0 + h_norm) && self.min_c >= -1e-10 && self.objective.is_finite()
    }
}

impl DualCertificate {
    /// Dual objective and stationarity residual recomputed from scratch.
    pub fn verify(
        &self,
        problem: &WhitenedProblem,
        y_w: &DVector<f64>,
        constraints: &ConstraintSet,
        radius_sq: f64,
    ) -> Result<CertificateCheck> {
        let w = DVector::from_column_slice(&self.w);
        let c = DVector::from_column_slice(&self.c);
        if w.len() != problem.n() {
            return Err(Error::dim("certificate.w", problem.n(), w.len()));
        }
        if c.len() != constraints.q() {
            return Err(Error::dim("certificate.c", constraints.q(), c.len()));
        }
        let (stationarity, objective) = dual_terms(self.endpoint, problem, y_w, constraints, radius_sq, &w, &c);
        Ok(CertificateCheck {
            stationarity,
            min_c: c.iter().copied().fold(f64::INFINITY, f64::min),
            objective,
        })
    }
}

fn dual_terms(
    endpoint: Endpoint,
    problem: &WhitenedProblem,
    y_w: &DVector<f64>,
    constraints: &ConstraintSet,
    radius_sq: f64,
    w: &DVector<f64>,
    c: &DVector<f64>,
) -> (f64, f64) {
    let ktw = problem.k_w.tr_mul(w);
    let atc = constraints.a().tr_mul(c);
    let r = radius_sq.max(0.0).sqrt();
    let bc = constraints.b().dot(c);
    match endpoint {
        Endpoint::Lower => (
            (&problem.h + atc - ktw).norm(),
            w.dot(y_w) - r * w.norm() - bc,
        ),
        Endpoint::Upper => (
            (&problem.h - atc - ktw).norm(),
            w.dot(y_w) + r * w.norm() + bc,
        ),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub slack_iterations: usize,
    pub lower_iterations: usize,
    pub upper_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Largest relative duality gap over both endpoints.
    pub relative_gap: f64,
    /// All three programs were solved in closed form.
    pub closed_form: bool,
    /// The solver stopped at its looser tolerance on some program.
    pub near_optimal: bool,
    pub reduced: bool,
    pub numeric_rank: usize,
    /// `|(I - U U^T) y_w|^2` removed by the reduction.
    pub tail_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalResult {
    pub lower: f64,
    pub upper: f64,
    pub slack_sq: f64,
    pub radius_sq: f64,
    pub x_feas: DVector<f64>,
    pub x_at_lower: DVector<f64>,
    pub x_at_upper: DVector<f64>,
    pub dual_lower: DualCertificate,
    pub dual_upper: DualCertificate,
    /// Both certificates re-verified within tolerance.
    pub certified: bool,
    pub solver_stats: SolverStats,
}

impl IntervalResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// Radius for the given mode; `slack_sq` is ignored in simultaneous mode.
pub fn radius_sq(mode: RadiusMode, alpha: f64, n: usize, slack_sq: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(match mode {
        RadiusMode::OneAtATime => {
            let z = stats::z_two_sided(alpha);
            z * z + slack_sq
        }
        RadiusMode::Simultaneous => stats::chi2_quantile(n as f64, 1.0 - alpha),
    })
}

// ---------------------------------------------------------------------------
// SVD reduction

/// `|y_w - K_w x|^2 = |y_top - diag(d) V^T x|^2 + tail_sq` for every `x`.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    pub y_top: DVector<f64>,
    pub tail_sq: f64,
}

impl ReducedProblem {
    /// `diag(d) V^T`
    pub fn operator(&self) -> DMatrix<f64> {
        let mut m = self.v.transpose();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row.scale_mut(self.d[i]);
        }
        m
    }

    pub fn residual_sq(&self, x: &DVector<f64>) -> f64 {
        (&self.y_top - self.operator() * x).norm_squared() + self.tail_sq
    }
}

pub fn svd_reduce(problem: &WhitenedProblem, y_w: &DVector<f64>) -> Result<ReducedProblem> {
    if y_w.len() != problem.n() {
        return Err(Error::dim("y_w", problem.n(), y_w.len()));
    }
    let (u, d, v) = linalg::thin_svd(&problem.k_w);
    let y_top = u.tr_mul(y_w);
    let tail_sq = (y_w - &u * &y_top).norm_squared();
    Ok(ReducedProblem { d, v, y_top, tail_sq })
}

// ---------------------------------------------------------------------------
// Prepared solver

/// Unconstrained least squares on the restricted operator. When `M` has a
/// null space the minimiser set is `xi_ls + N eta`; `h` must not see `N`
/// for the closed forms to apply.
#[derive(Debug, Clone)]
struct LeastSquares {
    /// Orthonormal basis of the row space of `M`.
    range: DMatrix<f64>,
    null: DMatrix<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    /// `(M^T M)^+ h`
    hinv_h: DVector<f64>,
    /// `h^T (M^T M)^+ h`
    sigma_h_sq: f64,
}

impl LeastSquares {
    fn new(m: &DMatrix<f64>, h: &DVector<f64>, rank_tol: f64) -> Option<Self> {
        let p = m.ncols();
        if p == 0 || m.nrows() == 0 {
            return None;
        }
        let (_, d, v) = linalg::thin_svd(m);
        let rank = d.iter().filter(|&&s| s > rank_tol * d[0]).count();
        if rank == 0 {
            return None;
        }
        let range = v.columns(0, rank).into_owned();
        let null = linalg::orthogonal_complement(&range);
        if null.ncols() > 0 && null.tr_mul(h).norm() > 1e-8 * h.norm() {
            return None;
        }
        let qr = (m * &range).qr();
        let r = qr.r();
        let h_r = range.tr_mul(h);
        let rt_h = r.tr_solve_upper_triangular(&h_r)?;
        let hinv_h = &range * r.solve_upper_triangular(&rt_h)?;
        Some(LeastSquares {
            range,
            null,
            qr,
            r,
            sigma_h_sq: rt_h.norm_squared(),
            hinv_h,
        })
    }

    /// Minimum-norm least-squares solution.
    fn solve(&self, g: &DVector<f64>) -> DVector<f64> {
        let p = self.r.ncols();
        let mut qtg = g.clone();
        self.qr.q_tr_mul(&mut qtg);
        let u = self
            .r
            .solve_upper_triangular(&qtg.rows(0, p).into_owned())
            .expect("nonsingular R checked at construction");
        &self.range * u
    }
}

/// Data for a single endpoint or slack solve, in restricted coordinates.
struct EndpointSolution {
    value: f64,
    xi: DVector<f64>,
    /// Multiplier in the operator's row space (before lifting).
    w_k: DVector<f64>,
    c: DVector<f64>,
    iterations: usize,
    pres: f64,
    dres: f64,
    near: bool,
}

/// Reusable solver for one `(K_w, h, A, b)`; only `y_w` changes per call.
///
/// Construction whitens nothing: it expects the whitened operator. It
/// eliminates fixed coordinates, restricts to the complement of directions
/// that neither the data nor the constraints see, precomputes the SVD
/// reduction and decides once whether either endpoint is unbounded.
#[derive(Debug, Clone)]
pub struct IntervalSolver {
    problem: WhitenedProblem,
    constraints: ConstraintSet,
    options: IntervalOptions,
    n: usize,
    p: usize,
    free: Vec<usize>,
    /// `(index, value)` of coordinates pinned by the constraints.
    fixed: Vec<(usize, f64)>,
    x_fixed: DVector<f64>,
    k_fixed: DVector<f64>,
    /// Orthonormal basis of the free coordinates kept by the solver.
    basis: DMatrix<f64>,
    kept_rows: Vec<usize>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    m: DMatrix<f64>,
    /// Left singular vectors for the reduced path.
    u: Option<DMatrix<f64>>,
    h_red: DVector<f64>,
    ls: Option<LeastSquares>,
    numeric_rank: usize,
    unbounded: [Option<f64>; 2],
}

impl IntervalSolver {
    pub fn new(problem: &WhitenedProblem, constraints: &ConstraintSet, options: IntervalOptions) -> Result<Self> {
        let (n, p) = problem.k_w.shape();
        if constraints.p() != p {
            return Err(Error::dim("constraints", p, constraints.p()));
        }
        if !(options.rank_tol > 0.0) {
            return Err(Error::invalid("rank_tol", "must be positive"));
        }

        // Coordinates pinned to a single value are substituted out.
        let bounds = constraints.coordinate_bounds();
        let mut fixed = Vec::new();
        let mut free = Vec::new();
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if lo > hi {
                return Err(Error::InfeasibleConstraints { residual: lo - hi });
            }
            if lo == hi {
                fixed.push((i, lo));
            } else {
                free.push(i);
            }
        }
        let mut x_fixed = DVector::zeros(p);
        for &(i, v) in &fixed {
            x_fixed[i] = v;
        }
        let k_fixed = &problem.k_w * &x_fixed;
        let select_cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), free.len(), |i, j| m[(i, free[j])]);
        let k_f = select_cols(&problem.k_w);
        let h_f = DVector::from_fn(free.len(), |j, _| problem.h[free[j]]);

        let a_all = select_cols(constraints.a());
        let b_all = constraints.b() - constraints.a() * &x_fixed;
        let mut kept_rows = Vec::new();
        for i in 0..constraints.q() {
            let scale = constraints.a().row(i).abs().max().max(1.0);
            if a_all.row(i).abs().max() > 1e-14 * scale {
                kept_rows.push(i);
            } else if b_all[i] < -1e-12 * (1.0 + constraints.b()[i].abs()) {
                return Err(Error::InfeasibleConstraints { residual: -b_all[i] });
            }
        }
        let a_f = DMatrix::from_fn(kept_rows.len(), free.len(), |i, j| a_all[(kept_rows[i], j)]);
        let b_kept = DVector::from_fn(kept_rows.len(), |i, _| b_all[kept_rows[i]]);

        // Directions invisible to the data.
        let spec = spectral_summary_whitened(&k_f, options.rank_tol);
        let numeric_rank = spec.numeric_rank;
        let null = if free.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            spec.null_space()
        };
        let mut unbounded = [None, None];
        let mut basis = DMatrix::identity(free.len(), free.len());
        if null.ncols() > 0 {
            let h_scale = h_f.norm().max(f64::MIN_POSITIVE);
            let hn = null.tr_mul(&h_f);
            let an = &a_f * &null;
            if an.nrows() == 0 || an.abs().max() == 0.0 {
                if hn.norm() > 1e-8 * h_scale {
                    let slope = hn.norm();
                    unbounded = [Some(-slope), Some(slope)];
                }
            } else {
                for (slot, sense) in [(0, 1.0), (1, -1.0)] {
                    let opt = recession_lp(&an, &(&hn * sense), &options.conic)?;
                    if opt < -1e-8 * h_scale {
                        unbounded[slot] = Some(opt * sense);
                    }
                }
            }
            // Null directions that the constraints also ignore can be dropped
            // when h does not see them; otherwise the endpoint is unbounded
            // and that is reported when an endpoint is requested.
            let an_tol = 1e-7 * an.abs().max().max(1.0);
            let z_inner = if an.nrows() == 0 {
                DMatrix::identity(null.ncols(), null.ncols())
            } else {
                linalg::null_space(&an, an_tol)
            };
            if z_inner.ncols() > 0 {
                let z = &null * z_inner;
                basis = linalg::orthogonal_complement(&z);
            }
        }

        let a = &a_f * &basis;
        let h_red = basis.tr_mul(&h_f);
        let (m, u) = if options.reduce {
            let r = numeric_rank;
            let u_r = spec.u.columns(0, r).into_owned();
            let mut m = spec.v.columns(0, r).transpose() * &basis;
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row.scale_mut(spec.d[i]);
            }
            (m, Some(u_r))
        } else {
            (&k_f * &basis, None)
        };
        let ls = LeastSquares::new(&m, &h_red, options.rank_tol);

        Ok(IntervalSolver {
            problem: problem.clone(),
            constraints: constraints.clone(),
            options,
            n,
            p,
            free,
            fixed,
            x_fixed,
            k_fixed,
            basis,
            kept_rows,
            a,
            b: b_kept,
            m,
            u,
            h_red,
            ls,
            numeric_rank,
            unbounded,
        })
    }

    pub fn problem(&self) -> &WhitenedProblem {
        &self.problem
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn numeric_rank(&self) -> usize {
        self.numeric_rank
    }

    /// `(g, tail_sq, y')` for an observation.
    fn project(&self, y_w: &DVector<f64>) -> Result<(DVector<f64>, f64, DVector<f64>)> {
        if y_w.len() != self.n {
            return Err(Error::dim("y_w", self.n, y_w.len()));
        }
        if y_w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("y_w", "contains non-finite entries"));
        }
        let y = y_w - &self.k_fixed;
        Ok(match &self.u {
            Some(u) => {
                let g = u.tr_mul(&y);
                let tail = (&y - u * &g).norm_squared();
                (g, tail, y)
            }
            None => (y.clone(), 0.0, y),
        })
    }

    fn embed(&self, xi: &DVector<f64>) -> DVector<f64> {
        let mut x = self.x_fixed.clone();
        if !self.free.is_empty() {
            let xf = &self.basis * xi;
            for (j, &i) in self.free.iter().enumerate() {
                x[i] = xf[j];
            }
        }
        x
    }

    fn feasible(&self, xi: &DVector<f64>, tol: f64) -> bool {
        if self.a.nrows() == 0 {
            return true;
        }
        let ax = &self.a * xi;
        (0..ax.len()).all(|i| ax[i] <= self.b[i] + tol * (1.0 + self.b[i].abs()))
    }

    /// Move `xi` along the null space of `M` into `A xi <= b` if possible.
    /// Handles null spaces of dimension at most one exactly.
    fn shift_feasible(&self, ls: &LeastSquares, xi: DVector<f64>) -> Option<DVector<f64>> {
        const TOL: f64 = 1e-12;
        if self.feasible(&xi, TOL) {
            return Some(xi);
        }
        if ls.null.ncols() != 1 {
            return None;
        }
        let dir = ls.null.column(0);
        let room = &self.b - &self.a * &xi;
        let slope = &self.a * dir;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..room.len() {
            let tol = TOL * (1.0 + self.b[i].abs());
            let row_scale = self.a.row(i).amax();
            if slope[i].abs() <= 1e-12 * row_scale {
                if room[i] < -tol {
                    return None;
                }
            } else if slope[i] > 0.0 {
                hi = hi.min(room[i] / slope[i]);
            } else {
                lo = lo.max(room[i] / slope[i]);
            }
        }
        if lo > hi {
            return None;
        }
        let eta = if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            0.0_f64.clamp(lo, hi)
        };
        let out = xi + dir * eta;
        self.feasible(&out, TOL).then_some(out)
    }

    /// Minimum of `|y_w - K_w x|^2` over the constraint set and a minimiser.
    pub fn slack(&self, y_w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (g, tail, _) = self.project(y_w)?;
        let sol = self.slack_restricted(&g)?;
        Ok((sol.value + tail, self.embed(&sol.xi)))
    }

    fn slack_restricted(&self, g: &DVector<f64>) -> Result<EndpointSolution> {
        let pv = self.m.ncols();
        let closed = |xi: DVector<f64>| EndpointSolution {
            value: (g - &self.m * &xi).norm_squared(),
            xi,
            w_k: DVector::zeros(0),
            c: DVector::zeros(self.a.nrows()),
            iterations: 0,
            pres: 0.0,
            dres: 0.0,
            near: false,
        };
        if pv == 0 {
            return Ok(closed(DVector::zeros(0)));
        }
        if self.options.fast_path || self.a.nrows() == 0 {
            if let Some(ls) = &self.ls {
                if let Some(xi) = self.shift_feasible(ls, ls.solve(g)) {
                    return Ok(closed(xi));
                }
            }
        }

        // min t  s.t.  (t, g - M xi) in SOC,  A xi <= b
        let (q, k) = (self.a.nrows(), self.m.nrows());
        let mut gm = DMatrix::zeros(q + 1 + k, 1 + pv);
        gm.view_mut((0, 1), (q, pv)).copy_from(&self.a);
        gm[(q, 0)] = -1.0;
        gm.view_mut((q + 1, 1), (k, pv)).copy_from(&self.m);
        let mut hv = DVector::zeros(q + 1 + k);
        hv.rows_mut(0, q).copy_from(&self.b);
        hv.rows_mut(q + 1, k).copy_from(g);
        let mut c = DVector::zeros(1 + pv);
        c[0] = 1.0;
        let cones = Cones { nonneg: q, soc: vec![1 + k] };
        let sol = conic::solve(&c, &gm, &hv, &cones, &self.options.conic);
        match sol.status {
            Status::Optimal | Status::NearOptimal => {}
            Status::PrimalInfeasible => return Err(Error::InfeasibleConstraints { residual: sol.pres }),
            _ => {
                return Err(Error::SolverStall {
                    iterations: sol.iterations,
                    pres: sol.pres,
                    dres: sol.dres,
                    gap: sol.gap,
                })
            }
        }
        let xi_ipm = sol.x.rows(1, pv).into_owned();
        let mut best = closed(xi_ipm.clone());
        if let Some(xi) = self.polish_slack(g, &xi_ipm) {
            let cand = closed(xi);
            if cand.value <= best.value + 1e-12 * (1.0 + best.value) {
                best = cand;
            }
        }
        best.iterations = sol.iterations;
        best.pres = sol.pres;
        best.dres = sol.dres;
        best.near = sol.status == Status::NearOptimal;
        Ok(best)
    }

    /// Equality-constrained least squares on the rows active at `xi`.
    fn polish_slack(&self, g: &DVector<f64>, xi: &DVector<f64>) -> Option<DVector<f64>> {
        let slack = &self.b - &self.a * xi;
        let active: Vec<usize> = (0..slack.len())
            .filter(|&i| slack[i] <= 1e-6 * (1.0 + self.b[i].abs()))
            .collect();
        let pv = self.m.ncols();
        let (xp, nb) = if active.is_empty() {
            (DVector::zeros(pv), DMatrix::identity(pv, pv))
        } else {
            let aa = DMatrix::from_fn(active.len(), pv, |i, j| self.a[(active[i], j)]);
            let ba = DVector::from_fn(active.len(), |i, _| self.b[active[i]]);
            let svd = aa.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let xp = svd.solve(&ba, 1e-12 * smax).ok()?;
            if (&aa * &xp - &ba).amax() > 1e-10 * (1.0 + ba.amax()) {
                return None;
            }
            (xp, linalg::null_space(&aa, 1e-10 * smax.max(1.0)))
        };
        let xi_new = if nb.ncols() == 0 || self.m.nrows() == 0 {
            xp
        } else {
            let mn = &self.m * &nb;
            let svd = mn.svd(true, true);
            let smax = svd.singular_values.max();
            let v = svd.solve(&(g - &self.m * &xp), 1e-13 * smax).ok()?;
            xp + nb * v
        };
        self.feasible(&xi_new, 1e-11).then_some(xi_new)
    }

    /// Interval at the radius implied by `alpha` and `mode`.
    pub fn solve(&self, y_w: &DVector<f64>, alpha: f64, mode: RadiusMode) -> Result<IntervalResult> {
        let (g, tail, y) = self.project(y_w)?;
        let slack = self.slack_restricted(&g)?;
        let slack_sq = slack.value + tail;
        let r2 = radius_sq(mode, alpha, self.n, slack_sq)?;
        self.finish(y_w, &g, tail, &y, slack, r2)
    }

    /// Interval at a caller-supplied radius.
    pub fn solve_at_radius(&self, y_w: &DVector<f64>, radius_sq: f64) -> Result<IntervalResult> {
        if !(radius_sq > 0.0 && radius_sq.is_finite()) {
            return Err(Error::invalid("radius_sq", "must be positive and finite"));
        }
        let (g, tail, y) = self.project(y_w)?;
        let slack = self.slack_restricted(&g)?;
        self.finish(y_w, &g, tail, &y, slack, radius_sq)
    }

    fn finish(
        &self,
        y_w: &DVector<f64>,
        g: &DVector<f64>,
        tail: f64,
        y: &DVector<f64>,
        slack: EndpointSolution,
        r2: f64,
    ) -> Result<IntervalResult> {
        let slack_sq = slack.value + tail;
        if r2 < slack_sq {
            return Err(Error::EmptyConfidenceSet {
                radius_sq: r2,
                slack_sq,
            });
        }
        for (slot, ep) in [(0, Endpoint::Lower), (1, Endpoint::Upper)] {
            if let Some(slope) = self.unbounded[slot] {
                return Err(Error::UnboundedFunctional {
                    direction: ep.label(),
                    slope,
                });
            }
        }
        let rho_sq = (r2 - tail).max(0.0);
        let rho = rho_sq.sqrt();

        let mut closed_form = slack.iterations == 0;
        let mut sols = Vec::with_capacity(2);
        for ep in [Endpoint::Lower, Endpoint::Upper] {
            let sol = match self.endpoint_closed_form(g, rho_sq, ep) {
                Some(s) => s,
                None => {
                    closed_form = false;
                    self.endpoint_ipm(g, rho, &slack.xi, ep)?
                }
            };
            sols.push(sol);
        }
        let upper_sol = sols.pop().expect("two endpoints");
        let lower_sol = sols.pop().expect("two endpoints");

        let mut stats = SolverStats {
            slack_iterations: slack.iterations,
            lower_iterations: lower_sol.iterations,
            upper_iterations: upper_sol.iterations,
            primal_residual: slack.pres.max(lower_sol.pres).max(upper_sol.pres),
            dual_residual: slack.dres.max(lower_sol.dres).max(upper_sol.dres),
            relative_gap: 0.0,
            closed_form,
            near_optimal: slack.near || lower_sol.near || upper_sol.near,
            reduced: self.u.is_some(),
            numeric_rank: self.numeric_rank,
            tail_sq: tail,
        };

        let mut certified = true;
        let mut out = Vec::with_capacity(2);
        let h_norm = self.problem.h.norm();
        for (ep, sol) in [(Endpoint::Lower, lower_sol), (Endpoint::Upper, upper_sol)] {
            let x = self.embed(&sol.xi);
            let value = self.problem.h.dot(&x);
            let cert = self.certificate(ep, y_w, g, y, tail, rho, r2, &sol, value);
            let check = cert.verify(&self.problem, y_w, &self.constraints, r2)?;
            let ok = check.passes(h_norm) && cert.gap <= 1e-6 * (1.0 + value.abs());
            certified &= ok;
            stats.relative_gap = stats.relative_gap.max(cert.gap / (1.0 + value.abs()));
            out.push((value, x, cert));
        }
        let (upper, x_at_upper, dual_upper) = out.pop().expect("two endpoints");
        let (lower, x_at_lower, dual_lower) = out.pop().expect("two endpoints");
        Ok(IntervalResult {
            lower: lower.min(upper),
            upper: upper.max(lower),
            slack_sq,
            radius_sq: r2,
            x_feas: self.embed(&slack.xi),
            x_at_lower,
            x_at_upper,
            dual_lower,
            dual_upper,
            certified,
            solver_stats: stats,
        })
    }

    /// Closed-form endpoint when the unconstrained ball optimum is feasible.
    fn endpoint_closed_form(&self, g: &DVector<f64>, rho_sq: f64, ep: Endpoint) -> Option<EndpointSolution> {
        if !self.options.fast_path && self.a.nrows() > 0 {
            return None;
        }
        let ls = self.ls.as_ref()?;
        let xi_ls = ls.solve(g);
        let resid = g - &self.m * &xi_ls;
        let delta_sq = rho_sq - resid.norm_squared();
        let sigma_h = ls.sigma_h_sq.sqrt();
        if !(delta_sq > 0.0) || !(sigma_h > 0.0) {
            return None;
        }
        let delta = delta_sq.sqrt();
        let sense = ep.sense();
        let xi = self.shift_feasible(ls, &xi_ls - &ls.hinv_h * (sense * delta / sigma_h))?;
        // w = M H^{-1} h plus the component along the residual that makes
        // the dual objective tight.
        let w_k = &self.m * &ls.hinv_h + &resid * (sense * sigma_h / delta);
        Some(EndpointSolution {
            value: self.h_red.dot(&xi),
            xi,
            w_k,
            c: DVector::zeros(self.a.nrows()),
            iterations: 0,
            pres: 0.0,
            dres: 0.0,
            near: false,
        })
    }

    /// Endpoint by interior point, centred on the slack minimiser.
    fn endpoint_ipm(&self, g: &DVector<f64>, rho: f64, xi0: &DVector<f64>, ep: Endpoint) -> Result<EndpointSolution> {
        let (q, k, pv) = (self.a.nrows(), self.m.nrows(), self.m.ncols());
        if pv == 0 {
            return Ok(EndpointSolution {
                value: 0.0,
                xi: DVector::zeros(0),
                w_k: DVector::zeros(k),
                c: DVector::zeros(q),
                iterations: 0,
                pres: 0.0,
                dres: 0.0,
                near: false,
            });
        }
        let g0 = g - &self.m * xi0;
        let b0 = &self.b - &self.a * xi0;
        let mut gm = DMatrix::zeros(q + 1 + k, pv);
        gm.view_mut((0, 0), (q, pv)).copy_from(&self.a);
        gm.view_mut((q + 1, 0), (k, pv)).copy_from(&self.m);
        let mut hv = DVector::zeros(q + 1 + k);
        hv.rows_mut(0, q).copy_from(&b0);
        hv[q] = rho;
        hv.rows_mut(q + 1, k).copy_from(&g0);
        let sense = ep.sense();
        let c = &self.h_red * sense;
        let cones = Cones { nonneg: q, soc: vec![1 + k] };
        let sol = conic::solve(&c, &gm, &hv, &cones, &self.options.conic);
        match sol.status {
            Status::Optimal | Status::NearOptimal => {}
            Status::DualInfeasible => {
                return Err(Error::UnboundedFunctional {
                    direction: ep.label(),
                    slope: f64::INFINITY * -sense,
                })
            }
            Status::PrimalInfeasible => return Err(Error::InfeasibleConstraints { residual: sol.pres }),
            Status::Stalled => {
                return Err(Error::SolverStall {
                    iterations: sol.iterations,
                    pres: sol.pres,
                    dres: sol.dres,
                    gap: sol.gap,
                })
            }
        }
        let step = self.repair(&g0, &b0, rho, &sol.x);
        let xi = xi0 + step;
        let z1 = sol.z.rows(q + 1, k).into_owned();
        Ok(EndpointSolution {
            value: self.h_red.dot(&xi),
            xi,
            w_k: z1 * -sense,
            c: sol.z.rows(0, q).into_owned(),
            iterations: sol.iterations,
            pres: sol.pres,
            dres: sol.dres,
            near: sol.status == Status::NearOptimal,
        })
    }

    /// Pull a step back toward the (feasible) centre until it satisfies the
    /// constraints to tight tolerance.
    fn repair(&self, g0: &DVector<f64>, b0: &DVector<f64>, rho: f64, step: &DVector<f64>) -> DVector<f64> {
        let mut t = 1.0_f64;
        let a_step = &self.a * step;
        for i in 0..a_step.len() {
            if a_step[i] > 0.0 {
                let room = b0[i] + 1e-10 * (1.0 + self.b[i].abs());
                t = t.min((room / a_step[i]).max(0.0));
            }
        }
        let d = &self.m * step;
        let dd = d.norm_squared();
        if dd > 0.0 {
            let rd = g0.dot(&d);
            let c0 = g0.norm_squared() - rho * rho * (1.0 + 1e-12);
            let disc = (rd * rd - dd * c0).max(0.0);
            let t_ball = (rd + disc.sqrt()) / dd;
            t = t.min(t_ball.max(0.0));
        }
        step * t
    }

    /// Full-space certificate from restricted multipliers.
    #[allow(clippy::too_many_arguments)]
    fn certificate(
        &self,
        ep: Endpoint,
        y_w: &DVector<f64>,
        g: &DVector<f64>,
        y: &DVector<f64>,
        tail: f64,
        rho: f64,
        r2: f64,
        sol: &EndpointSolution,
        value: f64,
    ) -> DualCertificate {
        let sense = ep.sense();
        let w = match &self.u {
            Some(u) => {
                let mut w = u * &sol.w_k;
                if tail > 0.0 && rho > 0.0 {
                    let y_perp = y - u * g;
                    w += y_perp * (sense * sol.w_k.norm() / rho);
                }
                w
            }
            None => sol.w_k.clone(),
        };
        // Multipliers for the kept rows, then the rows of pinned coordinates
        // from stationarity.
        let q_all = self.constraints.q();
        let mut c = DVector::zeros(q_all);
        for (j, &i) in self.kept_rows.iter().enumerate() {
            c[i] = sol.c[j].max(0.0);
        }
        if !self.fixed.is_empty() {
            // Lower: A^T c = K^T w - h. Upper: A^T c = h - K^T w.
            let target = (self.problem.k_w.tr_mul(&w) - &self.problem.h) * sense;
            let atc = self.constraints.a().tr_mul(&c);
            let a = self.constraints.a();
            for &(i, _) in &self.fixed {
                let need = target[i] - atc[i];
                let want_sign = need.signum();
                let row = (0..q_all).find(|&r| {
                    a[(r, i)] * want_sign > 0.0
                        && !self.kept_rows.contains(&r)
                        && (0..self.p).all(|j| j == i || a[(r, j)] == 0.0)
                });
                if let Some(r) = row {
                    c[r] += need / a[(r, i)];
                }
            }
        }
        let (_, objective) = dual_terms(ep, &self.problem, y_w, &self.constraints, r2, &w, &c);
        DualCertificate {
            endpoint: ep,
            w: w.iter().copied().collect(),
            c: c.iter().copied().collect(),
            objective,
            gap: (value - objective).abs(),
        }
    }
}

/// `min v^T eta  s.t.  A_N eta <= 0, |eta|_inf <= 1`.
fn recession_lp(an: &DMatrix<f64>, v: &DVector<f64>, settings: &conic::Settings) -> Result<f64> {
    let (q, d) = an.shape();
    let mut gm = DMatrix::zeros(q + 2 * d, d);
    gm.view_mut((0, 0), (q, d)).copy_from(an);
    let mut hv = DVector::zeros(q + 2 * d);
    for j in 0..d {
        gm[(q + j, j)] = 1.0;
        gm[(q + d + j, j)] = -1.0;
        hv[q + j] = 1.0;
        hv[q + d + j] = 1.0;
    }
    let sol = conic::solve(v, &gm, &hv, &Cones { nonneg: q + 2 * d, soc: vec![] }, settings);
    if sol.is_optimal() {
        Ok(sol.primal_objective)
    } else {
        Err(Error::SolverStall {
            iterations: sol.iterations,
            pres: sol.pres,
            dres: sol.dres,
            gap: sol.gap,
        })
    }
}

// ---------------------------------------------------------------------------
// Free-function entry points

/// `s^2` and a minimiser.
pub fn solve_slack(
    problem: &WhitenedProblem,
    y_w: &DVector<f64>,
    constraints: &ConstraintSet,
) -> Result<(f64, DVector<f64>)> {
    IntervalSolver::new(problem, constraints, IntervalOptions::default())?.slack(y_w)
}

/// Interval on the full n-dimensional ball.
pub fn solve_interval(
    problem: &WhitenedProblem,
    y_w: &DVector<f64>,
    constraints: &ConstraintSet,
    alpha: f64,
    mode: RadiusMode,
) -> Result<IntervalResult> {
    let options = IntervalOptions {
        reduce: false,
        ..IntervalOptions::default()
    };
    IntervalSolver::new(problem, constraints, options)?.solve(y_w, alpha, mode)
}

/// Interval on the SVD-reduced problem; same contract as [`solve_interval`].
pub fn solve_interval_reduced(
    problem: &WhitenedProblem,
    y_w: &DVector<f64>,
    constraints: &ConstraintSet,
    alpha: f64,
    mode: RadiusMode,
) -> Result<IntervalResult> {
    IntervalSolver::new(problem, constraints, IntervalOptions::default())?.solve(y_w, alpha, mode)
}

/// Certificate for one endpoint at a fixed radius.
pub fn dual_solve(
    problem: &WhitenedProblem,
    y_w: &DVector<f64>,
    constraints: &ConstraintSet,
    radius_sq: f64,
    endpoint: Endpoint,
) -> Result<DualCertificate> {
    let res = IntervalSolver::new(problem, constraints, IntervalOptions::default())?.solve_at_radius(y_w, radius_sq)?;
    let cert = match endpoint {
        Endpoint::Lower => res.dual_lower,
        Endpoint::Upper => res.dual_upper,
    };
    let value = match endpoint {
        Endpoint::Lower => res.lower,
        Endpoint::Upper => res.upper,
    };
    let check = cert.verify(problem, y_w, constraints, radius_sq)?;
    if !check.passes(problem.h.norm()) || cert.gap > 1e-6 * (1.0 + value.abs()) {
        return Err(Error::CertificateUnavailable(format!(
            "{} endpoint: stationarity {:.3e}, gap {:.3e}",
            endpoint.label(),
            check.stationarity,
            cert.gap
        )));
    }
    Ok(cert)
}

/// Unconstrained full-rank interval `h^T x_LS -/+ z sqrt(h^T (K^T K)^{-1} h)`.
pub fn closed_form_fullrank(problem: &WhitenedProblem, y_w: &DVector<f64>, alpha: f64) -> Result<IntervalResult> {
    let (n, p) = problem.k_w.shape();
    if y_w.len() != n {
        return Err(Error::dim("y_w", n, y_w.len()));
    }
    let spec = spectral_summary_whitened(&problem.k_w, DEFAULT_RANK_TOL);
    if spec.numeric_rank < p {
        return Err(Error::RankDeficient {
            rank: spec.numeric_rank,
            p,
        });
    }
    // x_LS = V D^{-1} U^T y,  (K^T K)^{-1} h = V D^{-2} V^T h
    let uty = spec.u.tr_mul(y_w);
    let vth = spec.v.tr_mul(&problem.h);
    let x_ls = &spec.v * DVector::from_fn(p, |i, _| uty[i] / spec.d[i]);
    let kinv_h = &spec.v * DVector::from_fn(p, |i, _| vth[i] / (spec.d[i] * spec.d[i]));
    let se = problem.h.dot(&kinv_h).sqrt();
    let z = stats::z_two_sided(alpha);
    let theta = problem.h.dot(&x_ls);
    let resid = y_w - &problem.k_w * &x_ls;
    let slack_sq = resid.norm_squared();
    let r2 = z * z + slack_sq;

    let w0 = &problem.k_w * &kinv_h;
    let cert = |ep: Endpoint, value: f64| {
        let sense = ep.sense();
        let w = if slack_sq > 0.0 {
            &w0 + &resid * (sense * se / z)
        } else {
            w0.clone()
        };
        let rr = r2.sqrt();
        let objective = w.dot(y_w) - sense * rr * w.norm();
        DualCertificate {
            endpoint: ep,
            w: w.iter().copied().collect(),
            c: Vec::new(),
            objective,
            gap: (objective - value).abs(),
        }
    };
    let lower = theta - z * se;
    let upper = theta + z * se;
    Ok(IntervalResult {
        lower,
        upper,
        slack_sq,
        radius_sq: r2,
        x_feas: x_ls.clone(),
        x_at_lower: &x_ls - &kinv_h * (z / se),
        x_at_upper: &x_ls + &kinv_h * (z / se),
        dual_lower: cert(Endpoint::Lower, lower),
        dual_upper: cert(Endpoint::Upper, upper),
        certified: true,
        solver_stats: SolverStats {
            closed_form: true,
            numeric_rank: spec.numeric_rank,
            ..SolverStats::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Descriptor;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const Z95: f64 = 1.959963984540054;

    fn wp(k: DMatrix<f64>, h: DVector<f64>) -> WhitenedProblem {
        WhitenedProblem::from_whitened(k, h).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn both_paths(
        problem: &WhitenedProblem,
        y: &DVector<f64>,
        cons: &ConstraintSet,
        fast: bool,
    ) -> (IntervalResult, IntervalResult) {
        let mk = |reduce| IntervalOptions {
            reduce,
            fast_path: fast,
            ..IntervalOptions::default()
        };
        let a = IntervalSolver::new(problem, cons, mk(true)).unwrap();
        let b = IntervalSolver::new(problem, cons, mk(false)).unwrap();
        (
            a.solve(y, 0.05, RadiusMode::OneAtATime).unwrap(),
            b.solve(y, 0.05, RadiusMode::OneAtATime).unwrap(),
        )
    }

    #[test]
    fn one_dimensional_ball() {
        let p = wp(dmatrix![1.0], DVector::from_element(1, 1.0));
        let y = DVector::from_element(1, 3.0);
        for fast in [true, false] {
            let (r, f) = both_paths(&p, &y, &ConstraintSet::empty(1), fast);
            for res in [r, f] {
                assert!(res.slack_sq.abs() < 1e-12);
                assert!((res.lower - (3.0 - Z95)).abs() < 1e-9);
                assert!((res.upper - (3.0 + Z95)).abs() < 1e-9);
                assert!(res.certified);
                assert!((res.dual_lower.w[0] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn active_nonnegativity() {
        let p = wp(dmatrix![1.0], DVector::from_element(1, 1.0));
        let cons = ConstraintSet::from_descriptors(1, vec![Descriptor::NonNegative(0)]).unwrap();
        for fast in [true, false] {
            let (r, f) = both_paths(&p, &DVector::from_element(1, 0.0), &cons, fast);
            for res in [r, f] {
                assert!(res.slack_sq.abs() < 1e-12);
                assert!(res.lower.abs() < 1e-7, "{}", res.lower);
                assert!((res.upper - Z95).abs() < 1e-7);
                assert!(res.certified, "{:?}", res.dual_lower);
            }
        }
    }

    #[test]
    fn projected_slack() {
        let p = wp(dmatrix![1.0], DVector::from_element(1, 1.0));
        let cons = ConstraintSet::from_descriptors(1, vec![Descriptor::NonNegative(0)]).unwrap();
        let (s2, x) = solve_slack(&p, &DVector::from_element(1, -2.0), &cons).unwrap();
        assert!((s2 - 4.0).abs() < 1e-10, "{s2}");
        assert!(x[0].abs() < 1e-8);
    }

    #[test]
    fn svd_reduce_examples() {
        let p = wp(dmatrix![1.0; 0.0; 0.0], DVector::from_element(1, 1.0));
        let red = svd_reduce(&p, &DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        assert!((red.tail_sq - 2.0).abs() < 1e-12);
        let x = DVector::from_element(1, 0.3);
        assert!((red.residual_sq(&x) - (0.49 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_example() {
        let p = wp(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]));
        let r = closed_form_fullrank(&p, &DVector::from_vec(vec![2.0, 5.0]), 0.05).unwrap();
        assert!((r.lower - (2.0 - Z95)).abs() < 1e-12 && (r.upper - (2.0 + Z95)).abs() < 1e-12);
        let deficient = wp(dmatrix![1.0, 1.0; 1.0, 1.0], DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            closed_form_fullrank(&deficient, &DVector::zeros(2), 0.05),
            Err(Error::RankDeficient { rank: 1, p: 2 })
        ));
    }

    #[test]
    fn unconstrained_matches_closed_form_on_both_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let k = randn(&mut rng, 10, 4);
            let h = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let y = DVector::from_fn(10, |_, _| StandardNormal.sample(&mut rng));
            let p = wp(k, h);
            let cf = closed_form_fullrank(&p, &y, 0.05).unwrap();
            assert!(cf.dual_lower.gap < 1e-9 && cf.dual_upper.gap < 1e-9);
            for fast in [true, false] {
                let (r, f) = both_paths(&p, &y, &ConstraintSet::empty(4), fast);
                for res in [r, f] {
                    assert!((res.lower - cf.lower).abs() < 1e-6, "{} {}", res.lower, cf.lower);
                    assert!((res.upper - cf.upper).abs() < 1e-6);
                    assert!((res.slack_sq - cf.slack_sq).abs() < 1e-8 * (1.0 + cf.slack_sq));
                    assert!(res.certified);
                }
            }
        }
    }

    #[test]
    fn constrained_paths_agree_and_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let k = randn(&mut rng, 12, 4);
            let h = DVector::from_fn(4, |_, _| 0.5 + rand::Rng::random::<f64>(&mut rng));
            let x_true = DVector::from_fn(4, |_, _| rand::Rng::random::<f64>(&mut rng) * 0.5);
            let e = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
            let y = &k * &x_true + e;
            let p = wp(k, h);
            let cons = ConstraintSet::from_descriptors(
                4,
                vec![
                    Descriptor::NonNegative(0),
                    Descriptor::NonNegative(1),
                    Descriptor::Box { index: 2, lo: 0.0, hi: 1.0 },
                    Descriptor::Box { index: 3, lo: -0.2, hi: 0.4 },
                ],
            )
            .unwrap();
            let (r, f) = both_paths(&p, &y, &cons, false);
            let tol = |v: f64| 1e-6 * (1.0 + v.abs());
            assert!((r.lower - f.lower).abs() <= tol(f.lower), "trial {trial}: {} {}", r.lower, f.lower);
            assert!((r.upper - f.upper).abs() <= tol(f.upper));
            assert!((r.slack_sq - f.slack_sq).abs() <= 1e-8 * (1.0 + f.slack_sq));
            for res in [&r, &f] {
                assert!(res.certified, "trial {trial}: {:?} {:?}", res.dual_lower, res.dual_upper);
                assert!(res.lower <= res.upper);
                for x in [&res.x_at_lower, &res.x_at_upper] {
                    assert!(cons.max_violation(x) <= 1e-8);
                    let rr = (&y - &p.k_w * x).norm_squared();
                    assert!(rr <= res.radius_sq + 1e-8 * (1.0 + res.radius_sq));
                }
                let tf = p.h.dot(&res.x_feas);
                assert!(res.lower <= tf + 1e-9 && tf <= res.upper + 1e-9);
            }
            let (rf, _) = both_paths(&p, &y, &cons, true);
            assert!((rf.lower - f.lower).abs() <= tol(f.lower));
            assert!((rf.upper - f.upper).abs() <= tol(f.upper));
        }
    }

    #[test]
    fn fixed_coordinates_are_substituted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = randn(&mut rng, 8, 3);
        let h = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let y = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        let p = wp(k, h);
        let cons = ConstraintSet::from_descriptors(
            3,
            vec![Descriptor::FixEqual { index: 1, value: 0.7 }, Descriptor::NonNegative(0)],
        )
        .unwrap();
        for fast in [true, false] {
            let (r, f) = both_paths(&p, &y, &cons, fast);
            for res in [r, f] {
                assert!(res.certified, "{:?}", res.dual_lower);
                assert!((res.x_at_lower[1] - 0.7).abs() < 1e-15);
                assert!(cons.max_violation(&res.x_at_upper) <= 1e-8);
            }
        }
        let bad = cons.clone().with(Descriptor::FixEqual { index: 1, value: 0.8 }).unwrap();
        assert!(matches!(
            IntervalSolver::new(&p, &bad, IntervalOptions::default()),
            Err(Error::InfeasibleConstraints { .. })
        ));
    }

    #[test]
    fn infeasible_general_rows() {
        let p = wp(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]));
        let a = dmatrix![1.0, 1.0; -1.0, -1.0];
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        let cons = ConstraintSet::from_matrix(a, b).unwrap();
        let err = solve_slack(&p, &DVector::zeros(2), &cons).unwrap_err();
        assert!(matches!(err, Error::InfeasibleConstraints { .. }), "{err}");
    }

    #[test]
    fn unbounded_null_direction() {
        // K sees only x1; h puts weight on x2 which nothing bounds.
        let p = wp(dmatrix![1.0, 0.0; 0.0, 0.0], DVector::from_vec(vec![1.0, 1.0]));
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let err = solve_interval_reduced(&p, &y, &ConstraintSet::empty(2), 0.05, RadiusMode::OneAtATime).unwrap_err();
        assert!(matches!(err, Error::UnboundedFunctional { .. }));
        // Bounded below only.
        let cons = ConstraintSet::from_descriptors(2, vec![Descriptor::NonNegative(1)]).unwrap();
        match solve_interval_reduced(&p, &y, &cons, 0.05, RadiusMode::OneAtATime).unwrap_err() {
            Error::UnboundedFunctional { direction, .. } => assert_eq!(direction, "upper"),
            e => panic!("{e}"),
        }
        // A box makes it finite.
        let cons = ConstraintSet::from_descriptors(2, vec![Descriptor::Box { index: 1, lo: 0.0, hi: 2.0 }]).unwrap();
        let r = solve_interval_reduced(&p, &y, &cons, 0.05, RadiusMode::OneAtATime).unwrap();
        assert!((r.lower - (1.0 - Z95)).abs() < 1e-6, "{}", r.lower);
        assert!((r.upper - (1.0 + Z95 + 2.0)).abs() < 1e-6, "{}", r.upper);
        assert!(r.certified);
    }

    #[test]
    fn null_direction_orthogonal_to_h_is_ignored() {
        let p = wp(dmatrix![1.0, 0.0; 0.0, 0.0], DVector::from_vec(vec![1.0, 0.0]));
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let r = solve_interval_reduced(&p, &y, &ConstraintSet::empty(2), 0.05, RadiusMode::OneAtATime).unwrap();
        assert!((r.length() - 2.0 * Z95).abs() < 1e-9);
    }

    #[test]
    fn simultaneous_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = randn(&mut rng, 30, 3);
        let p = wp(k.clone(), DVector::from_vec(vec![1.0, 0.5, 0.2]));
        let y = &k * DVector::from_vec(vec![1.0, 2.0, 3.0]) + DVector::from_fn(30, |_, _| StandardNormal.sample(&mut rng));
        let one = solve_interval_reduced(&p, &y, &ConstraintSet::empty(3), 0.05, RadiusMode::OneAtATime).unwrap();
        let sim = solve_interval_reduced(&p, &y, &ConstraintSet::empty(3), 0.05, RadiusMode::Simultaneous).unwrap();
        assert!(sim.radius_sq >= one.radius_sq);
        assert!(sim.lower <= one.lower && sim.upper >= one.upper);
        // A huge residual pushes s^2 past the chi-square radius.
        let far = &y + DVector::from_fn(30, |i, _| if i % 2 == 0 { 50.0 } else { -50.0 });
        let err = solve_interval_reduced(&p, &far, &ConstraintSet::empty(3), 0.05, RadiusMode::Simultaneous).unwrap_err();
        assert!(matches!(err, Error::EmptyConfidenceSet { .. }), "{err}");
    }

    #[test]
    fn dual_solve_one_dimensional() {
        let p = wp(dmatrix![1.0], DVector::from_element(1, 1.0));
        let y = DVector::from_element(1, 3.0);
        let c = dual_solve(&p, &y, &ConstraintSet::empty(1), Z95 * Z95, Endpoint::Upper).unwrap();
        assert!((c.w[0] - 1.0).abs() < 1e-9);
        assert!((c.objective - (3.0 + Z95)).abs() < 1e-9);
    }
}

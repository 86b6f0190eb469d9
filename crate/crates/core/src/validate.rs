//! Self-check battery run by the `validate` command.
//!
//! Each check compares the solver against an independent route to the same
//! number: the full-dimensional program, the least-squares closed form, the
//! dual certificates, and a grid search on small sub-instances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintFile, ConstraintSet, Descriptor};
use crate::error::Result;
use crate::interval::{closed_form_fullrank, svd_reduce, IntervalOptions, IntervalSolver, RadiusMode};
use crate::model::{spectral_summary_whitened, whiten_operator, LinearProblem, ProblemFile, WhitenedProblem, DEFAULT_RANK_TOL};
use crate::simulation::{standard_normal_vec, streams, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub n_instances: usize,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
    pub first_failure: Option<String>,
}

impl ValidationReport {
    /// Report for input that could not be parsed at all.
    pub fn malformed(seed: u64, n_instances: usize, err: &crate::Error) -> Self {
        ValidationReport::new(seed, n_instances, vec![failed("problem_well_formed", err.to_string())])
    }

    fn new(seed: u64, n_instances: usize, checks: Vec<CheckResult>) -> Self {
        let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
        ValidationReport {
            seed,
            n_instances,
            passed: first_failure.is_none(),
            first_failure,
            checks,
        }
    }
}

fn failed(name: &str, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: false,
        instances: 0,
        max_error: f64::NAN,
        tolerance: 0.0,
        detail,
    }
}

/// Tracks the worst relative error of one check over instances.
struct Tally {
    name: &'static str,
    tolerance: f64,
    instances: usize,
    max_error: f64,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            tolerance,
            instances: 0,
            max_error: 0.0,
            detail: None,
        }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        if !(err <= self.max_error) {
            self.max_error = err;
        }
    }

    fn fail(&mut self, detail: String) {
        self.instances += 1;
        self.detail.get_or_insert(detail);
    }

    fn finish(self) -> CheckResult {
        let passed = self.detail.is_none() && self.max_error <= self.tolerance;
        CheckResult {
            name: self.name.into(),
            passed,
            instances: self.instances,
            max_error: self.max_error,
            tolerance: self.tolerance,
            detail: self.detail.unwrap_or_else(|| if passed { "ok".into() } else { "tolerance exceeded".into() }),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Run the battery from raw files, so malformed input shows up as the
/// first failed check rather than as a load error.
pub fn validate_files(
    problem: ProblemFile,
    constraints: Option<ConstraintFile>,
    seed: u64,
    n_instances: usize,
) -> ValidationReport {
    let problem = match problem.into_problem() {
        Ok(p) => p,
        Err(e) => return ValidationReport::new(seed, n_instances, vec![failed("problem_well_formed", e.to_string())]),
    };
    let set = match constraints.map(|c| c.into_set(&problem)) {
        None => ConstraintSet::empty(problem.p()),
        Some(Ok(s)) => s,
        Some(Err(e)) => return ValidationReport::new(seed, n_instances, vec![failed("constraints_well_formed", e.to_string())]),
    };
    validate(&problem, &set, seed, n_instances)
}

pub fn validate(problem: &LinearProblem, constraints: &ConstraintSet, seed: u64, n_instances: usize) -> ValidationReport {
    let alpha = 0.05;
    let mut checks = vec![CheckResult {
        name: "problem_well_formed".into(),
        passed: true,
        instances: 1,
        max_error: 0.0,
        tolerance: 0.0,
        detail: format!("n = {}, p = {}, {} constraint rows", problem.n(), problem.p(), constraints.q()),
    }];
    let whitened = match whiten_operator(problem) {
        Ok(w) => w,
        Err(e) => {
            checks.push(failed("whitening", e.to_string()));
            return ValidationReport::new(seed, n_instances, checks);
        }
    };
    let solvers = IntervalSolver::new(&whitened, constraints, IntervalOptions::default()).and_then(|red| {
        let full = IntervalSolver::new(
            &whitened,
            constraints,
            IntervalOptions {
                reduce: false,
                ..IntervalOptions::default()
            },
        )?;
        Ok((red, full))
    });
    let (reduced, full) = match solvers {
        Ok(s) => s,
        Err(e) => {
            checks.push(failed("solver_setup", e.to_string()));
            return ValidationReport::new(seed, n_instances, checks);
        }
    };
    // Observations are simulated around a feasible reference state.
    let x0 = match full.slack(&DVector::zeros(whitened.n())) {
        Ok((_, x)) => x,
        Err(e) => {
            checks.push(failed("feasible_reference", e.to_string()));
            return ValidationReport::new(seed, n_instances, checks);
        }
    };
    let kx0 = &whitened.k_w * &x0;

    let mut reduction = Tally::new("svd_reduction_equivalence", 1e-6);
    let mut slack_identity = Tally::new("slack_tail_identity", 1e-8);
    let mut duality = Tally::new("dual_certificates", 1e-6);
    for i in 0..n_instances {
        let mut rng = substream(seed, streams::VALIDATE, i as u64, 0);
        let y_w = &kx0 + standard_normal_vec(whitened.n(), &mut rng);
        let (r, f) = match (reduced.solve(&y_w, alpha, RadiusMode::OneAtATime), full.solve(&y_w, alpha, RadiusMode::OneAtATime)) {
            (Ok(r), Ok(f)) => (r, f),
            (Err(e), _) | (_, Err(e)) => {
                reduction.fail(format!("instance {i}: {e}"));
                continue;
            }
        };
        reduction.record(rel(r.lower, f.lower).max(rel(r.upper, f.upper)));
        match svd_reduce(&whitened, &y_w) {
            Ok(red) => {
                let s_red = red.residual_sq(&r.x_feas);
                slack_identity.record((f.slack_sq - s_red).abs() / (1.0 + f.slack_sq));
            }
            Err(e) => slack_identity.fail(e.to_string()),
        }
        for (res, radius) in [(&r, r.radius_sq), (&f, f.radius_sq)] {
            for (cert, value) in [(&res.dual_lower, res.lower), (&res.dual_upper, res.upper)] {
                match cert.verify(&whitened, &y_w, constraints, radius) {
                    Ok(chk) if chk.passes(whitened.h.norm()) => {
                        duality.record((chk.objective - value).abs() / (1.0 + value.abs()));
                    }
                    Ok(chk) => duality.fail(format!(
                        "instance {i}: stationarity {:.3e}, min c {:.3e}",
                        chk.stationarity, chk.min_c
                    )),
                    Err(e) => duality.fail(format!("instance {i}: {e}")),
                }
            }
        }
    }
    checks.extend([reduction.finish(), slack_identity.finish(), duality.finish()]);

    let sub = SubInstance::new(&whitened, constraints, &x0);
    checks.push(closed_form_check(&whitened, &sub, seed, n_instances, alpha));
    checks.push(grid_oracle_check(&sub, seed, n_instances, alpha));
    ValidationReport::new(seed, n_instances, checks)
}

/// At most three state elements, those with the largest `|h_i|`, with the
/// remaining elements held at the reference state.
struct SubInstance {
    whitened: Option<WhitenedProblem>,
    center: DVector<f64>,
    /// Coordinate bounds inherited from the full constraint set.
    bounds: Vec<(f64, f64)>,
}

impl SubInstance {
    fn new(whitened: &WhitenedProblem, constraints: &ConstraintSet, x0: &DVector<f64>) -> Self {
        let p = whitened.p();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| whitened.h[b].abs().total_cmp(&whitened.h[a].abs()).then(a.cmp(&b)));
        order.truncate(p.min(3));
        order.sort_unstable();
        let k = DMatrix::from_fn(whitened.n(), order.len(), |r, c| whitened.k_w[(r, order[c])]);
        let h = DVector::from_fn(order.len(), |i, _| whitened.h[order[i]]);
        let cb = constraints.coordinate_bounds();
        SubInstance {
            whitened: WhitenedProblem::from_whitened(k, h).ok(),
            center: DVector::from_fn(order.len(), |i, _| x0[order[i]]),
            bounds: order.iter().map(|&i| cb[i]).collect(),
        }
    }
}

fn closed_form_check(whitened: &WhitenedProblem, sub: &SubInstance, seed: u64, n: usize, alpha: f64) -> CheckResult {
    let full_rank = spectral_summary_whitened(&whitened.k_w, DEFAULT_RANK_TOL).numeric_rank == whitened.p();
    let (problem, label) = if full_rank {
        (whitened, "full problem")
    } else {
        match &sub.whitened {
            Some(w) => (w, "sub-instance"),
            None => return failed("closed_form_equivalence", "no usable sub-instance".into()),
        }
    };
    let mut t = Tally::new("closed_form_equivalence", 1e-6);
    if spectral_summary_whitened(&problem.k_w, DEFAULT_RANK_TOL).numeric_rank < problem.p() {
        let mut c = t.finish();
        c.detail = "skipped: no full-rank instance available".into();
        return c;
    }
    let solver = match IntervalSolver::new(problem, &ConstraintSet::empty(problem.p()), IntervalOptions::default()) {
        Ok(s) => s,
        Err(e) => return failed("closed_form_equivalence", e.to_string()),
    };
    for i in 0..n {
        let y_w = standard_normal_vec(problem.n(), &mut substream(seed, streams::VALIDATE, i as u64, 1));
        match (solver.solve(&y_w, alpha, RadiusMode::OneAtATime), closed_form_fullrank(problem, &y_w, alpha)) {
            (Ok(a), Ok(b)) => t.record(rel(a.lower, b.lower).max(rel(a.upper, b.upper))),
            (Err(e), _) | (_, Err(e)) => t.fail(format!("instance {i}: {e}")),
        }
    }
    let mut c = t.finish();
    if c.passed {
        c.detail = format!("ok ({label})");
    }
    c
}

fn grid_oracle_check(sub: &SubInstance, seed: u64, n: usize, alpha: f64) -> CheckResult {
    let Some(w) = &sub.whitened else {
        return failed("grid_oracle_equivalence", "no usable sub-instance".into());
    };
    let m = w.p();
    let mut worst = 0.0_f64;
    let mut detail = None;
    // Boxes of three least-squares standard deviations around the centre,
    // clipped by the inherited bounds, so that they bind on some draws.
    let gram_inv = (w.k_w.tr_mul(&w.k_w) + DMatrix::identity(m, m) * 1e-12).try_inverse();
    let count = n.min(10);
    for i in 0..count {
        let mut rng = substream(seed, streams::VALIDATE, i as u64, 2);
        let sd = |j: usize| gram_inv.as_ref().map_or(1.0, |g| g[(j, j)].max(0.0).sqrt()).clamp(1e-6, 1e6);
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        for j in 0..m {
            let c = sub.center[j];
            lo.push((c - 3.0 * sd(j)).max(sub.bounds[j].0));
            hi.push((c + 3.0 * sd(j)).min(sub.bounds[j].1));
        }
        let set = match ConstraintSet::from_descriptors(
            m,
            (0..m).map(|j| Descriptor::Box { index: j, lo: lo[j], hi: hi[j] }).collect(),
        ) {
            Ok(s) => s,
            Err(e) => {
                detail.get_or_insert(e.to_string());
                continue;
            }
        };
        let y_w = &w.k_w * &sub.center + standard_normal_vec(w.n(), &mut rng);
        let res = match IntervalSolver::new(w, &set, IntervalOptions::default()).and_then(|s| s.solve(&y_w, alpha, RadiusMode::OneAtATime)) {
            Ok(r) => r,
            Err(e) => {
                detail.get_or_insert(format!("instance {i}: {e}"));
                continue;
            }
        };
        let Some((olo, ohi, step)) = grid_oracle(&w.k_w, &y_w, &w.h, &lo, &hi, res.radius_sq, 1000) else {
            detail.get_or_insert(format!("instance {i}: grid found no feasible point"));
            continue;
        };
        let err = ((res.lower - olo).abs().max((res.upper - ohi).abs()) - step).max(0.0);
        worst = worst.max(err / (1.0 + step));
    }
    let passed = detail.is_none() && worst <= 1e-9;
    CheckResult {
        name: "grid_oracle_equivalence".into(),
        passed,
        instances: count,
        max_error: worst,
        tolerance: 1e-9,
        detail: detail.unwrap_or_else(|| "ok (excess over one grid step)".into()),
    }
}

/// Extremes of `h^T x` over `{|y - K x|^2 <= r2, lo <= x <= hi}` for
/// `p <= 3`, by a grid of `steps + 1` points per axis on all but one
/// coordinate and the exact feasible segment along the remaining one.
/// Returns `(min, max, one_step)` where `one_step` bounds the change of
/// `h^T x` over one grid cell.
pub fn grid_oracle(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    r2: f64,
    steps: usize,
) -> Option<(f64, f64, f64)> {
    let p = k.ncols();
    assert!((1..=3).contains(&p), "grid oracle handles 1 to 3 variables");
    assert!(lo.iter().chain(hi).all(|v| v.is_finite()), "grid oracle needs a bounded box");
    let gram = k.tr_mul(k);
    let kty = k.tr_mul(y);
    let yty = y.norm_squared();
    // Sweep the coordinate with the widest h-range exactly.
    let last = (0..p)
        .max_by(|&a, &b| (h[a].abs() * (hi[a] - lo[a])).total_cmp(&(h[b].abs() * (hi[b] - lo[b]))))
        .unwrap_or(0);
    let grid: Vec<usize> = (0..p).filter(|&j| j != last).collect();
    let step_of = |j: usize| (hi[j] - lo[j]) / steps as f64;
    let one_step: f64 = grid.iter().map(|&j| h[j].abs() * step_of(j)).sum();
    let (mut best_lo, mut best_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let npts = steps + 1;
    let total = npts.pow(grid.len() as u32);
    let mut u = vec![0.0; p];
    for idx in 0..total {
        let mut rem = idx;
        for &j in &grid {
            u[j] = lo[j] + step_of(j) * (rem % npts) as f64;
            rem /= npts;
        }
        // |y - K x|^2 = x'Gx - 2 x'K'y + y'y, quadratic in x_last.
        let a = gram[(last, last)];
        let mut b = -2.0 * kty[last];
        let mut c = yty - r2;
        for &j in &grid {
            b += 2.0 * gram[(last, j)] * u[j];
            c += -2.0 * kty[j] * u[j];
            for &l in &grid {
                c += gram[(j, l)] * u[j] * u[l];
            }
        }
        let (t0, t1) = if a > 0.0 {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                continue;
            }
            let s = disc.sqrt();
            ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a))
        } else if c <= 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            continue;
        };
        let (t0, t1) = (t0.max(lo[last]), t1.min(hi[last]));
        if t0 > t1 {
            continue;
        }
        let base: f64 = grid.iter().map(|&j| h[j] * u[j]).sum();
        let (v0, v1) = (base + h[last] * t0, base + h[last] * t1);
        best_lo = best_lo.min(v0.min(v1));
        best_hi = best_hi.max(v0.max(v1));
    }
    best_lo.is_finite().then_some((best_lo, best_hi, one_step))
}

/// Convenience wrapper for callers that already hold parsed inputs.
pub fn validate_problem(problem: &LinearProblem, constraints: Option<&ConstraintSet>, seed: u64, n: usize) -> Result<ValidationReport> {
    let empty = ConstraintSet::empty(problem.p());
    Ok(validate(problem, constraints.unwrap_or(&empty), seed, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{gen_problem, SyntheticSpec};

    #[test]
    fn oracle_on_a_disc() {
        // Unit disc around (1, 2); h = (1, 1) has extremes 3 -/+ sqrt(2).
        let k = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let h = DVector::from_vec(vec![1.0, 1.0]);
        let (lo, hi, step) = grid_oracle(&k, &y, &h, &[-5.0, -5.0], &[5.0, 5.0], 1.0, 2000).unwrap();
        assert!((lo - (3.0 - 2f64.sqrt())).abs() <= step);
        assert!((hi - (3.0 + 2f64.sqrt())).abs() <= step);
        // A box cutting the disc.
        let (_, hi, step) = grid_oracle(&k, &y, &h, &[-5.0, -5.0], &[1.0, 2.0], 1.0, 2000).unwrap();
        assert!((hi - 3.0).abs() <= step);
    }

    #[test]
    fn synthetic_problem_passes() {
        let spec = SyntheticSpec {
            n: 60,
            ..SyntheticSpec::default()
        };
        let sp = gen_problem(&spec, 2).unwrap();
        let rep = validate(&sp.problem, &sp.constraints, 9, 4);
        assert!(rep.passed, "{:#?}", rep.checks);
        assert_eq!(rep.checks.len(), 6);
    }

    #[test]
    fn nan_names_the_first_check() {
        let sp = gen_problem(&SyntheticSpec { n: 60, ..SyntheticSpec::default() }, 2).unwrap();
        let mut file = ProblemFile::from_problem(&sp.problem);
        file.k[3][4] = f64::NAN;
        let rep = validate_files(file, None, 1, 2);
        assert!(!rep.passed);
        assert_eq!(rep.first_failure.as_deref(), Some("problem_well_formed"));
    }
}

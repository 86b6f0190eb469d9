//! Constraint calibration: variable-importance and box sweeps, plus
//! probabilistic box constraints merged through a union bound.
//!
//! Every sweep point reuses the same noise draws `(NOISE, 0, j)`, so length
//! differences between points are not blurred by independent noise.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, Descriptor};
use crate::error::{Error, Result};
use crate::interval::{IntervalOptions, IntervalResult, IntervalSolver, RadiusMode};
use crate::model::{whiten_operator, LinearProblem, WhitenedProblem};
use crate::simulation::{standard_normal_vec, streams, substream};
use crate::stats::z_two_sided;

/// External estimate `x_hat_i ~ N(x_i, sigma_i^2)` turned into the box
/// `center -/+ z_{1 - alpha_i/2} sigma_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticConstraint {
    pub index: usize,
    pub center: f64,
    pub standard_error: f64,
    pub level_alpha: f64,
}

impl ProbabilisticConstraint {
    pub fn new(index: usize, center: f64, standard_error: f64, level_alpha: f64) -> Result<Self> {
        let c = ProbabilisticConstraint {
            index,
            center,
            standard_error,
            level_alpha,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !(self.standard_error > 0.0 && self.standard_error.is_finite()) {
            return Err(Error::invalid("standard_error", "must be positive and finite"));
        }
        if !(self.level_alpha > 0.0 && self.level_alpha < 1.0) {
            return Err(Error::invalid("level_alpha", format!("must lie in (0, 1), got {}", self.level_alpha)));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("center", "must be finite"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        let half = z_two_sided(self.level_alpha) * self.standard_error;
        (self.center - half, self.center + half)
    }

    pub fn with_center(self, center: f64) -> Self {
        ProbabilisticConstraint { center, ..self }
    }

    pub fn with_level(self, level_alpha: f64) -> Self {
        ProbabilisticConstraint { level_alpha, ..self }
    }
}

/// Split of the total miscoverage `alpha = gamma + sum(alpha_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub gamma: f64,
    pub alphas: Vec<f64>,
    pub total_alpha: f64,
}

impl CalibrationPlan {
    pub fn internal_level(&self) -> f64 {
        1.0 - self.gamma
    }

    pub fn final_level(&self) -> f64 {
        1.0 - self.total_alpha
    }
}

/// Validated plan. Without `gamma` the remainder `total - sum(alphas)` is used.
pub fn make_plan(total_alpha: f64, alphas: &[f64], gamma: Option<f64>) -> Result<CalibrationPlan> {
    if !(total_alpha > 0.0 && total_alpha < 1.0) {
        return Err(Error::invalid("total_alpha", format!("must lie in (0, 1), got {total_alpha}")));
    }
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("alphas", "every constraint level must be positive"));
    }
    let spent: f64 = alphas.iter().sum();
    let gamma = gamma.unwrap_or(total_alpha - spent);
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    if (gamma + spent - total_alpha).abs() > 1e-12 {
        return Err(Error::BudgetMismatch {
            sum: gamma + spent,
            total: total_alpha,
        });
    }
    Ok(CalibrationPlan {
        gamma,
        alphas: alphas.to_vec(),
        total_alpha,
    })
}

/// `n` points log-spaced over `[total/100, 0.99 total]`, ascending.
pub fn gamma_grid(total_alpha: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = ((total_alpha / 100.0).ln(), (total_alpha * 0.99).ln());
    match n {
        0 => Vec::new(),
        1 => vec![hi.exp()],
        _ => (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()).collect(),
    }
}

/// Settings shared by the sweeps.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub alpha: f64,
    pub mode: RadiusMode,
    pub n_noise: usize,
    pub seed: u64,
    pub failure_threshold: f64,
    pub interval: IntervalOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alpha: 0.05,
            mode: RadiusMode::OneAtATime,
            n_noise: 200,
            seed: 0,
            failure_threshold: 0.01,
            interval: IntervalOptions::default(),
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_noise == 0 {
            return Err(Error::invalid("n_noise", "need at least one noise draw"));
        }
        Ok(())
    }

    fn check_failures(&self, failed: usize, total: usize) -> Result<()> {
        if failed as f64 > self.failure_threshold * total as f64 {
            return Err(Error::FailureBudgetExceeded {
                failed,
                total,
                threshold: self.failure_threshold,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean_length: f64,
    /// Monte Carlo standard error of the mean.
    pub length_se: f64,
    pub n_noise_draws: usize,
    pub failures: usize,
}

fn whitened_draw(seed: u64, draw: usize, n: usize) -> DVector<f64> {
    standard_normal_vec(n, &mut substream(seed, streams::NOISE, 0, draw as u64))
}

fn summarise(lengths: &[f64], failures: usize) -> LengthSummary {
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let var = if lengths.len() > 1 {
        lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    LengthSummary {
        mean_length: mean,
        length_se: (var / n).sqrt(),
        n_noise_draws: lengths.len(),
        failures,
    }
}

/// Mean interval length at `alpha` over the shared noise draws around `x_true`.
fn mean_length(
    whitened: &WhitenedProblem,
    constraints: &ConstraintSet,
    x_true: &DVector<f64>,
    alpha: f64,
    cfg: &SweepConfig,
) -> Result<LengthSummary> {
    let solver = IntervalSolver::new(whitened, constraints, cfg.interval)?;
    let kx = &whitened.k_w * x_true;
    let outcomes: Vec<Result<f64>> = (0..cfg.n_noise)
        .into_par_iter()
        .map(|j| {
            let y_w = &kx + whitened_draw(cfg.seed, j, whitened.n());
            solver.solve(&y_w, alpha, cfg.mode).map(|r| r.length())
        })
        .collect();
    let lengths: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let failures = cfg.n_noise - lengths.len();
    cfg.check_failures(failures, cfg.n_noise)?;
    if lengths.is_empty() {
        return Err(outcomes.into_iter().find_map(|o| o.err()).expect("some draw failed"));
    }
    Ok(summarise(&lengths, failures))
}

fn check_state(p: usize, x_true: &DVector<f64>) -> Result<()> {
    if x_true.len() != p {
        return Err(Error::dim("x_true", p, x_true.len()));
    }
    Ok(())
}

/// One row of a variable-importance sweep; `index` is `None` for the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub index: Option<usize>,
    pub label: String,
    pub mean_length: f64,
    pub length_se: f64,
    pub n_noise_draws: usize,
    pub failures: usize,
}

/// Mean length with each listed variable fixed at its true value in turn.
/// The first row is the baseline without any fix.
pub fn variable_importance(
    problem: &LinearProblem,
    constraints: &ConstraintSet,
    x_true: &DVector<f64>,
    indices: &[usize],
    cfg: &SweepConfig,
) -> Result<Vec<ImportanceRow>> {
    cfg.validate()?;
    check_state(problem.p(), x_true)?;
    let whitened = whiten_operator(problem)?;
    let row = |index: Option<usize>, s: LengthSummary| ImportanceRow {
        index,
        label: index.map_or_else(|| "baseline".to_string(), |i| problem.label(i)),
        mean_length: s.mean_length,
        length_se: s.length_se,
        n_noise_draws: s.n_noise_draws,
        failures: s.failures,
    };
    let mut out = vec![row(None, mean_length(&whitened, constraints, x_true, cfg.alpha, cfg)?)];
    for &i in indices {
        let fixed = constraints.clone().with(Descriptor::FixEqual {
            index: i,
            value: x_true.get(i).copied().unwrap_or(f64::NAN),
        })?;
        out.push(row(Some(i), mean_length(&whitened, &fixed, x_true, cfg.alpha, cfg)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub mean_length: f64,
    pub length_se: f64,
    pub n_noise_draws: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSweep {
    pub index: usize,
    pub center: f64,
    pub baseline: LengthSummary,
    pub rows: Vec<SweepRow>,
}

/// Mean length under the symmetric box `center -/+ delta` on one variable.
pub fn box_sweep(
    problem: &LinearProblem,
    constraints: &ConstraintSet,
    x_true: &DVector<f64>,
    index: usize,
    center: f64,
    deltas: &[f64],
    cfg: &SweepConfig,
) -> Result<BoxSweep> {
    cfg.validate()?;
    check_state(problem.p(), x_true)?;
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("deltas", "half-widths must be non-negative"));
    }
    let whitened = whiten_operator(problem)?;
    let baseline = mean_length(&whitened, constraints, x_true, cfg.alpha, cfg)?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let boxed = constraints.clone().with(Descriptor::Box {
            index,
            lo: center - delta,
            hi: center + delta,
        })?;
        let s = mean_length(&whitened, &boxed, x_true, cfg.alpha, cfg)?;
        rows.push(SweepRow {
            delta,
            mean_length: s.mean_length,
            length_se: s.length_se,
            n_noise_draws: s.n_noise_draws,
            failures: s.failures,
        });
    }
    Ok(BoxSweep {
        index,
        center,
        baseline,
        rows,
    })
}

/// Intersect a box with the bounds the base constraints already impose on
/// that coordinate. Returns the clipped box and whether it changed.
pub fn clip_box(base: &ConstraintSet, index: usize, (lo, hi): (f64, f64)) -> Result<((f64, f64), bool)> {
    let (blo, bhi) = *base
        .coordinate_bounds()
        .get(index)
        .ok_or_else(|| Error::invalid("index", format!("{index} out of range for p = {}", base.p())))?;
    let (clo, chi) = (lo.max(blo), hi.min(bhi));
    if clo > chi {
        // The gap between the box and the base bounds proves emptiness.
        return Err(Error::InfeasibleConstraints { residual: clo - chi });
    }
    Ok(((clo, chi), clo != lo || chi != hi))
}

fn append_boxes(
    base: &ConstraintSet,
    boxes: impl IntoIterator<Item = (usize, (f64, f64))>,
) -> Result<(ConstraintSet, Vec<(f64, f64)>, Vec<bool>)> {
    let mut set = base.clone();
    let (mut used, mut clipped) = (Vec::new(), Vec::new());
    for (index, b) in boxes {
        let ((lo, hi), c) = clip_box(base, index, b)?;
        set = set.with(Descriptor::Box { index, lo, hi })?;
        used.push((lo, hi));
        clipped.push(c);
    }
    Ok((set, used, clipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub internal_level: f64,
    pub constraint_level: f64,
    pub mean_length: f64,
    pub length_se: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSearch {
    pub plan: CalibrationPlan,
    pub rows: Vec<GammaRow>,
}

/// Choose `gamma` minimising the mean length at an ansatz state, with the
/// external box centred on the ansatz value. No observed data enters.
/// Ties go to the larger `gamma`.
pub fn optimize_plan(
    problem: &LinearProblem,
    base_constraints: &ConstraintSet,
    ansatz_x: &DVector<f64>,
    template: &ProbabilisticConstraint,
    total_alpha: f64,
    gammas: &[f64],
    cfg: &SweepConfig,
) -> Result<PlanSearch> {
    cfg.validate()?;
    check_state(problem.p(), ansatz_x)?;
    if template.index >= problem.p() {
        return Err(Error::invalid("index", format!("{} out of range for p = {}", template.index, problem.p())));
    }
    if gammas.is_empty() {
        return Err(Error::invalid("gammas", "need at least one grid point"));
    }
    if gammas.iter().any(|&g| !(g > 0.0 && g < total_alpha)) {
        return Err(Error::invalid("gammas", "grid points must lie in (0, total_alpha)"));
    }
    let whitened = whiten_operator(problem)?;
    let centred = template.with_center(ansatz_x[template.index]);
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let a = total_alpha - gamma;
        let pc = centred.with_level(a);
        pc.validate()?;
        let (set, _, _) = append_boxes(base_constraints, [(pc.index, pc.bounds())])?;
        let s = mean_length(&whitened, &set, ansatz_x, gamma, cfg)?;
        rows.push(GammaRow {
            gamma,
            internal_level: 1.0 - gamma,
            constraint_level: 1.0 - a,
            mean_length: s.mean_length,
            length_se: s.length_se,
            failures: s.failures,
        });
    }
    let best = rows
        .iter()
        .reduce(|best, r| {
            let better = r.mean_length < best.mean_length || (r.mean_length == best.mean_length && r.gamma > best.gamma);
            if better {
                r
            } else {
                best
            }
        })
        .expect("non-empty grid");
    let plan = make_plan(total_alpha, &[total_alpha - best.gamma], Some(best.gamma))?;
    Ok(PlanSearch { plan, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedInterval {
    pub result: IntervalResult,
    /// Boxes actually appended, after clipping.
    pub boxes: Vec<(f64, f64)>,
    pub clipped: Vec<bool>,
    pub internal_level: f64,
    pub final_level: f64,
}

/// Interval at internal level `1 - gamma` with one box per realised external
/// estimate; box `k` uses level `plan.alphas[k]`. Covers at `1 - total_alpha`.
pub fn calibrated_interval(
    problem: &LinearProblem,
    base_constraints: &ConstraintSet,
    plan: &CalibrationPlan,
    realized: &[ProbabilisticConstraint],
    y: &DVector<f64>,
    mode: RadiusMode,
    options: IntervalOptions,
) -> Result<CalibratedInterval> {
    let whitened = whiten_operator(problem)?;
    let y_w = whitened.whiten_obs(y)?;
    calibrated_interval_whitened(&whitened, base_constraints, plan, realized, &y_w, mode, options)
}

pub fn calibrated_interval_whitened(
    whitened: &WhitenedProblem,
    base_constraints: &ConstraintSet,
    plan: &CalibrationPlan,
    realized: &[ProbabilisticConstraint],
    y_w: &DVector<f64>,
    mode: RadiusMode,
    options: IntervalOptions,
) -> Result<CalibratedInterval> {
    if realized.len() != plan.alphas.len() {
        return Err(Error::dim("realized", plan.alphas.len(), realized.len()));
    }
    let mut boxes = Vec::with_capacity(realized.len());
    for (pc, &a) in realized.iter().zip(&plan.alphas) {
        let pc = pc.with_level(a);
        pc.validate()?;
        boxes.push((pc.index, pc.bounds()));
    }
    let (set, boxes, clipped) = append_boxes(base_constraints, boxes)?;
    let result = IntervalSolver::new(whitened, &set, options)?.solve(y_w, plan.gamma, mode)?;
    Ok(CalibratedInterval {
        result,
        boxes,
        clipped,
        internal_level: plan.internal_level(),
        final_level: plan.final_level(),
    })
}

/// One row of the final coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub standard_error: f64,
    pub internal_level: f64,
    pub constraint_level: f64,
    pub empirical_coverage: f64,
    pub mean_length: f64,
    pub length_se: f64,
    /// Mean length of the interval without the external constraints, at the
    /// total level and on the same noise draws.
    pub baseline_mean_length: f64,
    pub n_replicates: usize,
    pub failures: usize,
    pub clipped_fraction: f64,
}

/// Final coverage over joint draws of the noise and of the external
/// estimates `x_hat_k = x_true[index_k] + sigma_k N(0, 1)`.
pub fn calibration_coverage(
    problem: &LinearProblem,
    base_constraints: &ConstraintSet,
    plan: &CalibrationPlan,
    templates: &[ProbabilisticConstraint],
    x_true: &DVector<f64>,
    cfg: &SweepConfig,
) -> Result<CoverageRow> {
    cfg.validate()?;
    check_state(problem.p(), x_true)?;
    if templates.len() != plan.alphas.len() {
        return Err(Error::dim("templates", plan.alphas.len(), templates.len()));
    }
    let whitened = whiten_operator(problem)?;
    let kx = &whitened.k_w * x_true;
    let theta = whitened.h.dot(x_true);
    let baseline = IntervalSolver::new(&whitened, base_constraints, cfg.interval)?;
    let outcomes: Vec<Result<(bool, f64, f64, bool)>> = (0..cfg.n_noise)
        .into_par_iter()
        .map(|r| {
            let y_w = &kx + whitened_draw(cfg.seed, r, whitened.n());
            let realized: Vec<ProbabilisticConstraint> = templates
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let mut rng = substream(cfg.seed, streams::EXTERNAL, k as u64, r as u64);
                    let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    t.with_center(x_true[t.index] + t.standard_error * e)
                })
                .collect();
            let c = calibrated_interval_whitened(&whitened, base_constraints, plan, &realized, &y_w, cfg.mode, cfg.interval)?;
            let b = baseline.solve(&y_w, plan.total_alpha, cfg.mode)?;
            Ok((c.result.contains(theta), c.result.length(), b.length(), c.clipped.iter().any(|&x| x)))
        })
        .collect();
    let mut hits = 0usize;
    let mut clipped = 0usize;
    let (mut lengths, mut base_lengths) = (Vec::new(), Vec::new());
    for (covered, len, base, clip) in outcomes.iter().filter_map(|o| o.as_ref().ok()) {
        hits += *covered as usize;
        clipped += *clip as usize;
        lengths.push(*len);
        base_lengths.push(*base);
    }
    let failures = cfg.n_noise - lengths.len();
    cfg.check_failures(failures, cfg.n_noise)?;
    if lengths.is_empty() {
        return Err(outcomes.into_iter().find_map(|o| o.err()).expect("some replicate failed"));
    }
    let s = summarise(&lengths, failures);
    let n = lengths.len() as f64;
    Ok(CoverageRow {
        standard_error: templates.first().map_or(f64::NAN, |t| t.standard_error),
        internal_level: plan.internal_level(),
        constraint_level: 1.0 - plan.alphas.iter().sum::<f64>(),
        empirical_coverage: hits as f64 / n,
        mean_length: s.mean_length,
        length_se: s.length_se,
        baseline_mean_length: base_lengths.iter().sum::<f64>() / n,
        n_replicates: lengths.len(),
        failures,
        clipped_fraction: clipped as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseCovariance;
    use nalgebra::DMatrix;

    #[test]
    fn plan_budget() {
        let p = make_plan(0.05, &[0.0025], None).unwrap();
        assert!((p.gamma - 0.0475).abs() < 1e-15);
        assert!((p.internal_level() - 0.9525).abs() < 1e-12);
        let p = make_plan(0.05, &[0.0075], None).unwrap();
        assert!((p.internal_level() - 0.9575).abs() < 1e-12);
        assert_eq!(make_plan(0.05, &[], None).unwrap().gamma, 0.05);
        assert!(matches!(
            make_plan(0.05, &[0.01], Some(0.045)),
            Err(Error::BudgetMismatch { .. })
        ));
        assert!(make_plan(0.05, &[0.06], None).is_err());
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = gamma_grid(0.05, 40);
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.0005).abs() < 1e-15);
        assert!((g[39] - 0.0495).abs() < 1e-15);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    }

    #[test]
    fn box_expansion_and_clipping() {
        let pc = ProbabilisticConstraint::new(0, 10.0, 2.0, 0.05).unwrap();
        let (lo, hi) = pc.bounds();
        assert!((hi - 10.0 - 1.959963984540054 * 2.0).abs() < 1e-12);
        assert!((10.0 - lo - (hi - 10.0)).abs() < 1e-12);
        let base = ConstraintSet::from_descriptors(1, vec![Descriptor::NonNegative(0)]).unwrap();
        assert_eq!(clip_box(&base, 0, (-1.0, 3.0)).unwrap(), ((0.0, 3.0), true));
        assert_eq!(clip_box(&base, 0, (1.0, 3.0)).unwrap(), ((1.0, 3.0), false));
        assert!(matches!(clip_box(&base, 0, (-3.0, -1.0)), Err(Error::InfeasibleConstraints { .. })));
        assert!(ProbabilisticConstraint::new(0, 1.0, 0.0, 0.05).is_err());
    }

    fn two_var() -> LinearProblem {
        // The second variable is invisible to K but enters h.
        let k = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.5, 0.0]);
        LinearProblem::new(k, NoiseCovariance::identity(3), DVector::from_vec(vec![1.0, 1.0])).unwrap()
    }

    #[test]
    fn boxes_shrink_the_interval() {
        let problem = two_var();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let base = ConstraintSet::from_descriptors(2, vec![Descriptor::Box { index: 1, lo: 0.0, hi: 10.0 }]).unwrap();
        let cfg = SweepConfig {
            n_noise: 20,
            ..Default::default()
        };
        let imp = variable_importance(&problem, &base, &x, &[0, 1], &cfg).unwrap();
        assert_eq!(imp[0].index, None);
        assert!(imp[2].mean_length < imp[0].mean_length - 9.0);
        let sweep = box_sweep(&problem, &base, &x, 1, 2.0, &[f64::INFINITY, 1.0, 0.0], &cfg).unwrap();
        assert_eq!(sweep.rows[0].mean_length, sweep.baseline.mean_length);
        assert!(sweep.rows[1].mean_length < sweep.rows[0].mean_length);
        assert!((sweep.rows[2].mean_length - imp[2].mean_length).abs() < 1e-9);
    }

    #[test]
    fn calibrated_without_boxes_is_plain_solve() {
        let problem = two_var();
        let base = ConstraintSet::from_descriptors(2, vec![Descriptor::Box { index: 1, lo: 0.0, hi: 4.0 }]).unwrap();
        let plan = make_plan(0.05, &[], None).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.5, 0.2]);
        let c = calibrated_interval(&problem, &base, &plan, &[], &y, RadiusMode::OneAtATime, IntervalOptions::default())
            .unwrap();
        let w = whiten_operator(&problem).unwrap();
        let direct = crate::interval::solve_interval(&w, &y, &base, 0.05, RadiusMode::OneAtATime).unwrap();
        assert!((c.result.lower - direct.lower).abs() < 1e-9);
        assert!((c.result.upper - direct.upper).abs() < 1e-9);
    }

    #[test]
    fn union_bound_holds_on_a_toy() {
        let problem = two_var();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let base = ConstraintSet::from_descriptors(2, vec![Descriptor::Box { index: 1, lo: 0.0, hi: 10.0 }]).unwrap();
        let plan = make_plan(0.05, &[0.01], None).unwrap();
        let t = ProbabilisticConstraint::new(1, 0.0, 0.5, 0.01).unwrap();
        let cfg = SweepConfig {
            n_noise: 2000,
            seed: 5,
            ..Default::default()
        };
        let row = calibration_coverage(&problem, &base, &plan, &[t], &x, &cfg).unwrap();
        assert!(row.empirical_coverage >= 0.95 - 3.0 * (0.05f64 * 0.95 / 2000.0).sqrt());
        assert!(row.mean_length < row.baseline_mean_length);
    }
}

//! Monte Carlo coverage studies for single soundings and closed-form bias
//! and coverage maps over a spatial grid.
//!
//! Seed schedule: state `i` is drawn from stream `(STATE, i, 0)` and noise
//! draw `j` for state `i` from `(NOISE, i, j)`. Both methods see the same
//! noise draws. Noise is drawn directly in whitened coordinates, where it is
//! standard normal whatever the noise covariance.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{bayes_coverage, BayesOperator, BayesResult, PriorModel};
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::interval::{IntervalOptions, IntervalResult, IntervalSolver, RadiusMode};
use crate::model::{whiten_operator, LinearProblem, WhitenedProblem};
use crate::simulation::{standard_normal_vec, streams, substream, GenerativeModel, SpatialModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bayes,
    Frequentist,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bayes => "bayes",
            Method::Frequentist => "frequentist",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(Method::Bayes),
            "frequentist" => Ok(Method::Frequentist),
            other => Err(Error::invalid("method", format!("unknown method '{other}'"))),
        }
    }
}

/// Anything with a closed `[lower, upper]` interval.
pub trait Bounded {
    fn bounds(&self) -> (f64, f64);
}

impl Bounded for IntervalResult {
    fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }
}

impl Bounded for BayesResult {
    fn bounds(&self) -> (f64, f64) {
        self.credible_interval
    }
}

impl Bounded for (f64, f64) {
    fn bounds(&self) -> (f64, f64) {
        *self
    }
}

/// 1 iff `lower <= theta_true <= upper`.
pub fn interval_indicator(interval: &impl Bounded, theta_true: f64) -> u8 {
    let (lo, hi) = interval.bounds();
    u8::from(lo <= theta_true && theta_true <= hi)
}

/// Run `f` on a pool of `workers` threads; 0 keeps the global pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Single-sounding study

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub alpha: f64,
    pub n_states: usize,
    pub n_noise_bayes: usize,
    pub n_noise_freq: usize,
    pub seed: u64,
    pub mode: RadiusMode,
    pub methods: Vec<Method>,
    /// Abort once more than this fraction of frequentist solves has failed.
    pub failure_threshold: f64,
    pub histogram_width: f64,
    pub interval: IntervalOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            alpha: 0.05,
            n_states: 100,
            n_noise_bayes: 10_000,
            n_noise_freq: 1000,
            seed: 0,
            mode: RadiusMode::OneAtATime,
            methods: vec![Method::Bayes, Method::Frequentist],
            failure_threshold: 0.01,
            histogram_width: 0.005,
            interval: IntervalOptions::default(),
        }
    }
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_states == 0 {
            return Err(Error::invalid("n_states", "need at least one state"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "need at least one method"));
        }
        if self.runs(Method::Bayes) && self.n_noise_bayes == 0 {
            return Err(Error::invalid("n_noise_bayes", "need at least one noise draw"));
        }
        if self.runs(Method::Frequentist) && self.n_noise_freq == 0 {
            return Err(Error::invalid("n_noise_freq", "need at least one noise draw"));
        }
        if !(0.0..1.0).contains(&self.failure_threshold) {
            return Err(Error::invalid("failure_threshold", "must lie in [0, 1)"));
        }
        if !(self.histogram_width > 0.0 && self.histogram_width <= 1.0) {
            return Err(Error::invalid("histogram_width", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn runs(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// One row of `per_x.csv`. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerXRow {
    pub x_id: usize,
    pub method: Method,
    pub bias: Option<f64>,
    pub analytic_coverage: Option<f64>,
    pub empirical_coverage: f64,
    pub mean_length: f64,
    pub length_sd: f64,
    /// Successful draws; the coverage denominator.
    pub n_noise_draws: usize,
    /// Draws excluded because the solver failed.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub x_id: usize,
    pub draw: usize,
    pub code: String,
    pub message: String,
}

/// Counts of per-x empirical coverages in `[lower, upper)`; the last bin is
/// closed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub bayes: usize,
    pub frequentist: usize,
}

/// Fraction of x rows whose coverage falls below `1 - alpha`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Undercoverage {
    pub bayes_analytic: Option<f64>,
    pub bayes_empirical: Option<f64>,
    pub frequentist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub alpha: f64,
    pub seed: u64,
    pub mode: RadiusMode,
    pub n_states: usize,
    pub per_x: Vec<PerXRow>,
    pub histogram: Vec<HistogramBin>,
    pub undercoverage_fraction: Undercoverage,
    pub failures: Vec<FailureRecord>,
    /// Every Bayes row agrees with its analytic coverage.
    pub bayes_gate_passed: bool,
    /// x ids of Bayes rows that failed the agreement gate.
    pub gate_violations: Vec<usize>,
    /// Coefficient of variation of the frequentist mean length across x.
    pub frequentist_length_cv: Option<f64>,
}

impl StudyReport {
    pub fn rows(&self, method: Method) -> impl Iterator<Item = &PerXRow> {
        self.per_x.iter().filter(move |r| r.method == method)
    }
}

/// Tolerance of the Bayes agreement gate for analytic coverage `c`.
pub fn gate_tolerance(c: f64, n: usize) -> f64 {
    3.0 * (c * (1.0 - c) / n as f64).sqrt() + 0.005
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn noise_draw(seed: u64, x_id: usize, draw: usize, n: usize) -> DVector<f64> {
    standard_normal_vec(n, &mut substream(seed, streams::NOISE, x_id as u64, draw as u64))
}

/// States used by a study, drawn from streams `(STATE, i, 0)`.
pub fn study_states(generative: &GenerativeModel, n_states: usize, seed: u64) -> Vec<DVector<f64>> {
    let sampler = generative.sampler();
    (0..n_states)
        .map(|i| sampler.sample(&mut substream(seed, streams::STATE, i as u64, 0)))
        .collect()
}

fn bayes_row(op: &BayesOperator, x: &DVector<f64>, x_id: usize, cfg: &StudyConfig) -> Result<PerXRow> {
    let w = op.whitened();
    let kx = &w.k_w * x;
    let theta = w.h.dot(x);
    let bias = op.bias(x)?;
    let analytic = bayes_coverage(bias, op.standard_error(), op.posterior_sd(), cfg.alpha);
    let mut hits = 0usize;
    for j in 0..cfg.n_noise_bayes {
        let y_w = &kx + noise_draw(cfg.seed, x_id, j, w.n());
        let interval = op.interval(op.theta_hat_whitened(&y_w), cfg.alpha);
        hits += interval_indicator(&interval, theta) as usize;
    }
    let (lo, hi) = op.interval(0.0, cfg.alpha);
    Ok(PerXRow {
        x_id,
        method: Method::Bayes,
        bias: Some(bias),
        analytic_coverage: Some(analytic),
        empirical_coverage: hits as f64 / cfg.n_noise_bayes as f64,
        mean_length: hi - lo,
        length_sd: 0.0,
        n_noise_draws: cfg.n_noise_bayes,
        failures: 0,
    })
}

/// Fold per-draw outcomes in draw order into a row, logging failures.
fn frequentist_row(x_id: usize, outcomes: Vec<Result<(bool, f64)>>, failures: &mut Vec<FailureRecord>) -> PerXRow {
    let mut hits = 0usize;
    let mut lengths = Vec::with_capacity(outcomes.len());
    let mut failed = 0usize;
    for (j, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((covered, len)) => {
                hits += covered as usize;
                lengths.push(len);
            }
            Err(e) => {
                failed += 1;
                failures.push(FailureRecord {
                    x_id,
                    draw: j,
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let (mean_length, length_sd) = mean_sd(&lengths);
    PerXRow {
        x_id,
        method: Method::Frequentist,
        bias: None,
        analytic_coverage: None,
        empirical_coverage: hits as f64 / lengths.len() as f64,
        mean_length,
        length_sd,
        n_noise_draws: lengths.len(),
        failures: failed,
    }
}

fn check_failure_budget(failed: usize, planned: usize, threshold: f64) -> Result<()> {
    if failed as f64 > threshold * planned as f64 {
        return Err(Error::FailureBudgetExceeded {
            failed,
            total: planned,
            threshold,
        });
    }
    Ok(())
}

/// Coverage histogram of the per-x empirical coverages.
pub fn coverage_histogram(rows: &[PerXRow], width: f64) -> Vec<HistogramBin> {
    let finite: Vec<&PerXRow> = rows.iter().filter(|r| r.empirical_coverage.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let top = ((1.0 / width).ceil() as i64 - 1).max(0);
    let bin = |c: f64| ((c / width).floor() as i64).clamp(0, top);
    let first = finite.iter().map(|r| bin(r.empirical_coverage)).min().unwrap_or(0);
    let mut bins: Vec<HistogramBin> = (first..=top)
        .map(|k| HistogramBin {
            lower: k as f64 * width,
            upper: ((k + 1) as f64 * width).min(1.0),
            bayes: 0,
            frequentist: 0,
        })
        .collect();
    for r in finite {
        let b = &mut bins[(bin(r.empirical_coverage) - first) as usize];
        match r.method {
            Method::Bayes => b.bayes += 1,
            Method::Frequentist => b.frequentist += 1,
        }
    }
    bins
}

fn fraction_below<'a>(values: impl Iterator<Item = f64>, nominal: f64) -> Option<f64> {
    let (mut below, mut total) = (0usize, 0usize);
    for v in values {
        total += 1;
        below += usize::from(v < nominal);
    }
    (total > 0).then(|| below as f64 / total as f64)
}

/// Coverage and length of both methods over `n_states` true states, each
/// with its own noise draws.
pub fn run_single_sounding_study(
    problem: &LinearProblem,
    prior: &PriorModel,
    generative: &GenerativeModel,
    constraints: &ConstraintSet,
    config: &StudyConfig,
) -> Result<StudyReport> {
    config.validate()?;
    let whitened = whiten_operator(problem)?;
    if generative.dim() != whitened.p() {
        return Err(Error::dim("mu_x", whitened.p(), generative.dim()));
    }
    let states = study_states(generative, config.n_states, config.seed);
    let mut per_x = Vec::new();
    let mut failures = Vec::new();

    if config.runs(Method::Bayes) {
        let op = BayesOperator::from_whitened(whitened.clone(), prior)?;
        let rows: Result<Vec<PerXRow>> = states
            .par_iter()
            .enumerate()
            .map(|(i, x)| bayes_row(&op, x, i, config))
            .collect();
        per_x.extend(rows?);
    }

    if config.runs(Method::Frequentist) {
        let solver = IntervalSolver::new(&whitened, constraints, config.interval)?;
        let planned = config.n_states * config.n_noise_freq;
        for (i, x) in states.iter().enumerate() {
            let outcomes = frequentist_outcomes(&solver, &whitened, x, i, config);
            per_x.push(frequentist_row(i, outcomes, &mut failures));
            check_failure_budget(failures.len(), planned, config.failure_threshold)?;
        }
    }

    Ok(assemble_report(per_x, failures, config))
}

fn frequentist_outcomes(
    solver: &IntervalSolver,
    whitened: &WhitenedProblem,
    x: &DVector<f64>,
    x_id: usize,
    cfg: &StudyConfig,
) -> Vec<Result<(bool, f64)>> {
    let kx = &whitened.k_w * x;
    let theta = whitened.h.dot(x);
    (0..cfg.n_noise_freq)
        .into_par_iter()
        .map(|j| {
            let y_w = &kx + noise_draw(cfg.seed, x_id, j, whitened.n());
            let r = solver.solve(&y_w, cfg.alpha, cfg.mode)?;
            Ok((interval_indicator(&r, theta) == 1, r.length()))
        })
        .collect()
}

fn assemble_report(per_x: Vec<PerXRow>, failures: Vec<FailureRecord>, cfg: &StudyConfig) -> StudyReport {
    let nominal = 1.0 - cfg.alpha;
    let gate_violations: Vec<usize> = per_x
        .iter()
        .filter(|r| r.method == Method::Bayes)
        .filter(|r| {
            let c = r.analytic_coverage.unwrap_or(f64::NAN);
            !((r.empirical_coverage - c).abs() <= gate_tolerance(c, r.n_noise_draws))
        })
        .map(|r| r.x_id)
        .collect();
    let of = |m: Method| per_x.iter().filter(move |r| r.method == m);
    let undercoverage_fraction = Undercoverage {
        bayes_analytic: fraction_below(of(Method::Bayes).filter_map(|r| r.analytic_coverage), nominal),
        bayes_empirical: fraction_below(of(Method::Bayes).map(|r| r.empirical_coverage), nominal),
        frequentist: fraction_below(of(Method::Frequentist).map(|r| r.empirical_coverage), nominal),
    };
    let lengths: Vec<f64> = of(Method::Frequentist).map(|r| r.mean_length).collect();
    let frequentist_length_cv = (!lengths.is_empty()).then(|| {
        let (m, sd) = mean_sd(&lengths);
        sd / m
    });
    StudyReport {
        alpha: cfg.alpha,
        seed: cfg.seed,
        mode: cfg.mode,
        n_states: cfg.n_states,
        histogram: coverage_histogram(&per_x, cfg.histogram_width),
        per_x,
        undercoverage_fraction,
        failures,
        bayes_gate_passed: gate_violations.is_empty(),
        gate_violations,
        frequentist_length_cv,
    }
}

// ---------------------------------------------------------------------------
// Grid study

/// One row of `per_location.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRow {
    pub location_id: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub bias: f64,
    pub analytic_coverage: f64,
    /// `analytic_coverage - (1 - alpha)`.
    pub delta_from_nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub alpha: f64,
    pub seed: u64,
    /// Diagonal jitter added to factor the spatial covariance.
    pub jitter: f64,
    pub per_location: Vec<LocationRow>,
    pub fraction_below_nominal: f64,
    /// Moran's I of the bias over nearest-neighbour pairs.
    pub bias_lag1_autocorrelation: Option<f64>,
}

/// Closed-form Bayes bias and coverage at every location of one grid draw.
pub fn run_grid_study(
    problem: &LinearProblem,
    prior: &PriorModel,
    spatial: &SpatialModel,
    alpha: f64,
    seed: u64,
) -> Result<GridReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let op = BayesOperator::new(problem, prior)?;
    if spatial.base.dim() != problem.p() {
        return Err(Error::dim("spatial.base", problem.p(), spatial.base.dim()));
    }
    let sampler = spatial.sampler()?;
    let states = sampler.sample(&mut substream(seed, streams::GRID, 0, 0));
    let nominal = 1.0 - alpha;
    let mut per_location = Vec::with_capacity(spatial.n_locations());
    for (a, loc) in spatial.locations.iter().enumerate() {
        let x = states.row(a).transpose();
        let bias = op.bias(&x)?;
        let cov = bayes_coverage(bias, op.standard_error(), op.posterior_sd(), alpha);
        per_location.push(LocationRow {
            location_id: a,
            x_km: loc[0],
            y_km: loc[1],
            bias,
            analytic_coverage: cov,
            delta_from_nominal: cov - nominal,
        });
    }
    let below = per_location.iter().filter(|r| r.analytic_coverage < nominal).count();
    let biases: Vec<f64> = per_location.iter().map(|r| r.bias).collect();
    Ok(GridReport {
        alpha,
        seed,
        jitter: sampler.jitter,
        fraction_below_nominal: below as f64 / per_location.len() as f64,
        bias_lag1_autocorrelation: lag1_autocorrelation(&spatial.locations, &biases),
        per_location,
    })
}

/// Moran's I with binary weights on nearest-neighbour pairs, i.e. pairs at
/// the smallest positive inter-site distance. On a regular grid these are
/// the four rook neighbours. `None` without neighbours or variation.
pub fn lag1_autocorrelation(locations: &[[f64; 2]], values: &[f64]) -> Option<f64> {
    let n = locations.len();
    if n < 2 || values.len() != n {
        return None;
    }
    let dist = |a: usize, b: usize| {
        let (p, q) = (locations[a], locations[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let mut dmin = f64::INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            let d = dist(a, b);
            if d > 0.0 && d < dmin {
                dmin = d;
            }
        }
    }
    if !dmin.is_finite() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) {
        return None;
    }
    let (mut num, mut pairs) = (0.0, 0usize);
    for a in 0..n {
        for b in a + 1..n {
            let d = dist(a, b);
            if d > 0.0 && d <= dmin * (1.0 + 1e-9) {
                num += dev[a] * dev[b];
                pairs += 1;
            }
        }
    }
    // Ordered pairs: both sums double, so the ratio uses unordered counts.
    Some(n as f64 / pairs as f64 * num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseCovariance;
    use nalgebra::DMatrix;

    fn small_problem() -> (LinearProblem, PriorModel, GenerativeModel) {
        let k = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5, 0.1, -0.4]);
        let h = DVector::from_vec(vec![0.5, 0.5]);
        let problem = LinearProblem::new(k, NoiseCovariance::identity(4), h).unwrap();
        let prior = PriorModel::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let generative = GenerativeModel::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::identity(2, 2) * 4.0).unwrap();
        (problem, prior, generative)
    }

    #[test]
    fn indicator_is_closed() {
        assert_eq!(interval_indicator(&(1.0, 2.0), 1.5), 1);
        assert_eq!(interval_indicator(&(1.0, 2.0), 1.0), 1);
        assert_eq!(interval_indicator(&(1.0, 2.0), 2.0), 1);
        assert_eq!(interval_indicator(&(1.0, 2.0), 2.0 + 1e-12), 0);
    }

    #[test]
    fn histogram_edges_and_counts() {
        let row = |m, c| PerXRow {
            x_id: 0,
            method: m,
            bias: None,
            analytic_coverage: None,
            empirical_coverage: c,
            mean_length: 1.0,
            length_sd: 0.0,
            n_noise_draws: 10,
            failures: 0,
        };
        let rows = vec![row(Method::Bayes, 0.951), row(Method::Frequentist, 0.9549), row(Method::Frequentist, 1.0)];
        let bins = coverage_histogram(&rows, 0.005);
        assert!((bins[0].lower - 0.95).abs() < 1e-12);
        assert_eq!((bins[0].bayes, bins[0].frequentist), (1, 1));
        let last = bins.last().unwrap();
        assert_eq!(last.upper, 1.0);
        assert_eq!(last.frequentist, 1);
        assert!(coverage_histogram(&[], 0.005).is_empty());
    }

    #[test]
    fn failed_draws_leave_the_denominator() {
        let outcomes = vec![
            Ok((true, 2.0)),
            Err(Error::SolverStall {
                iterations: 3,
                pres: 1.0,
                dres: 1.0,
                gap: 1.0,
            }),
            Ok((false, 4.0)),
        ];
        let mut fails = Vec::new();
        let row = frequentist_row(7, outcomes, &mut fails);
        assert_eq!((row.n_noise_draws, row.failures), (2, 1));
        assert_eq!(row.empirical_coverage, 0.5);
        assert_eq!(row.mean_length, 3.0);
        assert_eq!(fails[0].draw, 1);
        assert_eq!(fails[0].code, "solver_stall");
        assert!(check_failure_budget(1, 100, 0.01).is_ok());
        assert!(matches!(check_failure_budget(2, 100, 0.01), Err(Error::FailureBudgetExceeded { .. })));
    }

    #[test]
    fn point_mass_at_prior_mean_overcovers() {
        let (problem, prior, _) = small_problem();
        let gen = GenerativeModel::new(prior.mu_a.clone(), DMatrix::zeros(2, 2)).unwrap();
        let cfg = StudyConfig {
            n_states: 3,
            n_noise_bayes: 2000,
            methods: vec![Method::Bayes],
            ..Default::default()
        };
        let rep = run_single_sounding_study(&problem, &prior, &gen, &ConstraintSet::empty(2), &cfg).unwrap();
        for r in &rep.per_x {
            assert_eq!(r.bias, Some(0.0));
            assert!(r.analytic_coverage.unwrap() > 0.95);
        }
        assert!(rep.bayes_gate_passed);
    }

    #[test]
    fn study_is_deterministic_and_gated() {
        let (problem, prior, gen) = small_problem();
        let cfg = StudyConfig {
            n_states: 4,
            n_noise_bayes: 3000,
            n_noise_freq: 200,
            seed: 11,
            ..Default::default()
        };
        let cons = ConstraintSet::empty(2);
        let a = run_single_sounding_study(&problem, &prior, &gen, &cons, &cfg).unwrap();
        let b = with_workers(2, || run_single_sounding_study(&problem, &prior, &gen, &cons, &cfg))
            .unwrap()
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_x.len(), 8);
        assert!(a.bayes_gate_passed, "violations {:?}", a.gate_violations);
        // Unconstrained full-rank lengths are the same for every draw.
        for r in a.rows(Method::Frequentist) {
            assert!(r.length_sd < 1e-8 * r.mean_length);
        }
    }

    #[test]
    fn moran_extremes() {
        let locs = SpatialModel::grid_locations(4, 4, 1.0);
        let checker: Vec<f64> = locs.iter().map(|l| if (l[0] + l[1]) as i64 % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((lag1_autocorrelation(&locs, &checker).unwrap() + 1.0).abs() < 1e-12);
        let ramp: Vec<f64> = locs.iter().map(|l| l[0]).collect();
        assert!(lag1_autocorrelation(&locs, &ramp).unwrap() > 0.5);
        assert_eq!(lag1_autocorrelation(&locs, &vec![2.0; 16]), None);
    }

    #[test]
    fn infinite_range_gives_one_bias() {
        let (problem, prior, gen) = small_problem();
        let spatial = SpatialModel::isotropic(SpatialModel::grid_locations(3, 3, 1.0), 1.5, 1e9, gen).unwrap();
        let rep = run_grid_study(&problem, &prior, &spatial, 0.05, 3).unwrap();
        let b0 = rep.per_location[0].bias;
        for r in &rep.per_location {
            assert!((r.bias - b0).abs() < 1e-3);
            assert_eq!(r.delta_from_nominal, r.analytic_coverage - 0.95);
        }
    }
}

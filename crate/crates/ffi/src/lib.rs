//! C ABI over `uq-retrieval`.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible call returns a [`UqStatus`]; on failure the message is kept
//! per thread and can be copied out with [`uq_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use uq_retrieval::bayes::{bayes_coverage, BayesOperator, PriorModel};
use uq_retrieval::constraints::{ConstraintSet, Descriptor};
use uq_retrieval::interval::{IntervalOptions, IntervalSolver, RadiusMode};
use uq_retrieval::model::{whiten_operator, LinearProblem, NoiseCovariance, WhitenedProblem};
use uq_retrieval::nalgebra::{DMatrix, DVector};
use uq_retrieval::{io, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    /// Cholesky failure, singular or rank-deficient system.
    Numerical = 4,
    Infeasible = 5,
    Unbounded = 6,
    /// Solver stall, missing certificate or failure budget.
    SolverFailure = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for UqStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => UqStatus::DimensionMismatch,
            Error::InvalidInput { .. } | Error::BudgetMismatch { .. } => UqStatus::InvalidInput,
            Error::CholeskyFailure(_) | Error::SingularSystem | Error::RankDeficient { .. } | Error::AssemblyNotPsd { .. } => {
                UqStatus::Numerical
            }
            Error::InfeasibleConstraints { .. } | Error::EmptyConfidenceSet { .. } => UqStatus::Infeasible,
            Error::UnboundedFunctional { .. } => UqStatus::Unbounded,
            Error::SolverStall { .. } | Error::CertificateUnavailable(_) | Error::FailureBudgetExceeded { .. } => {
                UqStatus::SolverFailure
            }
            Error::WouldOverwrite(_) | Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } => UqStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqMode {
    OneAtATime = 0,
    Simultaneous = 1,
}

/// Opaque forward problem, whitened once at construction.
pub struct UqProblem {
    problem: LinearProblem,
    whitened: WhitenedProblem,
}

/// Opaque constraint set `A x <= b`.
pub struct UqConstraints {
    set: ConstraintSet,
}

/// Opaque Gaussian prior.
pub struct UqPrior {
    prior: PriorModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UqBayesInterval {
    pub theta_hat: f64,
    pub posterior_sd: f64,
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UqInterval {
    pub lower: f64,
    pub upper: f64,
    pub slack_sq: f64,
    pub radius_sq: f64,
    pub relative_gap: f64,
    /// 1 when both dual certificates re-verified.
    pub certified: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, recording any error or panic for [`uq_last_error`].
fn guard(f: impl FnOnce() -> Result<(), UqFail>) -> UqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            UqStatus::Ok
        }
        Ok(Err(UqFail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            UqStatus::Panic
        }
    }
}

struct UqFail(UqStatus, String);

impl From<Error> for UqFail {
    fn from(e: Error) -> Self {
        UqFail((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> UqFail {
    UqFail(UqStatus::NullPointer, format!("`{what}` is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], UqFail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or a handle from the matching constructor.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, UqFail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), UqFail> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn build_problem(problem: LinearProblem) -> Result<UqProblem, UqFail> {
    let whitened = whiten_operator(&problem)?;
    Ok(UqProblem { problem, whitened })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn uq_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Problem from a row-major `n x p` operator, diagonal noise variances and
/// functional weights.
///
/// # Safety
/// `k` must hold `n * p` doubles, `noise_var` `n` and `h` `p`; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_problem_new(
    n: usize,
    p: usize,
    k: *const f64,
    noise_var: *const f64,
    h: *const f64,
    out: *mut *mut UqProblem,
) -> UqStatus {
    guard(|| {
        let k = DMatrix::from_row_slice(n, p, slice(k, n * p, "k")?);
        let noise = NoiseCovariance::Diagonal(DVector::from_column_slice(slice(noise_var, n, "noise_var")?));
        let h = DVector::from_column_slice(slice(h, p, "h")?);
        boxed(out, build_problem(LinearProblem::new(k, noise, h)?)?)
    })
}

/// Problem read from a JSON problem file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_problem_from_json(path: *const c_char, out: *mut *mut UqProblem) -> UqStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| UqFail(UqStatus::InvalidInput, "path is not UTF-8".into()))?;
        boxed(out, build_problem(io::load_problem(path.as_ref())?)?)
    })
}

/// # Safety
/// `problem` must be null or a live handle; writes to null outputs are skipped.
#[no_mangle]
pub unsafe extern "C" fn uq_problem_dims(problem: *const UqProblem, n: *mut usize, p: *mut usize) -> UqStatus {
    guard(|| {
        let pr = handle(problem, "problem")?;
        if let Some(n) = n.as_mut() {
            *n = pr.problem.n();
        }
        if let Some(p) = p.as_mut() {
            *p = pr.problem.p();
        }
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uq_problem_free(problem: *mut UqProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Empty constraint set over `p` variables.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_constraints_new(p: usize, out: *mut *mut UqConstraints) -> UqStatus {
    guard(|| boxed(out, UqConstraints { set: ConstraintSet::empty(p) }))
}

unsafe fn add(c: *mut UqConstraints, d: Descriptor) -> UqStatus {
    guard(|| {
        let c = c.as_mut().ok_or_else(|| null("constraints"))?;
        let set = std::mem::replace(&mut c.set, ConstraintSet::empty(0));
        match set.clone().with(d) {
            Ok(s) => {
                c.set = s;
                Ok(())
            }
            Err(e) => {
                c.set = set;
                Err(e.into())
            }
        }
    })
}

/// Adds `x[index] >= 0`.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uq_constraints_add_nonnegative(c: *mut UqConstraints, index: usize) -> UqStatus {
    add(c, Descriptor::NonNegative(index))
}

/// Adds `lo <= x[index] <= hi`; pass an infinity to leave a side open.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uq_constraints_add_box(c: *mut UqConstraints, index: usize, lo: f64, hi: f64) -> UqStatus {
    add(c, Descriptor::Box { index, lo, hi })
}

/// Adds `row . x <= bound` for a dense row of length `p`.
///
/// # Safety
/// `c` must be null or a live handle and `row` must hold `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn uq_constraints_add_general(c: *mut UqConstraints, row: *const f64, bound: f64) -> UqStatus {
    let Some(p) = c.as_ref().map(|c| c.set.p()) else {
        return guard(|| Err(null("constraints")));
    };
    match slice(row, p, "row") {
        Ok(r) => add(
            c,
            Descriptor::General {
                row: DVector::from_column_slice(r),
                bound,
            },
        ),
        Err(f) => guard(|| Err(f)),
    }
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uq_constraints_free(c: *mut UqConstraints) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Prior with mean `mu` and row-major covariance `sigma`.
///
/// # Safety
/// `mu` must hold `p` doubles and `sigma` `p * p`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_prior_new(p: usize, mu: *const f64, sigma: *const f64, out: *mut *mut UqPrior) -> UqStatus {
    guard(|| {
        let mu = DVector::from_column_slice(slice(mu, p, "mu")?);
        let sigma = DMatrix::from_row_slice(p, p, slice(sigma, p * p, "sigma")?);
        boxed(out, UqPrior { prior: PriorModel::new(mu, sigma)? })
    })
}

/// # Safety
/// `prior` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uq_prior_free(prior: *mut UqPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Frequentist coverage of the Bayesian credible interval.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_bayes_coverage(bias: f64, standard_error: f64, posterior_sd: f64, alpha: f64, out: *mut f64) -> UqStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(alpha > 0.0 && alpha < 1.0) || !(standard_error > 0.0) || !(posterior_sd > 0.0) || !bias.is_finite() {
            return Err(UqFail(UqStatus::InvalidInput, "need finite bias, positive spreads and alpha in (0, 1)".into()));
        }
        *out = bayes_coverage(bias, standard_error, posterior_sd, alpha);
        Ok(())
    })
}

/// Bayesian estimate and credible interval from raw observations `y`.
///
/// # Safety
/// Handles must be live, `y` must hold `n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn uq_retrieve_bayes(
    problem: *const UqProblem,
    prior: *const UqPrior,
    y: *const f64,
    n: usize,
    alpha: f64,
    out: *mut UqBayesInterval,
) -> UqStatus {
    guard(|| {
        let pr = handle(problem, "problem")?;
        let prior = handle(prior, "prior")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let y = DVector::from_column_slice(slice(y, n, "y")?);
        let res = BayesOperator::from_whitened(pr.whitened.clone(), &prior.prior)?.retrieve(&y, alpha)?;
        *out = UqBayesInterval {
            theta_hat: res.theta_hat,
            posterior_sd: res.posterior_sd,
            standard_error: res.standard_error,
            lower: res.credible_interval.0,
            upper: res.credible_interval.1,
        };
        Ok(())
    })
}

/// Constrained frequentist interval from raw observations `y`.
/// `constraints` may be null for the unconstrained problem.
///
/// # Safety
/// Handles must be null or live, `y` must hold `n` doubles and `out` be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn uq_retrieve_freq(
    problem: *const UqProblem,
    constraints: *const UqConstraints,
    y: *const f64,
    n: usize,
    alpha: f64,
    mode: UqMode,
    out: *mut UqInterval,
) -> UqStatus {
    guard(|| {
        let pr = handle(problem, "problem")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let empty;
        let set = match constraints.as_ref() {
            Some(c) => &c.set,
            None => {
                empty = ConstraintSet::empty(pr.problem.p());
                &empty
            }
        };
        let y_w = pr.whitened.whiten_obs(&DVector::from_column_slice(slice(y, n, "y")?))?;
        let mode = match mode {
            UqMode::OneAtATime => RadiusMode::OneAtATime,
            UqMode::Simultaneous => RadiusMode::Simultaneous,
        };
        let res = IntervalSolver::new(&pr.whitened, set, IntervalOptions::default())?.solve(&y_w, alpha, mode)?;
        *out = UqInterval {
            lower: res.lower,
            upper: res.upper,
            slack_sq: res.slack_sq,
            radius_sq: res.radius_sq,
            relative_gap: res.solver_stats.relative_gap,
            certified: res.certified as i32,
        };
        Ok(())
    })
}

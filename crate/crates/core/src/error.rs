use thiserror::Error;

/// Errors surfaced by the library. Each variant maps onto a CLI exit code in
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("Cholesky factorisation failed for `{0}`: matrix is not positive definite")]
    CholeskyFailure(String),

    #[error("regularised normal matrix is numerically singular")]
    SingularSystem,

    #[error("constraint set {{x : Ax <= b}} is empty (Farkas certificate residual {residual:.3e})")]
    InfeasibleConstraints { residual: f64 },

    #[error("confidence set is empty: radius^2 {radius_sq:.6e} is below the constrained misfit {slack_sq:.6e}")]
    EmptyConfidenceSet { radius_sq: f64, slack_sq: f64 },

    #[error("functional is unbounded {direction} over the feasible set (recession direction with h'd = {slope:.3e})")]
    UnboundedFunctional { direction: &'static str, slope: f64 },

    #[error("interior-point solver stalled after {iterations} iterations (primal res {pres:.2e}, dual res {dres:.2e}, gap {gap:.2e})")]
    SolverStall {
        iterations: usize,
        pres: f64,
        dres: f64,
        gap: f64,
    },

    #[error("dual certificate unavailable: {0}")]
    CertificateUnavailable(String),

    #[error("forward operator is rank deficient (numeric rank {rank} < {p})")]
    RankDeficient { rank: usize, p: usize },

    #[error("spatial covariance assembly is not PSD: required jitter {jitter:.3e} exceeds cap {cap:.3e}")]
    AssemblyNotPsd { jitter: f64, cap: f64 },

    #[error("calibration budget mismatch: gamma + sum(alpha_i) = {sum} but total alpha = {total}")]
    BudgetMismatch { sum: f64, total: f64 },

    #[error("{failed} of {total} replicates failed, above the {threshold} abort threshold")]
    FailureBudgetExceeded {
        failed: usize,
        total: usize,
        threshold: f64,
    },

    #[error("refusing to overwrite existing file {0} (pass --force)")]
    WouldOverwrite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            field: field.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short stable identifier used in failure records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput { .. } => "invalid_input",
            Error::CholeskyFailure(_) => "cholesky_failure",
            Error::SingularSystem => "singular_system",
            Error::InfeasibleConstraints { .. } => "infeasible_constraints",
            Error::EmptyConfidenceSet { .. } => "empty_confidence_set",
            Error::UnboundedFunctional { .. } => "unbounded_functional",
            Error::SolverStall { .. } => "solver_stall",
            Error::CertificateUnavailable(_) => "certificate_unavailable",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::AssemblyNotPsd { .. } => "assembly_not_psd",
            Error::BudgetMismatch { .. } => "budget_mismatch",
            Error::FailureBudgetExceeded { .. } => "failure_budget_exceeded",
            Error::WouldOverwrite(_) => "would_overwrite",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
        }
    }

    /// Process exit code: 2 validation failure, 3 input error, 4 solver failure budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FailureBudgetExceeded { .. } => 4,
            Error::SolverStall { .. } | Error::CertificateUnavailable(_) => 4,
            _ => 3,
        }
    }
}

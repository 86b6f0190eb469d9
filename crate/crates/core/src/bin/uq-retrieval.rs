//! Batch front end. Every subcommand loads its inputs, calls one library
//! entry point and writes the result plus a `manifest.json`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use uq_retrieval::bayes::{bayes_retrieve, PriorFile};
use uq_retrieval::calibration::{
    box_sweep, calibrated_interval, calibration_coverage, gamma_grid, optimize_plan, variable_importance, ProbabilisticConstraint,
    SweepConfig,
};
use uq_retrieval::constraints::ConstraintFile;
use uq_retrieval::interval::{IntervalOptions, IntervalSolver, RadiusMode};
use uq_retrieval::io::{self, BayesRecord, FrequentistRecord, Manifest, OutputDir, PlanFile, Seeded};
use uq_retrieval::model::{whiten_operator, LinearProblem, ProblemFile};
use uq_retrieval::simulation::{gen_problem, observe, sample_noise, sample_state, GenerativeFile, SyntheticSpec};
use uq_retrieval::study::{run_grid_study, run_single_sounding_study, with_workers, Method, StudyConfig};
use uq_retrieval::validate::validate_files;
use uq_retrieval::{Error, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "uq-retrieval", version, about = "Bayesian and constrained frequentist intervals for linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replace existing output files.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, default_value = "one_at_a_time")]
    mode: RadiusMode,
    /// Solve on the full n-dimensional ball instead of the SVD reduction.
    #[arg(long)]
    no_reduce: bool,
}

impl SolverFlags {
    fn options(&self) -> IntervalOptions {
        IntervalOptions {
            reduce: !self.no_reduce,
            ..IntervalOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem, prior, generative model and constraints.
    GenProblem {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Bayesian credible interval for one observation.
    RetrieveBayes {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Constrained frequentist interval for one observation.
    RetrieveFreq {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        y: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Fail unless both dual certificates verify.
        #[arg(long)]
        certify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo coverage of both methods over sampled true states.
    CoverageStudy {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        generative: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n_states: usize,
        #[arg(long, default_value_t = 10_000)]
        n_noise_bayes: usize,
        #[arg(long, default_value_t = 1_000)]
        n_noise_freq: usize,
        #[arg(long, value_delimiter = ',', default_value = "bayes,frequentist")]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 0.005)]
        histogram_width: f64,
        /// Largest tolerated fraction of failed solves.
        #[arg(long, default_value_t = 0.01)]
        failure_threshold: f64,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form Bayes coverage over a spatially correlated grid.
    GridStudy {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// Generative model with a `spatial` block.
        #[arg(long)]
        generative: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Mean interval length with each variable fixed at its true value.
    Importance {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        x_true: PathBuf,
        /// Labels or 0-based positions; all variables when omitted.
        #[arg(long, value_delimiter = ',')]
        indices: Vec<String>,
        #[arg(long, default_value_t = 200)]
        n_noise: usize,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Mean interval length against the half-width of a box on one variable.
    BoxSweep {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        x_true: PathBuf,
        #[arg(long)]
        index: String,
        /// Box centre; defaults to the true value.
        #[arg(long)]
        center: Option<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        n_noise: usize,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Choose the internal level for one external constraint at the prior mean.
    CalibrateOptimize {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Its mean is the ansatz state.
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        index: String,
        /// Standard error of the external estimate.
        #[arg(long)]
        standard_error: f64,
        #[arg(long, default_value_t = 40)]
        n_gamma: usize,
        #[arg(long, default_value_t = 200)]
        n_noise: usize,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a calibration plan: one interval from `--y` and `--external`,
    /// or a coverage table from `--x-true`.
    CalibrateRun {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, conflicts_with = "y")]
        x_true: Option<PathBuf>,
        #[arg(long, requires = "external")]
        y: Option<PathBuf>,
        /// Realised external estimates, one per planned constraint.
        #[arg(long, value_delimiter = ',')]
        external: Vec<f64>,
        #[arg(long, default_value_t = 2_000)]
        n_replicates: usize,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-check the solver against independent oracles.
    Validate {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n_instances: usize,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenProblem { .. } => "gen-problem",
            Command::RetrieveBayes { .. } => "retrieve-bayes",
            Command::RetrieveFreq { .. } => "retrieve-freq",
            Command::CoverageStudy { .. } => "coverage-study",
            Command::GridStudy { .. } => "grid-study",
            Command::Importance { .. } => "importance",
            Command::BoxSweep { .. } => "box-sweep",
            Command::CalibrateOptimize { .. } => "calibrate-optimize",
            Command::CalibrateRun { .. } => "calibrate-run",
            Command::Validate { .. } => "validate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenProblem { common, .. }
            | Command::RetrieveBayes { common, .. }
            | Command::RetrieveFreq { common, .. }
            | Command::CoverageStudy { common, .. }
            | Command::GridStudy { common, .. }
            | Command::Importance { common, .. }
            | Command::BoxSweep { common, .. }
            | Command::CalibrateOptimize { common, .. }
            | Command::CalibrateRun { common, .. }
            | Command::Validate { common, .. } => common,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<Option<&PathBuf>> = match self {
            Command::GenProblem { spec, .. } => vec![spec.as_ref()],
            Command::RetrieveBayes { problem, prior, y, .. } => vec![Some(problem), Some(prior), Some(y)],
            Command::RetrieveFreq { problem, constraints, y, .. } => vec![Some(problem), constraints.as_ref(), Some(y)],
            Command::CoverageStudy {
                problem,
                prior,
                generative,
                constraints,
                ..
            } => vec![Some(problem), Some(prior), Some(generative), constraints.as_ref()],
            Command::GridStudy {
                problem, prior, generative, ..
            } => vec![Some(problem), Some(prior), Some(generative)],
            Command::Importance {
                problem, constraints, x_true, ..
            }
            | Command::BoxSweep {
                problem, constraints, x_true, ..
            } => vec![Some(problem), constraints.as_ref(), Some(x_true)],
            Command::CalibrateOptimize {
                problem, constraints, prior, ..
            } => vec![Some(problem), constraints.as_ref(), Some(prior)],
            Command::CalibrateRun {
                problem,
                constraints,
                plan,
                x_true,
                y,
                ..
            } => vec![Some(problem), constraints.as_ref(), Some(plan), x_true.as_ref(), y.as_ref()],
            Command::Validate { problem, constraints, .. } => vec![Some(problem), constraints.as_ref()],
        };
        v.drain(..).flatten().map(PathBuf::as_path).collect()
    }
}

fn resolve_index(problem: &LinearProblem, name: &str) -> Result<usize> {
    problem
        .index_of(name)
        .or_else(|| name.parse::<usize>().ok().filter(|&i| i < problem.p()))
        .ok_or_else(|| Error::invalid("index", format!("no state element `{name}`")))
}

fn sweep_config(common: &Common, solver: &SolverFlags, n_noise: usize) -> SweepConfig {
    SweepConfig {
        alpha: common.alpha,
        mode: solver.mode,
        n_noise,
        seed: common.seed,
        interval: solver.options(),
        ..SweepConfig::default()
    }
}

fn print_json<T: Serialize>(value: &T) {
    print!("{}", io::to_json(value));
}

/// Runs the command; `Ok(false)` means a validation check failed.
fn execute(cmd: &Command, out: &mut OutputDir) -> Result<bool> {
    let seed = cmd.common().seed;
    let alpha = cmd.common().alpha;
    match cmd {
        Command::GenProblem { spec, .. } => {
            let spec: SyntheticSpec = match spec {
                Some(p) => io::read_json(p)?,
                None => SyntheticSpec::default(),
            };
            out.claim(&["spec.json", "problem.json", "prior.json", "generative.json", "constraints.json", "x_true.json", "y.json"])?;
            let sp = gen_problem(&spec, seed)?;
            let x = sample_state(&sp.generative, seed);
            let y = observe(&sp.problem, &x, &sample_noise(&sp.noise, seed))?;
            out.write_json("spec.json", &spec)?;
            out.write_json("problem.json", &ProblemFile::from_problem(&sp.problem))?;
            out.write_json("prior.json", &PriorFile::from_prior(&sp.prior))?;
            out.write_json("generative.json", &GenerativeFile::from_models(&sp.generative, sp.spatial.as_ref()))?;
            out.write_json("constraints.json", &ConstraintFile::from_set(&sp.constraints, &sp.problem))?;
            out.write_json("x_true.json", x.as_slice())?;
            out.write_json("y.json", y.as_slice())?;
        }
        Command::RetrieveBayes { problem, prior, y, .. } => {
            out.claim(&["bayes.json", "multipliers.csv"])?;
            let problem = io::load_problem(problem)?;
            let prior = io::load_prior(prior)?;
            let y = io::load_vector(y, "y")?;
            let res = bayes_retrieve(&problem, &prior, &y, alpha)?;
            let record = BayesRecord::new(&res, alpha, seed);
            print_json(&record);
            out.write_json("bayes.json", &record)?;
            out.write_csv("multipliers.csv", &["label", "value"], &io::labelled(&problem, &res.bias_multipliers))?;
        }
        Command::RetrieveFreq {
            problem,
            constraints,
            y,
            solver,
            certify,
            ..
        } => {
            out.claim(&["interval.json"])?;
            let problem = io::load_problem(problem)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let y = io::load_vector(y, "y")?;
            let whitened = whiten_operator(&problem)?;
            let y_w = whitened.whiten_obs(&y)?;
            let res = IntervalSolver::new(&whitened, &set, solver.options())?.solve(&y_w, alpha, solver.mode)?;
            if *certify && !res.certified {
                return Err(Error::CertificateUnavailable("a dual certificate failed re-verification".into()));
            }
            let record = FrequentistRecord::new(&res, alpha, solver.mode, seed);
            print_json(&record);
            out.write_json("interval.json", &record)?;
        }
        Command::CoverageStudy {
            problem,
            prior,
            generative,
            constraints,
            n_states,
            n_noise_bayes,
            n_noise_freq,
            methods,
            histogram_width,
            failure_threshold,
            solver,
            ..
        } => {
            out.claim(&["report.json", "per_x.csv", "histogram.csv", "failures.csv"])?;
            let problem = io::load_problem(problem)?;
            let prior = io::load_prior(prior)?;
            let (generative, _) = io::load_generative(generative)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let config = StudyConfig {
                alpha,
                n_states: *n_states,
                n_noise_bayes: *n_noise_bayes,
                n_noise_freq: *n_noise_freq,
                seed,
                mode: solver.mode,
                methods: methods.clone(),
                failure_threshold: *failure_threshold,
                histogram_width: *histogram_width,
                interval: solver.options(),
            };
            let report = run_single_sounding_study(&problem, &prior, &generative, &set, &config)?;
            out.write_json("report.json", &report)?;
            out.write_csv("per_x.csv", io::PER_X_HEADER, &report.per_x)?;
            out.write_csv("histogram.csv", io::HISTOGRAM_HEADER, &report.histogram)?;
            out.write_csv("failures.csv", io::FAILURE_HEADER, &report.failures)?;
            if !report.bayes_gate_passed {
                log::warn!("Bayes analytic and empirical coverage disagree for x {:?}", report.gate_violations);
            }
        }
        Command::GridStudy {
            problem, prior, generative, ..
        } => {
            out.claim(&["report.json", "per_location.csv"])?;
            let problem = io::load_problem(problem)?;
            let prior = io::load_prior(prior)?;
            let (_, spatial) = io::load_generative(generative)?;
            let spatial = spatial.ok_or_else(|| Error::invalid("spatial", "generative model has no spatial block"))?;
            let report = run_grid_study(&problem, &prior, &spatial, alpha, seed)?;
            out.write_json("report.json", &report)?;
            out.write_csv("per_location.csv", io::PER_LOCATION_HEADER, &report.per_location)?;
        }
        Command::Importance {
            problem,
            constraints,
            x_true,
            indices,
            n_noise,
            solver,
            common,
        } => {
            out.claim(&["importance.json", "importance.csv"])?;
            let problem = io::load_problem(problem)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let x = io::load_vector(x_true, "x_true")?;
            let idx = if indices.is_empty() {
                (0..problem.p()).collect()
            } else {
                indices.iter().map(|s| resolve_index(&problem, s)).collect::<Result<Vec<_>>>()?
            };
            let rows = variable_importance(&problem, &set, &x, &idx, &sweep_config(common, solver, *n_noise))?;
            out.write_json("importance.json", &Seeded { seed, body: Rows { rows: &rows } })?;
            out.write_csv("importance.csv", io::IMPORTANCE_HEADER, &rows)?;
        }
        Command::BoxSweep {
            problem,
            constraints,
            x_true,
            index,
            center,
            deltas,
            n_noise,
            solver,
            common,
        } => {
            out.claim(&["box_sweep.json", "box_sweep.csv"])?;
            let problem = io::load_problem(problem)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let x = io::load_vector(x_true, "x_true")?;
            let i = resolve_index(&problem, index)?;
            let c = center.or_else(|| x.get(i).copied()).unwrap_or(f64::NAN);
            let sweep = box_sweep(&problem, &set, &x, i, c, deltas, &sweep_config(common, solver, *n_noise))?;
            out.write_json("box_sweep.json", &Seeded { seed, body: &sweep })?;
            out.write_csv("box_sweep.csv", io::SWEEP_HEADER, &sweep.rows)?;
        }
        Command::CalibrateOptimize {
            problem,
            constraints,
            prior,
            index,
            standard_error,
            n_gamma,
            n_noise,
            solver,
            common,
        } => {
            out.claim(&["plan.json", "gamma.csv"])?;
            let problem = io::load_problem(problem)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let ansatz = io::load_prior(prior)?.mu_a;
            let i = resolve_index(&problem, index)?;
            let template = ProbabilisticConstraint::new(i, ansatz[i], *standard_error, alpha / 2.0)?;
            let search = optimize_plan(
                &problem,
                &set,
                &ansatz,
                &template,
                alpha,
                &gamma_grid(alpha, *n_gamma),
                &sweep_config(common, solver, *n_noise),
            )?;
            let level = search.plan.alphas[0];
            let plan = PlanFile {
                seed,
                plan: search.plan.clone(),
                constraints: vec![template.with_level(level)],
            };
            print_json(&plan);
            out.write_json("plan.json", &plan)?;
            out.write_csv("gamma.csv", io::GAMMA_HEADER, &search.rows)?;
        }
        Command::CalibrateRun {
            problem,
            constraints,
            plan,
            x_true,
            y,
            external,
            n_replicates,
            solver,
            common,
        } => {
            let problem = io::load_problem(problem)?;
            let set = io::load_optional_constraints(constraints.as_deref(), &problem)?;
            let plan: PlanFile = io::read_json(plan)?;
            if let Some(y) = y {
                out.claim(&["calibrated.json"])?;
                if external.len() != plan.constraints.len() {
                    return Err(Error::dim("external", plan.constraints.len(), external.len()));
                }
                let realized: Vec<_> = plan.constraints.iter().zip(external).map(|(c, &v)| c.with_center(v)).collect();
                let y = io::load_vector(y, "y")?;
                let ci = calibrated_interval(&problem, &set, &plan.plan, &realized, &y, solver.mode, solver.options())?;
                let record = CalibratedRecord {
                    interval: FrequentistRecord::new(&ci.result, plan.plan.total_alpha, solver.mode, seed),
                    boxes: ci.boxes,
                    clipped: ci.clipped,
                    internal_level: ci.internal_level,
                    final_level: ci.final_level,
                };
                print_json(&record);
                out.write_json("calibrated.json", &record)?;
            } else {
                out.claim(&["coverage.json", "coverage.csv"])?;
                let x_path = x_true
                    .as_ref()
                    .ok_or_else(|| Error::invalid("x_true", "calibrate-run needs --x-true, or --y with --external"))?;
                let x = io::load_vector(x_path, "x_true")?;
                let mut cfg = sweep_config(common, solver, *n_replicates);
                cfg.alpha = plan.plan.total_alpha;
                let row = calibration_coverage(&problem, &set, &plan.plan, &plan.constraints, &x, &cfg)?;
                out.write_json("coverage.json", &Seeded { seed, body: &row })?;
                out.write_csv("coverage.csv", io::COVERAGE_TABLE_HEADER, std::slice::from_ref(&row))?;
            }
        }
        Command::Validate {
            problem,
            constraints,
            n_instances,
            ..
        } => {
            out.claim(&["validation.json"])?;
            let constraints: Option<ConstraintFile> = constraints.as_deref().map(io::read_json).transpose()?;
            let report = match io::read_json::<ProblemFile>(problem) {
                Ok(file) => validate_files(file, constraints, seed, *n_instances),
                Err(e @ Error::Json { .. }) => uq_retrieval::validate::ValidationReport::malformed(seed, *n_instances, &e),
                Err(e) => return Err(e),
            };
            for c in &report.checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            out.write_json("validation.json", &report)?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}

#[derive(Serialize)]
struct Rows<'a, T> {
    rows: &'a [T],
}

#[derive(Serialize)]
struct CalibratedRecord {
    interval: FrequentistRecord,
    boxes: Vec<(f64, f64)>,
    clipped: Vec<bool>,
    internal_level: f64,
    final_level: f64,
}

fn run(cmd: Command) -> Result<bool> {
    let start = Instant::now();
    let common = cmd.common().clone();
    let mut manifest = Manifest::new(cmd.name(), common.seed, std::env::args().collect(), &cmd.inputs())?;
    let mut out = OutputDir::create(&common.out, common.force)?;
    out.claim(&["manifest.json"])?;
    let passed = with_workers(common.workers, || execute(&cmd, &mut out))??;
    manifest.outputs = out.written().to_vec();
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    out.write_json("manifest.json", &manifest)?;
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! File formats and output emission.
//!
//! Outputs are byte-stable: JSON is pretty-printed from ordered structs and
//! CSV columns come from fixed headers, so identical reports give identical
//! files. The run manifest is the one exception, since it records wall time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{BayesResult, PriorFile, PriorModel};
use crate::calibration::{CalibrationPlan, ProbabilisticConstraint};
use crate::constraints::{ConstraintFile, ConstraintSet};
use crate::error::{Error, Result};
use crate::interval::{DualCertificate, IntervalResult, RadiusMode};
use crate::model::{LinearProblem, ProblemFile};
use crate::simulation::{GenerativeFile, GenerativeModel, SpatialModel};

pub const PER_X_HEADER: &[&str] = &[
    "x_id",
    "method",
    "bias",
    "analytic_coverage",
    "empirical_coverage",
    "mean_length",
    "length_sd",
    "n_noise_draws",
    "failures",
];
pub const PER_LOCATION_HEADER: &[&str] = &["location_id", "x_km", "y_km", "bias", "analytic_coverage", "delta_from_nominal"];
pub const HISTOGRAM_HEADER: &[&str] = &["lower", "upper", "bayes", "frequentist"];
pub const FAILURE_HEADER: &[&str] = &["x_id", "draw", "code", "message"];
pub const IMPORTANCE_HEADER: &[&str] = &["index", "label", "mean_length", "length_se", "n_noise_draws", "failures"];
pub const SWEEP_HEADER: &[&str] = &["delta", "mean_length", "length_se", "n_noise_draws", "failures"];
pub const GAMMA_HEADER: &[&str] = &["gamma", "internal_level", "constraint_level", "mean_length", "length_se", "failures"];
pub const COVERAGE_TABLE_HEADER: &[&str] = &[
    "standard_error",
    "internal_level",
    "constraint_level",
    "empirical_coverage",
    "mean_length",
    "length_se",
    "baseline_mean_length",
    "n_replicates",
    "failures",
    "clipped_fraction",
];

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path_str(path),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path_str(path),
        source,
    })
}

pub fn load_problem(path: &Path) -> Result<LinearProblem> {
    read_json::<ProblemFile>(path)?.into_problem()
}

pub fn load_constraints(path: &Path, problem: &LinearProblem) -> Result<ConstraintSet> {
    read_json::<ConstraintFile>(path)?.into_set(problem)
}

/// Missing path means no constraints.
pub fn load_optional_constraints(path: Option<&Path>, problem: &LinearProblem) -> Result<ConstraintSet> {
    match path {
        Some(p) => load_constraints(p, problem),
        None => Ok(ConstraintSet::empty(problem.p())),
    }
}

pub fn load_prior(path: &Path) -> Result<PriorModel> {
    read_json::<PriorFile>(path)?.into_prior()
}

pub fn load_generative(path: &Path) -> Result<(GenerativeModel, Option<SpatialModel>)> {
    read_json::<GenerativeFile>(path)?.into_models()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VectorFile {
    Plain(Vec<f64>),
    Keyed(BTreeMap<String, Vec<f64>>),
}

/// A vector stored either as a bare JSON array or as `{"<key>": [...]}`.
pub fn load_vector(path: &Path, key: &str) -> Result<DVector<f64>> {
    let values = match read_json::<VectorFile>(path)? {
        VectorFile::Plain(v) => v,
        VectorFile::Keyed(mut m) => m
            .remove(key)
            .ok_or_else(|| Error::invalid(key, format!("{} has no `{key}` array", path_str(path))))?,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(key, "contains non-finite values"));
    }
    Ok(DVector::from_vec(values))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory that refuses to replace existing files unless forced.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    force: bool,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(OutputDir {
            root,
            force,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Names written so far, in order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Fails before anything is written if any of `names` already exists.
    pub fn claim(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match names.iter().map(|n| self.root.join(n)).find(|p| p.exists()) {
            Some(p) => Err(Error::WouldOverwrite(path_str(&p))),
            None => Ok(()),
        }
    }

    fn target(&mut self, name: &str) -> Result<PathBuf> {
        self.claim(&[name])?;
        self.written.push(name.to_string());
        Ok(self.root.join(name))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.target(name)?;
        fs::write(&path, to_json(value)).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<PathBuf> {
        let path = self.target(name)?;
        fs::write(&path, to_csv(header, rows).map_err(|source| Error::Csv {
            path: path_str(&path),
            source,
        })?)
        .map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

/// CSV text with the given header, written even when `rows` is empty.
/// `None` fields become empty cells.
pub fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// One state element per CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct LabelledValue {
    pub label: String,
    pub value: f64,
}

pub fn labelled(problem: &LinearProblem, values: &DVector<f64>) -> Vec<LabelledValue> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| LabelledValue {
            label: problem.label(i),
            value,
        })
        .collect()
}

/// Provenance written next to every set of outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub args: Vec<String>,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, args: Vec<String>, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((path_str(p), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            args,
            inputs,
            outputs: Vec::new(),
            wall_time_s: 0.0,
        })
    }
}

/// Scalars of a Bayesian retrieval, as printed by `retrieve-bayes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesRecord {
    pub seed: u64,
    pub alpha: f64,
    pub theta_hat: f64,
    pub posterior_sd: f64,
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BayesRecord {
    pub fn new(result: &BayesResult, alpha: f64, seed: u64) -> Self {
        BayesRecord {
            seed,
            alpha,
            theta_hat: result.theta_hat,
            posterior_sd: result.posterior_sd,
            standard_error: result.standard_error,
            lower: result.credible_interval.0,
            upper: result.credible_interval.1,
        }
    }
}

/// Summary of a frequentist interval, as printed by `retrieve-freq`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequentistRecord {
    pub seed: u64,
    pub alpha: f64,
    pub mode: RadiusMode,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
    pub slack_sq: f64,
    pub radius_sq: f64,
    pub relative_gap: f64,
    pub certified: bool,
    pub slack_iterations: usize,
    pub lower_iterations: usize,
    pub upper_iterations: usize,
    pub closed_form: bool,
    pub reduced: bool,
    pub numeric_rank: usize,
    pub dual_lower: DualCertificate,
    pub dual_upper: DualCertificate,
}

impl FrequentistRecord {
    pub fn new(result: &IntervalResult, alpha: f64, mode: RadiusMode, seed: u64) -> Self {
        let st = &result.solver_stats;
        FrequentistRecord {
            seed,
            alpha,
            mode,
            lower: result.lower,
            upper: result.upper,
            length: result.length(),
            slack_sq: result.slack_sq,
            radius_sq: result.radius_sq,
            relative_gap: st.relative_gap,
            certified: result.certified,
            slack_iterations: st.slack_iterations,
            lower_iterations: st.lower_iterations,
            upper_iterations: st.upper_iterations,
            closed_form: st.closed_form,
            reduced: st.reduced,
            numeric_rank: st.numeric_rank,
            dual_lower: result.dual_lower.clone(),
            dual_upper: result.dual_upper.clone(),
        }
    }
}

/// Output of `calibrate-optimize`, input of `calibrate-run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub seed: u64,
    pub plan: CalibrationPlan,
    /// One external constraint per entry of `plan.alphas`; centres are the
    /// ansatz values used during the search.
    pub constraints: Vec<ProbabilisticConstraint>,
}

/// JSON wrapper that records the seed next to a result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seeded<T> {
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::{Method, PerXRow};

    #[test]
    fn empty_report_gives_header_only() {
        let rows: Vec<PerXRow> = Vec::new();
        let out = String::from_utf8(to_csv(PER_X_HEADER, &rows).unwrap()).unwrap();
        assert_eq!(out, format!("{}\n", PER_X_HEADER.join(",")));
    }

    #[test]
    fn optional_fields_are_blank() {
        let row = PerXRow {
            x_id: 3,
            method: Method::Frequentist,
            bias: None,
            analytic_coverage: None,
            empirical_coverage: 0.95,
            mean_length: 2.5,
            length_sd: 0.125,
            n_noise_draws: 1000,
            failures: 0,
        };
        let out = String::from_utf8(to_csv(PER_X_HEADER, &[row]).unwrap()).unwrap();
        assert_eq!(out.lines().nth(1), Some("3,frequentist,,,0.95,2.5,0.125,1000,0"));
    }

    #[test]
    fn refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), false).unwrap();
        out.write_json("a.json", &[1, 2]).unwrap();
        assert!(matches!(out.write_json("a.json", &[3]), Err(Error::WouldOverwrite(_))));
        let mut forced = OutputDir::create(dir.path(), true).unwrap();
        forced.write_json("a.json", &[3]).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.json")).unwrap(), "[\n  3\n]\n");
    }

    #[test]
    fn vector_forms() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        fs::write(&a, "[1, 2.5]").unwrap();
        fs::write(&b, r#"{"y": [3]}"#).unwrap();
        assert_eq!(load_vector(&a, "y").unwrap().as_slice(), &[1.0, 2.5]);
        assert_eq!(load_vector(&b, "y").unwrap().as_slice(), &[3.0]);
        assert!(load_vector(&b, "x_true").is_err());
        let err = load_vector(&dir.path().join("missing.json"), "y").unwrap_err();
        assert!(err.to_string().contains("missing.json"));
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_uq-retrieval");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic problem written by `gen-problem`.
fn generate(dir: &Path, seed: &str) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"n": 60}"#).unwrap();
    let out = dir.join(format!("gen{seed}"));
    let res = run(&["gen-problem", "--spec", s(&spec), "--seed", seed, "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generated_files_and_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(tmp.path(), "17");
    let b = tmp.path().join("again");
    let spec = tmp.path().join("spec.json");
    assert_eq!(code(&run(&["gen-problem", "--spec", s(&spec), "--seed", "17", "--out", s(&b)])), 0);
    let fa = files_except_manifest(&a);
    assert_eq!(fa, files_except_manifest(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["constraints.json", "generative.json", "prior.json", "problem.json", "spec.json", "x_true.json", "y.json"]
    );
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 17);
    assert_eq!(manifest["command"], "gen-problem");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn retrievals_print_records_and_refuse_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let g = generate(tmp.path(), "3");
    let out = tmp.path().join("freq");
    let (problem, constraints, y) = (g.join("problem.json"), g.join("constraints.json"), g.join("y.json"));
    let args = [
        "retrieve-freq",
        "--problem",
        s(&problem),
        "--constraints",
        s(&constraints),
        "--y",
        s(&y),
        "--certify",
        "--out",
        s(&out),
    ];
    let first = run(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let rec: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert!(rec["lower"].as_f64().unwrap() < rec["upper"].as_f64().unwrap());
    assert_eq!(rec["certified"], true);
    assert!(rec["radius_sq"].as_f64().unwrap() > rec["slack_sq"].as_f64().unwrap());

    let again = run(&args);
    assert_eq!(code(&again), 3);
    assert!(String::from_utf8_lossy(&again.stderr).contains("would_overwrite"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&run(&forced)), 0);

    let bayes_out = tmp.path().join("bayes");
    let res = run(&[
        "retrieve-bayes",
        "--problem",
        s(&g.join("problem.json")),
        "--prior",
        s(&g.join("prior.json")),
        "--y",
        s(&g.join("y.json")),
        "--out",
        s(&bayes_out),
    ]);
    assert_eq!(code(&res), 0);
    let m = fs::read_to_string(bayes_out.join("multipliers.csv")).unwrap();
    assert!(m.starts_with("label,value\nco2_1,"));
    assert_eq!(m.lines().count(), 40);
}

#[test]
fn coverage_study_emits_golden_header() {
    let tmp = tempfile::tempdir().unwrap();
    let g = generate(tmp.path(), "5");
    let out = tmp.path().join("study");
    let res = run(&[
        "coverage-study",
        "--problem",
        s(&g.join("problem.json")),
        "--prior",
        s(&g.join("prior.json")),
        "--generative",
        s(&g.join("generative.json")),
        "--constraints",
        s(&g.join("constraints.json")),
        "--n-states",
        "2",
        "--n-noise-bayes",
        "200",
        "--n-noise-freq",
        "20",
        "--seed",
        "9",
        "--workers",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/per_x_header.csv")).unwrap();
    let per_x = fs::read_to_string(out.join("per_x.csv")).unwrap();
    assert_eq!(per_x.lines().next(), golden.lines().next());
    assert_eq!(per_x.lines().count(), 1 + 4);
    assert_eq!(fs::read_to_string(out.join("failures.csv")).unwrap(), "x_id,draw,code,message\n");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 9);
}

#[test]
fn validate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let g = generate(tmp.path(), "8");
    let good = tmp.path().join("v1");
    let res = run(&[
        "validate",
        "--problem",
        s(&g.join("problem.json")),
        "--constraints",
        s(&g.join("constraints.json")),
        "--n-instances",
        "3",
        "--out",
        s(&good),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let text = fs::read_to_string(g.join("problem.json")).unwrap();
    let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
    file["K"][0][0] = serde_json::Value::String("NaN".into());
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&file).unwrap()).unwrap();
    let res = run(&["validate", "--problem", s(&bad), "--out", s(&tmp.path().join("v2"))]);
    assert_eq!(code(&res), 2);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("v2/validation.json")).unwrap()).unwrap();
    assert_eq!(report["first_failure"], "problem_well_formed");
}

#[test]
fn input_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let res = run(&["retrieve-freq", "--problem", s(&missing), "--y", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.json"));
    assert_eq!(code(&run(&["retrieve-freq", "--no-such-flag"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);

    let g = generate(tmp.path(), "2");
    let res = run(&[
        "retrieve-freq",
        "--problem",
        s(&g.join("problem.json")),
        "--y",
        s(&g.join("x_true.json")),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("dimension_mismatch"));
}

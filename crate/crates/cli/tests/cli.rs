//! End-to-end checks of the command-line surface: exit codes, file
//! round-trips, and byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models_dir().join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridsens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_reports_model_shape() {
    let out = run(&["validate", "--model", &model("gene_full.json")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("6 reactions, 3 species"), "{}", stdout(&out));
}

#[test]
fn validate_rejects_unknown_species_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{
          "species": [{"name": "a", "initial": 0}],
          "reactions": [{"name": "r", "reactants": {"ghost": 1}, "products": {"a": 1},
                         "rate": {"type": "mass_action", "kappa": "1"}}],
          "parameters": {}
        }"#,
    )
    .unwrap();
    let out = run(&["validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ghost"), "{}", stderr(&out));
}

#[test]
fn validate_rejects_incomplete_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("scaling.json");
    std::fs::write(
        &bad,
        r#"{"alpha": {"s": "0"}, "beta": {"birth": "0"}, "N0": 1000.0, "gamma": "auto"}"#,
    )
    .unwrap();
    let out = run(&[
        "validate",
        "--model",
        &model("birth_death.json"),
        "--scaling",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("death"), "{}", stderr(&out));
}

#[test]
fn reduce_roundtrips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("gene_pdmp.json");
    let out = run(&[
        "reduce",
        "--model",
        &model("gene_qsa.json"),
        "--scaling",
        &model("gene_qsa.scaling.json"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("discrete: {transcribe, mdeg}"), "{text}");
    assert!(text.contains("continuous: {translate, pdeg}"), "{text}");
    assert!(out_path.with_extension("report.json").exists());

    let check = run(&["validate", "--model", out_path.to_str().unwrap()]);
    assert_eq!(code(&check), 0, "{}", stderr(&check));
    assert!(stdout(&check).contains("reduced model"));
}

#[test]
fn reduce_demands_qsa_on_fast_discrete_reactions() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("nope.json");
    let out = run(&[
        "reduce",
        "--model",
        &model("mm_full.json"),
        "--scaling",
        &model("mm_full.scaling.json"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("bind") && err.contains("unbind"), "{err}");
    assert!(!out_path.exists());
}

#[test]
fn simulate_single_path_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let out_path = dir.path().join(format!("sim_{tag}.csv"));
        let raw_path = dir.path().join(format!("raw_{tag}.csv"));
        let out = run(&[
            "simulate",
            "--model",
            &model("exp_decay.pdmp.json"),
            "--T",
            "5",
            "--dt",
            "1e-3",
            "--paths",
            "1",
            "--grid",
            "10",
            "--seed",
            "42",
            "--out",
            out_path.to_str().unwrap(),
            "--raw",
            raw_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (
            std::fs::read(&out_path).unwrap(),
            std::fs::read(&raw_path).unwrap(),
        )
    };
    let (sum1, raw1) = run_once("a");
    let (sum2, raw2) = run_once("b");
    assert_eq!(sum1, sum2);
    assert_eq!(raw1, raw2);
}

#[test]
fn raw_blocks_format_has_one_block_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sum.csv");
    let raw_path = dir.path().join("raw.csv");
    let out = run(&[
        "simulate",
        "--model",
        &model("birth_death.json"),
        "--method",
        "ssa",
        "--T",
        "1",
        "--paths",
        "3",
        "--grid",
        "4",
        "--seed",
        "5",
        "--out",
        out_path.to_str().unwrap(),
        "--raw",
        raw_path.to_str().unwrap(),
        "--raw-format",
        "blocks",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&raw_path).unwrap();
    assert!(text.contains("t,s\n"), "{text}");
    assert!(!text.contains("path_id"));
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 3, "{text}");
    // each block has one row per grid point
    assert_eq!(blocks[1].trim_end().lines().count(), 5);
}

#[test]
fn simulate_ssa_writes_summary_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bd.csv");
    let out = run(&[
        "simulate",
        "--model",
        &model("birth_death.json"),
        "--method",
        "ssa",
        "--T",
        "1",
        "--paths",
        "200",
        "--grid",
        "4",
        "--out",
        out_path.to_str().unwrap(),
        "--histogram",
        "s",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("# hybridsens"));
    assert!(text.contains("t,s_mean,s_var,s_stderr"));
    assert_eq!(text.lines().count(), 2 + 5, "header comment + header + 5 grid rows");
    assert!(dir.path().join("bd.hist.csv").exists());
    assert!(Path::new(&format!("{}.manifest.json", out_path.display())).exists());
}

fn strip_wall_time(text: &str) -> String {
    // wall_time_s is the last column of the sens CSV and the one field a
    // repeated run may legitimately change
    text.lines()
        .map(|line| {
            if line.starts_with('#') || line.starts_with("parameter") {
                line.to_owned()
            } else {
                match line.rfind(',') {
                    Some(pos) => line[..pos].to_owned(),
                    None => line.to_owned(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sens_rows_are_deterministic_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |tag: &str| -> String {
        let out_path = dir.path().join(format!("sens_{tag}.csv"));
        let out = run(&[
            "sens",
            "--model",
            &model("pure_birth.pdmp.json"),
            "--method",
            "pdmp-decomposition",
            "--observable",
            "count",
            "--theta",
            "theta",
            "--T",
            "2",
            "--dt",
            "1e-3",
            "--paths",
            "50",
            "--seed",
            "9",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read_to_string(&out_path).unwrap()
    };
    let a = run_once("a");
    let b = run_once("b");
    assert_eq!(strip_wall_time(&a), strip_wall_time(&b));
    assert!(a.contains("theta,pdmp-decomposition,"));
}

#[test]
fn sens_rejects_unknown_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sens.csv");
    let out = run(&[
        "sens",
        "--model",
        &model("pure_birth.pdmp.json"),
        "--method",
        "pdmp-decomposition",
        "--observable",
        "count",
        "--theta",
        "missing",
        "--T",
        "1",
        "--paths",
        "4",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing"));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["sens", "--model", "x.json"]);
    assert_eq!(code(&out), 1);
    let out = run(&["no-such-command"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_accepts_self_and_rejects_perturbed_copy() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    std::fs::write(
        &a,
        "# hybridsens test\nparameter,method,estimate,stderr,n,part_continuous,part_continuous_stderr,part_discrete,part_discrete_stderr,wall_time_s\ntheta1,cfd-pdmp,1.5,0.1,100,,,,,0.5\ntheta2,cfd-pdmp,-2,0.2,100,,,,,0.5\n",
    )
    .unwrap();
    let out = run(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("theta1,1.5,1.5,0"));

    let b = dir.path().join("b.csv");
    std::fs::write(
        &b,
        "parameter,method,estimate,stderr,n,part_continuous,part_continuous_stderr,part_discrete,part_discrete_stderr,wall_time_s\ntheta1,cfd-pdmp,1.5,0.1,100,,,,,0.5\ntheta2,cfd-pdmp,-4,0.2,100,,,,,0.5\n",
    )
    .unwrap();
    let out = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), 4);

    let c = dir.path().join("c.csv");
    std::fs::write(
        &c,
        "parameter,method,estimate,stderr,n,part_continuous,part_continuous_stderr,part_discrete,part_discrete_stderr,wall_time_s\ntheta9,cfd-pdmp,1.5,0.1,100,,,,,0.5\n",
    )
    .unwrap();
    let out = run(&["compare", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "key mismatch is a validation failure");
}

#[test]
fn oracle_cme_reports_mean_and_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("dist.csv");
    let out = run(&[
        "oracle-cme",
        "--model",
        &model("birth_death.json"),
        "--bound",
        "s=120",
        "--T",
        "1",
        "--observable",
        "count",
        "--theta",
        "theta",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mean: f64 = text
        .lines()
        .find(|l| l.starts_with("mean[count]"))
        .and_then(|l| l.split('=').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((mean - 6.321_205_588_285_577).abs() < 1e-6, "{mean}");
    let dist = std::fs::read_to_string(&out_path).unwrap();
    assert!(dist.contains("s,probability"));
    assert_eq!(dist.lines().count(), 2 + 121);
}

#[test]
fn oracle_cme_requires_bounds_for_every_species() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("dist.csv");
    let out = run(&[
        "oracle-cme",
        "--model",
        &model("mm_full.json"),
        "--bound",
        "x1=10",
        "--T",
        "1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing --bound"));
}

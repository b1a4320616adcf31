use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use condbench::harness::{load, read_trials_csv, Format};

fn condbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condbench"))
        .args(args)
        .env_remove("CONDBENCH_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cases: [(&[&str], &str); 5] = [
        (&["--help"], "help.txt"),
        (&["run", "--help"], "run.txt"),
        (&["sweep", "--help"], "sweep.txt"),
        (&["invariance", "--help"], "invariance.txt"),
        (&["list", "--help"], "list.txt"),
    ];
    for (args, file) in cases {
        let out = condbench(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        let want = fs::read_to_string(golden.join(file)).unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), want, "{file}");
    }
}

#[test]
fn alpha_out_of_range_is_a_usage_error() {
    let out = condbench(&[
        "run",
        "--function",
        "elli",
        "--alpha",
        "1e12",
        "--trials",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--alpha"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());

    let out = condbench(&[
        "run",
        "--function",
        "rosen",
        "--alpha",
        "1e9",
        "--trials",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_names_list_the_valid_set() {
    let out = condbench(&["run", "--optimizer", "nelder-mead", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(
        msg.contains("--optimizer") && msg.contains("cmaes, de, pso, bfgs, trustregion"),
        "{msg}"
    );

    let out = condbench(&["run", "--function", "sphere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("elli, elli-quarter, rosen"));

    let out = condbench(&["sweep", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn monotone_invariance_reports_zero() {
    let out = condbench(&[
        "invariance",
        "--optimizer",
        "cmaes",
        "--mode",
        "monotone",
        "--dim",
        "10",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(
        line.contains("max_divergence=0 ") && line.contains("pass=true"),
        "{line}"
    );
}

#[test]
fn unsupported_invariance_mode_is_a_usage_error() {
    let out = condbench(&[
        "invariance",
        "--optimizer",
        "pso",
        "--mode",
        "rotation",
        "--dim",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--mode"));
}

#[test]
fn run_prints_trial_table_and_banner() {
    let out = condbench(&[
        "run",
        "--dim",
        "4",
        "--alpha",
        "100",
        "--optimizer",
        "de",
        "--trials",
        "2",
        "--budget",
        "5e4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_trials_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r.optimizer == "de" && r.evals <= 50_000));
    // Derived population size is echoed.
    assert!(stderr(&out).contains("NP=40"), "{}", stderr(&out));
}

#[test]
fn paper_profile_needs_confirmation() {
    let out = condbench(&["sweep", "--profile", "paper"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("cost:") && msg.contains("--yes"), "{msg}");
}

#[test]
fn sweep_writes_tables_and_plots_under_env_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_condbench"))
        .args([
            "sweep",
            "--function",
            "elli",
            "--dim",
            "3",
            "--alpha",
            "1,100",
            "--optimizer",
            "cmaes,de",
            "--trials",
            "2",
            "--budget",
            "2e4",
            "--format",
            "json",
        ])
        .env("CONDBENCH_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = load(&tmp.path().join("trials.json"), Format::Json).unwrap();
    assert_eq!(table.cells.len(), 8);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9);
    assert!(tmp.path().join("plots/elliN3.tsv").exists());
    assert!(tmp.path().join("plots/ellirotN3.tsv").exists());
}

#[test]
fn sweep_reads_toml_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.toml");
    fs::write(
        &cfg,
        "functions = [\"rosen\"]\ndims = [3]\nalphas = [1.0]\nrotations = [false]\n\
         optimizers = [\"bfgs\"]\ntrials = 2\nbudget = 20000\nseed = 5\n",
    )
    .unwrap();
    let dir = tmp.path().join("out");
    let out = condbench(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = load(&dir.join("trials.csv"), Format::Csv).unwrap();
    assert_eq!(table.cells.len(), 1);
    assert_eq!(table.cells[0].optimizer, "bfgs");

    fs::write(&cfg, "functions = [\"rosen\"]\nunknown = 1\n").unwrap();
    let out = condbench(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = condbench(&[
        "run",
        "--dim",
        "3",
        "--alpha",
        "1",
        "--trials",
        "1",
        "--budget",
        "1000",
        "--out",
        blocker.join("t.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("t.csv"));
}

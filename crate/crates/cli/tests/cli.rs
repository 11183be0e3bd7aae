//! End-to-end checks of the command-line surface: exit codes, artifact
//! determinism, and the JSON/CSV formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use balance_forge::balance::l1_balance;
use balance_forge::{load_covariates, standardize, DesignResult64};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_balance-forge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_normal_csv(path: &Path, n: usize, seed: u64) {
    use balance_forge::simharness::{generate_covariates, CovariateDist};
    let x = generate_covariates::<f64>(CovariateDist::Normal, n, 1, seed).unwrap();
    let mut text = String::from("x1\n");
    for i in 0..2 * n {
        text.push_str(&format!("{}\n", x.get(i, 0)));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn design_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_normal_csv(&cov, 20, 5);
    let out1 = dir.path().join("d1.json");
    let out2 = dir.path().join("d2.json");
    for out in [&out1, &out2] {
        let o = run(&[
            "design",
            "--covariates",
            cov.to_str().unwrap(),
            "--method",
            "greedy",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn design_json_round_trips_to_the_same_balance() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_normal_csv(&cov, 25, 11);
    let out = dir.path().join("design.json");
    let o = run(&[
        "design",
        "--covariates",
        cov.to_str().unwrap(),
        "--method",
        "greedy",
        "--seed",
        "99",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let design: DesignResult64 =
        serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let x = load_covariates::<f64, _>(fs::File::open(&cov).unwrap()).unwrap();
    let z = standardize(&x).unwrap();
    let recomputed = l1_balance(&z, &design.allocation).unwrap();
    assert!(
        (recomputed - design.final_balance).abs() < 1e-12,
        "{recomputed} vs {}",
        design.final_balance
    );
}

#[test]
fn missing_required_flag_exits_one_and_names_the_flag() {
    let o = run(&["design", "--method", "greedy"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--covariates"), "{err}");
}

#[test]
fn unknown_subcommand_exits_one() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn odd_row_covariates_exit_two_with_shape_message() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("odd.csv");
    fs::write(&cov, "x1\n1\n2\n3\n").unwrap();
    let o = run(&[
        "design",
        "--covariates",
        cov.to_str().unwrap(),
        "--method",
        "greedy",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("shape"), "{err}");
}

#[test]
fn unattainable_threshold_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_normal_csv(&cov, 10, 3);
    let o = run(&[
        "design",
        "--covariates",
        cov.to_str().unwrap(),
        "--method",
        "rerand-threshold",
        "--threshold",
        "1e-300",
        "--max-attempts",
        "25",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn every_subcommand_has_help_listing_its_flags() {
    let expected: &[(&str, &[&str])] = &[
        ("design", &["--covariates", "--method", "--objective", "--seed", "--out"]),
        (
            "metrics",
            &["--method", "--n", "--p", "--dist", "--replicates", "--mode", "--seed", "--bias-correct"],
        ),
        (
            "simulate",
            &["--n-grid", "--p-grid", "--dist", "--replicates", "--method", "--seed", "--out"],
        ),
        ("rates", &["--in", "--out"]),
        (
            "infer",
            &["--covariates", "--responses", "--design", "--R", "--alpha", "--seed", "--method"],
        ),
        ("optimal", &["--covariates", "--objective", "--workers", "--no-symmetry", "--force"]),
        ("theory", &["--dist", "--c-grid"]),
        ("reproduce", &["--target", "--scale", "--seed", "--out-dir"]),
    ];
    for (sub, flags) in expected {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help missing {flag}");
        }
    }
}

#[test]
fn simulate_then_rates_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    let o = run(&[
        "simulate",
        "--n-grid",
        "10,18,32",
        "--p-grid",
        "1,2",
        "--dist",
        "normal",
        "--replicates",
        "5",
        "--method",
        "greedy",
        "--seed",
        "12",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["rates", "--in", records.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(fit["log_n"]["estimate"].as_f64().unwrap() < 0.0);
    assert_eq!(fit["observations"].as_u64().unwrap(), 30);
}

#[test]
fn infer_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_normal_csv(&cov, 15, 21);
    let design = dir.path().join("design.json");
    let o = run(&[
        "design",
        "--covariates",
        cov.to_str().unwrap(),
        "--method",
        "greedy",
        "--seed",
        "5",
        "--out",
        design.to_str().unwrap(),
    ]);
    assert!(o.status.success());

    // Responses with a real treatment effect of 2.
    let parsed: DesignResult64 =
        serde_json::from_str(&fs::read_to_string(&design).unwrap()).unwrap();
    let mut resp = String::from("y\n");
    for i in 0..30 {
        let effect = if parsed.allocation.is_treated(i) { 2.0 } else { 0.0 };
        resp.push_str(&format!("{}\n", effect + (i as f64 * 0.37).sin() * 0.1));
    }
    let responses = dir.path().join("y.csv");
    fs::write(&responses, resp).unwrap();

    let o = run(&[
        "infer",
        "--covariates",
        cov.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--R",
        "199",
        "--alpha",
        "0.05",
        "--method",
        "greedy",
        "--seed",
        "31",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = result["p_value"].as_f64().unwrap();
    assert!(p < 0.05, "expected a clear effect, p = {p}");
    let ci = result["ci"].as_array().unwrap();
    let (lo, hi) = (ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap());
    assert!(lo <= 2.0 && 2.0 <= hi, "interval ({lo}, {hi}) misses 2");
}

#[test]
fn theory_emits_the_full_grid() {
    let o = run(&["theory", "--dist", "normal", "--c-grid", "0:0.5:2"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 6); // header + 5 grid points
    assert!(text.starts_with("c,p_quad,p_analytic"));
}

#[test]
fn reproduce_table1_writes_the_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "reproduce",
        "--target",
        "table1",
        "--scale",
        "desk",
        "--seed",
        "8",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = dir.path().join("table1.csv");
    assert!(table.exists());
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 21); // header + 20 runs
    assert!(dir.path().join("table1_manifest.json").exists());
    // Final balances are sorted ascending.
    let finals: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    for w in finals.windows(2) {
        assert!(w[0] <= w[1]);
    }
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_normal_csv(&cov, 16, 9);
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let o = run(&[
            "design",
            "--covariates",
            cov.to_str().unwrap(),
            "--method",
            "greedy-restarts",
            "--restarts",
            "8",
            "--seed",
            "44",
            "--threads",
            threads,
        ]);
        assert!(o.status.success());
        outputs.push(o.stdout);
    }
    assert_eq!(outputs[0], outputs[1]);
}

use std::path::Path;
use std::process::{Command, Output};

fn pbcontrol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbcontrol"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Rows of a CSV written by the tool, header included, metadata skipped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn field(table: &[Vec<String>], row: usize, name: &str) -> f64 {
    let idx = table[0].iter().position(|h| h == name).unwrap();
    table[row][idx].parse().unwrap()
}

const SMALL: &str = "n_values = [5, 10]\nhorizon = 5\n[evaluation]\ntest_trajectories = 10\n";

#[test]
fn reproduce_is_deterministic_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = pbcontrol(&[
            "reproduce-example",
            "1",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(std::fs::read(out_dir.join("example1.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("# version="));
    assert!(text.contains("seed=7"));
}

#[test]
fn point_mass_on_a_single_controller_pays_only_the_confidence_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "one.toml",
        "n = 8\nhorizon = 5\n[controller_space]\naxes = [{ lower = 0.1, upper = 0.1, count = 1 }, \
         { lower = -0.4, upper = -0.4, count = 1 }]\n",
    );
    let post = write(dir.path(), "post.toml", "kind = \"pmf\"\nprobs = [1.0]\n");
    let out_dir = dir.path().join("out");
    let out = pbcontrol(&[
        "bound",
        "--preset",
        "example1",
        "--config",
        &cfg,
        "--posterior",
        &post,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let per_lambda = rows(&out_dir.join("bound_per_lambda.csv"));
    let card = (per_lambda.len() - 1) as f64;
    for r in 1..per_lambda.len() {
        let lambda = field(&per_lambda, r, "lambda_star");
        let want = (card / 0.05).ln() / lambda;
        assert!((field(&per_lambda, r, "kl_term") - want).abs() < 1e-9 * want);
    }
    let best = rows(&out_dir.join("bound.csv"));
    let min = (1..per_lambda.len()).map(|r| field(&per_lambda, r, "total")).fold(f64::INFINITY, f64::min);
    assert_eq!(field(&best, 1, "total"), min);
}

#[test]
fn coverage_reports_a_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cov.toml",
        "n = 10\nhorizon = 5\n[coverage]\noracle_draws = 200\n",
    );
    let out_dir = dir.path().join("out");
    let out = pbcontrol(&[
        "coverage",
        "--preset",
        "example1",
        "--config",
        &cfg,
        "--reps",
        "6",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().find(|l| l.starts_with("coverage=")).unwrap();
    assert!(line.ends_with("repetitions=6"), "{line}");
    assert_eq!(rows(&out_dir.join("coverage.csv")).len(), 7);
}

#[test]
fn lqg_baseline_writes_gains() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = pbcontrol(&["lqg-baseline", "--preset", "example2", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("lqg_gains.csv").exists());
    assert!(out_dir.join("lqg_cost.csv").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = pbcontrol(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "horizon = [[[\n");
    let out = pbcontrol(&["learn-finite", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error[config]:"));

    let cfg = write(dir.path(), "typo.toml", "horizn = 5\n");
    let out = pbcontrol(&["learn-finite", "--preset", "example1", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn empty_gamma_has_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "big.toml", "horizon = 5\n[bound]\nomega = [1e9]\n");
    let out = pbcontrol(&[
        "learn-finite",
        "--preset",
        "example1",
        "--config",
        &cfg,
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = stderr(&out);
    assert!(err.starts_with("error[empty-gamma]:"), "{err}");
}

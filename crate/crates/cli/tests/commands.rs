use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn sensq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensq"))
        .args(args)
        .env_remove("SENSQ_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Matched pairs with a positive shift on the treated unit.
fn write_pairs(dir: &Path, n_pairs: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = String::from("set_id,treated,outcome\n");
    for i in 0..n_pairs {
        let t = rng.random_range(0..2);
        for j in 0..2 {
            let y: f64 = rng.random_range(-1.0..1.0) + if j == t { 0.8 } else { 0.0 };
            body.push_str(&format!("s{i},{},{y:.3}\n", u8::from(j == t)));
        }
    }
    let path = dir.join("pairs.csv");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn analyze_writes_one_row_per_set() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 30, 1);
    let out = dir.path().join("out");
    let o = sensq(&["analyze", "--input", &input, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&out.join("curve.csv"));
    assert_eq!(rows[0], "k,quantile_fraction,lower_limit,achieved_p,status");
    assert_eq!(rows.len(), 31);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_sets"], 30);
    assert!(summary["average_bias"]["identity"].as_f64().unwrap() >= 1.0);
}

#[test]
fn two_treated_units_name_the_set() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "set_id,treated,outcome\na,1,0.5\na,0,0.1\nq7,1,1.0\nq7,1,2.0\n").unwrap();
    let o = sensq(&["analyze", "--input", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("q7"), "{}", stderr(&o));
}

#[test]
fn bad_values_report_the_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "set_id,treated,outcome\na,1,0.5\na,0,oops\n").unwrap();
    let o = sensq(&["analyze", "--input", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn twenty_quantile_grid() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 40, 2);
    let out = dir.path().join("out");
    let o = sensq(&[
        "analyze",
        "--input",
        &input,
        "--quantiles",
        "0.05:1.0:0.05",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&out.join("curve.csv"));
    assert_eq!(rows.len(), 21);
    assert!(rows[1].starts_with("2,0.05,"));
    assert!(rows[20].starts_with("40,1,"));
}

#[test]
fn configuration_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 5, 3);
    let d = dir.path().to_str().unwrap();
    assert_eq!(sensq(&["analyze", "--input", &input, "--alpha", "1.5", "--out-dir", d]).status.code(), Some(3));
    assert_eq!(sensq(&["analyze", "--input", &input, "--quantiles", "0:1", "--out-dir", d]).status.code(), Some(3));
    assert_eq!(sensq(&["analyze", "--input", &input, "--bogus"]).status.code(), Some(3));

    let triples = dir.path().join("triples.csv");
    fs::write(&triples, "set_id,treated,outcome\na,1,1\na,0,0\na,0,0.5\nb,0,1\nb,1,2\nb,0,0\n").unwrap();
    let o = sensq(&["analyze", "--input", triples.to_str().unwrap(), "--engine", "pair-exact", "--out-dir", d]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unknown_preset_exits_3() {
    let dir = TempDir::new().unwrap();
    let o = sensq(&["simulate", "--preset", "figZ9", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("figZ9"));
}

#[test]
fn trimming_preset_has_six_iota_columns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = sensq(&["simulate", "--preset", "tabA2", "--reps", "2", "--n-sets", "60", "--out-dir", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&dir.path().join("tabA2_average_bias.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].split(',').count(), 7);
    assert!(rows[1].starts_with("identity,"));
    let curve = lines(&dir.path().join("tabA2_mean_curve.csv"));
    assert_eq!(curve.len(), 61);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["design"]["reps"], 2);
}

#[test]
fn type_one_preset_writes_ecdf_rows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = sensq(&["simulate", "--preset", "figA1a", "--reps", "25", "--n-sets", "40", "--out-dir", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&dir.path().join("figA1a_ecdf.csv"));
    assert_eq!(rows.len(), 26);
    assert_eq!(rows[0], "rank,ecdf,p_k40,p_k38,p_k36");
    assert!(rows[25].starts_with("25,1,"));
}

#[test]
fn curve_json_round_trips_the_summary() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 25, 4);
    let out = dir.path().join("out");
    let o = sensq(&[
        "analyze",
        "--input",
        &input,
        "--format",
        "json",
        "--gamma-grid",
        "1,1.2,2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = out.join("curve.json");
    let o = sensq(&["summarize", "--curve", curve.to_str().unwrap(), "--gamma-grid", "1,1.2,2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(again, saved);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 12, 5);
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = sensq(&[
            "--threads",
            threads,
            "analyze",
            "--input",
            &input,
            "--exact",
            "--draws",
            "5000",
            "--seed",
            "42",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(out.join("curve.csv")).unwrap(), fs::read(out.join("summary.json")).unwrap())
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("3", "c");
    assert_eq!(a, b);
    assert_eq!(a, c);

    let sim = |name: &str| {
        let out = dir.path().join(name);
        let o = sensq(&["simulate", "--preset", "figA6", "--reps", "2", "--n-sets", "40", "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            fs::read(out.join("figA6_mean_curve.csv")).unwrap(),
            fs::read(out.join("manifest.json")).unwrap(),
        )
    };
    assert_eq!(sim("s1"), sim("s2"));
}

#[test]
fn seed_changes_monte_carlo_output() {
    let dir = TempDir::new().unwrap();
    let input = write_pairs(dir.path(), 10, 6);
    let run = |seed: &str| {
        let out = dir.path().join(seed);
        let o = sensq(&[
            "analyze", "--input", &input, "--exact", "--draws", "2000", "--seed", seed, "--quantiles", "1",
            "--out-dir", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out.join("curve.csv")).unwrap()
    };
    assert_ne!(run("1"), run("2"));
}

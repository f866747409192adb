//! End-to-end checks driving the compiled binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecmig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Unique scratch path per test so parallel tests never collide.
fn scratch(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("mecmig-cli-{}-{name}", std::process::id()));
    p
}

fn write_file(name: &str, body: &str) -> PathBuf {
    let p = scratch(name);
    std::fs::write(&p, body).expect("scratch file");
    p
}

const SMALL: &str = "[scenario]\nn_users = 5\nn_sites = 3\nvm_cap = 5\n";

#[test]
fn same_seed_and_config_give_byte_identical_csv() {
    let config = write_file("det.toml", SMALL);
    let (a, b) = (scratch("det-a.csv"), scratch("det-b.csv"));
    for out in [&a, &b] {
        let run = run(&[
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--axis",
            "users",
            "--values",
            "4,5",
            "--trials",
            "3",
            "--seed",
            "9",
            "--allow-nonconverged",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "{}", stderr_of(&run));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let config = write_file("bad.toml", "[scenario]\nnn_users = 4\n");
    let out = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nn_users"));
}

#[test]
fn fractional_user_count_on_the_axis_is_a_usage_error() {
    let config = write_file("axis.toml", SMALL);
    let out = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "users",
        "--values",
        "4.5",
        "--trials",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("whole"));
}

#[test]
fn unknown_axis_is_rejected_by_the_parser() {
    let out = run(&["sweep", "--axis", "banana", "--values", "4", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonconvergence_exits_one_unless_allowed() {
    let config = write_file("nc.toml", "[scenario]\nn_users = 6\nn_sites = 3\nvm_cap = 6\n");
    let strict = run(&["solve", "--config", config.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stderr_of(&strict).contains("--allow-nonconverged"));

    let relaxed = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--allow-nonconverged",
    ]);
    assert!(relaxed.status.success(), "{}", stderr_of(&relaxed));
}

fn csv_rows(path: &PathBuf) -> Vec<Vec<String>> {
    let body = std::fs::read_to_string(path).expect("csv exists");
    body.lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn zero_cost_weight_makes_utility_equal_the_sum_rate() {
    let config = write_file("freecost.toml", SMALL);
    let out_path = scratch("freecost.csv");
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "2",
        "--lambda",
        "0",
        "--allow-nonconverged",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = csv_rows(&out_path);
    assert_eq!(
        rows[0],
        vec![
            "axis_value",
            "scheme",
            "mean_utility",
            "stderr",
            "mean_sum_rate",
            "mean_cost",
            "mean_migrated_pct",
            "mean_gap_to_ub"
        ]
    );
    let schemes: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(schemes, vec!["no_migration", "proposed", "radio_oriented", "upper_bound"]);
    for row in &rows[1..] {
        // With a zero weight, migrations are free: utility is the sum rate.
        assert_eq!(row[2], row[4], "{} utility vs sum rate", row[1]);
    }
}

#[test]
fn oracle_subcommand_reports_exact_recoveries() {
    let config = write_file("oracle.toml", "[scenario]\nn_users = 4\nn_sites = 2\nvm_cap = 4\n");
    let out = run(&[
        "oracle",
        "--config",
        config.to_str().unwrap(),
        "--trials",
        "3",
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("3 trials"), "{text}");
    assert!(text.contains("bound held: true"), "{text}");
}

#[test]
fn solve_prints_the_enumerated_optimum_on_request() {
    let config = write_file("solveoracle.toml", SMALL);
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "4",
        "--oracle",
        "--allow-nonconverged",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("exhaustive:"));
}

#[test]
fn hotspot_loads_sum_to_the_served_user_count() {
    let out_path = scratch("hotspot.csv");
    let out = run(&[
        "hotspot",
        "--k-min",
        "3",
        "--k-max",
        "8",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = csv_rows(&out_path);
    assert_eq!(rows[0][0], "k");
    assert_eq!(rows.len(), 1 + 6);
    for row in &rows[1..] {
        let k: f64 = row[0].parse().unwrap();
        let total: f64 = row[4].split('|').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - k).abs() < 1e-9, "loads {} sum {total} for k {k}", row[4]);
    }
}

#[test]
fn block_split_axis_produces_the_full_scheme_set() {
    let config = write_file("rb.toml", "[scenario]\nn_sites = 2\nvm_cap = 6\n");
    let out_path = scratch("rb.csv");
    let out = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "users_rb",
        "--values",
        "4",
        "--trials",
        "2",
        "--seed",
        "1",
        "--allow-nonconverged",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let rows = csv_rows(&out_path);
    assert_eq!(rows.len(), 1 + 4);
    for row in &rows[1..] {
        let utility: f64 = row[2].parse().unwrap();
        let gap: f64 = row[7].parse().unwrap();
        assert!(utility.is_finite());
        assert!(gap >= 0.0, "{} gap {gap}", row[1]);
    }
}

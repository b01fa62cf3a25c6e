//! Drives the compiled binary end to end: exit codes, artifact layout,
//! determinism of the CSV output, and the oracle's disagreement path.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refract"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small grid and loose tolerance so every invocation stays quick.
const QUICK: &str = "\
[market]
alpha = 0.05
sigma = 0.2
r = 0.1

[project]
invest_cost = 1.0
op_cost = 0.1
lifetime = 5.0
lead_time = 1.0
flexible = true

[solver]
grid_count = 200
eps_target = 0.01
k_max = 12
";

fn write_quick_config(dir: &Path) -> String {
    let path = dir.join("scenario.cfg");
    fs::write(&path, QUICK).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let help = run(&["--help"], tmp.path());
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("solve"));

    let unknown = run(&["frobnicate"], tmp.path());
    assert_eq!(unknown.status.code(), Some(1));

    let bad_axis = run(
        &["sweep", "--axis", "rho", "--values", "0.1,0.2"],
        tmp.path(),
    );
    assert_eq!(bad_axis.status.code(), Some(1));
    assert!(stderr(&bad_axis).contains("rho"));

    let bad_eps = run(&["solve", "--eps=-1"], tmp.path());
    assert_eq!(bad_eps.status.code(), Some(1));
    assert!(stderr(&bad_eps).contains("--eps"));
}

#[test]
fn config_mistakes_name_the_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("scenario.cfg");
    fs::write(&path, "[market]\nalpha = 0.05\nsigma = -1\n").unwrap();
    let out = run(
        &["solve", "--config", path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("scenario.cfg:3"), "{err}");
    assert!(err.contains("sigma"), "{err}");

    let missing = run(
        &["solve", "--config", "no-such-file.cfg"],
        tmp.path(),
    );
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn solve_writes_identical_artifacts_on_repeat_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(tmp.path());
    let mut csvs: Vec<(String, String)> = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = tmp.path().join(sub);
        let out = run(
            &["solve", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(stdout(&out).contains("x1_star"));
        csvs.push((
            fs::read_to_string(out_dir.join("boundaries.csv")).unwrap(),
            fs::read_to_string(out_dir.join("value.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1], "artifacts differ between runs");

    let boundaries = &csvs[0].0;
    let mut lines = boundaries.lines();
    assert_eq!(lines.next(), Some("k,x_star,epsilon"));
    let first = lines.next().unwrap();
    let x1: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((x1 - 0.85).abs() < 0.01, "first boundary {x1}");

    // one row per grid node plus the header
    assert_eq!(csvs[0].1.lines().count(), 201);
}

#[test]
fn sweep_keeps_going_past_a_bad_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(tmp.path());
    let out = run(
        &[
            "sweep",
            "--config",
            &cfg,
            "--axis",
            "alpha",
            "--values",
            "0.04,0.5,0.06",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].ends_with(','), "good row carries no error: {}", rows[1]);
    assert!(!rows[2].ends_with(','), "bad row explains itself: {}", rows[2]);
    let last_axis: f64 = rows[3].split(',').next().unwrap().parse().unwrap();
    assert!((last_axis - 0.06).abs() < 1e-15, "rows out of order: {}", rows[3]);
}

#[test]
fn contour_prices_a_quick_challenger() {
    let tmp = tempfile::tempdir().unwrap();
    // the challenger's value iteration contracts by only e^{-r T_small}
    // per pass, so parity needs a deeper iteration budget than the other
    // quick runs; a starved budget understates the challenger and the
    // cell reports "dominance fails at every feasible cost" instead
    let path = tmp.path().join("scenario.cfg");
    fs::write(
        &path,
        "[solver]\ngrid_count = 150\neps_target = 0.01\nk_max = 60\n",
    )
    .unwrap();
    let cfg = path.to_str().unwrap().to_owned();
    let out = run(
        &[
            "contour",
            "--config",
            &cfg,
            "--lifetimes",
            "2.5",
            "--lead-times",
            "0.25",
            "--tol",
            "0.1",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("contour.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "t_small,nu_small,i_crit,error");
    assert_eq!(rows.len(), 2);
    let cells: Vec<&str> = rows[1].split(',').collect();
    let i_crit: f64 = cells[2].parse().unwrap_or_else(|_| {
        panic!("cell failed instead of pricing: {}", rows[1]);
    });
    assert!(i_crit > 0.0 && i_crit < 2.0, "critical cost {i_crit}");
}

#[test]
fn oracle_agreement_and_disagreement_use_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(tmp.path());

    // starting on the stopping side makes both sides exercise immediately
    let ok = run(
        &[
            "oracle", "--config", &cfg, "--rights", "1", "--start", "2.0",
            "--paths", "2000", "--seed", "7",
        ],
        tmp.path(),
    );
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains('z'));

    // a horizon far too short truncates almost every path below the
    // boundary, so the estimate collapses and the z test must fire
    let short = run(
        &[
            "oracle", "--config", &cfg, "--rights", "1", "--start", "0.5",
            "--paths", "20000", "--seed", "7", "--time-step", "0.1",
            "--horizon", "5",
        ],
        tmp.path(),
    );
    assert_eq!(short.status.code(), Some(3), "{}", stderr(&short));
    assert!(stderr(&short).contains("disagrees"));
}

#[test]
fn an_unpriceable_scenario_exits_with_the_solver_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("scenario.cfg");
    // break-even below the convexity threshold: no valid boundary
    fs::write(
        &path,
        "[project]\ninvest_cost = 0.01\nlifetime = 2.5\nlead_time = 0.3\n",
    )
    .unwrap();
    let out = run(
        &["solve", "--config", path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("solve failed"), "{}", stderr(&out));
}

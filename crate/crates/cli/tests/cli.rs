use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tadlora(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tadlora"))
        .args(args)
        .current_dir(dir)
        .env_remove("TADLORA_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const GRID: &str = r#"{"m": 6, "R": 30, "p_list": [0.5, 0.1], "T_list": [1, 5],
    "method_list": ["tad_lora", "rolora_dfl"], "seeds": [0, 1]}"#;

#[test]
fn run_prints_one_result_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"m": 6, "R": 20, "T": 5}"#).unwrap();
    let o = tadlora(&["run", "--config", "c.json", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("method,p,T,seed,"));
    assert!(lines[1].starts_with("tad_lora,"));
    let traj = fs::read_dir(dir.path().join("out/trajectories")).unwrap().count();
    assert_eq!(traj, 1);
}

#[test]
fn sweep_writes_outputs_and_best_t_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.json"), GRID).unwrap();
    let o = tadlora(
        &["sweep", "--config", "g.json", "--out", "out", "--jobs", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 16);
    assert!(out.join("summary.csv").exists());
    assert!(out.join("resolved_config.json").exists());
    assert_eq!(fs::read_dir(out.join("trajectories")).unwrap().count(), 16);

    let o = tadlora(
        &["best-t", "--results", "out/results.csv", "out/results.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 4);
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2], cols[3], "identical tasks give median = mean: {line}");
        assert_eq!(cols[4], "2");
    }
}

#[test]
fn sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.json"), GRID).unwrap();
    for (out, jobs) in [("a", "1"), ("b", "3")] {
        let o = tadlora(
            &["sweep", "--config", "g.json", "--out", out, "--jobs", jobs],
            dir.path(),
        );
        assert!(o.status.success());
    }
    let a = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"R": 30, "T_list": [7]}"#).unwrap();
    fs::write(dir.path().join("unknown.json"), r#"{"rounds": 30}"#).unwrap();
    for args in [
        &["run", "--config", "bad.json"][..],
        &["run", "--config", "unknown.json"],
        &["run", "--config", "missing.json"],
        &["sweep", "--config", "bad.json", "--out", "o"],
        &["run"],
    ] {
        let o = tadlora(args, dir.path());
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = tadlora(&["sweep", "--config", "bad.json", "--out", "o"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("T=7 does not divide R=30"));
}

#[test]
fn seed_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"m": 6, "R": 10}"#).unwrap();
    fs::write(dir.path().join("seeded.json"), r#"{"m": 6, "R": 10, "root_seed": 1}"#).unwrap();
    let run = |file: &str, seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_tadlora"))
            .args(["run", "--config", file])
            .current_dir(dir.path())
            .env("TADLORA_SEED", seed)
            .output()
            .unwrap()
    };
    let o = run("c.json", "7");
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().contains(",7,"));
    assert_eq!(run("seeded.json", "7").status.code(), Some(2));
    assert_eq!(run("c.json", "seven").status.code(), Some(2));
}

#[test]
fn rho_report_and_phi() {
    let dir = tempfile::tempdir().unwrap();
    let o = tadlora(
        &["rho-report", "--m", "6", "--p", "0.1,0.5", "--samples", "200"],
        dir.path(),
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "p,lambda2,rho_sq_hat,stderr,one_minus_rho"
    );
    assert_eq!(text.lines().count(), 3);

    fs::write(
        dir.path().join("c.json"),
        r#"{"m": 4, "R": 30, "dims": {"d_out": 4, "d_in": 3, "r": 2}}"#,
    )
    .unwrap();
    let o = tadlora(
        &[
            "phi",
            "--config",
            "c.json",
            "--t-list",
            "1,3",
            "--tol",
            "1e-6",
            "--max-rounds",
            "50000",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn best_t_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("r.csv"), "wrong,header\n").unwrap();
    let o = tadlora(&["best-t", "--results", "r.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = tadlora(&["best-t", "--results", "r.csv", "--metric", "accuracy"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

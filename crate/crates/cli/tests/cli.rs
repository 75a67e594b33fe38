use std::path::Path;
use std::process::{Command, Output};

fn sdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdc")).args(args).output().expect("sdc runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_steps_summary_and_state() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = sdc(&[
        "run",
        "--preset",
        "dahlquist",
        "--strategy",
        "dt-adaptive",
        "--k-max",
        "5",
        "--eps-tol",
        "1e-8",
        "--snapshot",
        "both",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step_index,t,dt,k,eps,residual,accepted,restart_reason,newton_iters"
    );
    let mut reader = csv::Reader::from_path(out_dir.join("steps.csv")).unwrap();
    let mut t_sum = 0.0;
    for row in reader.records() {
        let row = row.unwrap();
        assert_eq!(&row[3], "5");
        if &row[6] == "true" {
            t_sum += row[2].parse::<f64>().unwrap();
            assert!(row[4].parse::<f64>().unwrap() <= 1e-8);
        }
    }
    assert!((t_sum - 1.0).abs() < 1e-12);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "completed");
    assert_eq!(summary["strategy"], "dt-adaptive");
    assert!(summary["final_error"].as_f64().unwrap() < 1e-6);
    for key in ["total_steps", "restarts", "sweeps", "newton_iters", "wall_seconds"] {
        assert!(summary.get(key).is_some(), "{key}");
    }

    let state = std::fs::read_to_string(out_dir.join("state.csv")).unwrap();
    let value: f64 = state.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let bin = std::fs::read(out_dir.join("state.bin")).unwrap();
    assert_eq!(bin.len(), 8);
    assert_eq!(f64::from_le_bytes(bin.try_into().unwrap()), value);
    assert!((value - (-1.0f64).exp()).abs() < 1e-6);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "preset = \"vdp\"\nt_end = 1.0\n[problem]\nmu = 2.0\n[controller]\nstrategy = \"fixed\"\nk_max = 3\ndt_init = 0.1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("vdp");
    let out = sdc(&["run", "-c", path(&cfg), "--set", "controller.k_max=4", "--no-error", "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_steps"], 10);
    assert_eq!(summary["sweeps"], 40);
    assert!(summary["final_error"].is_null());
    assert_eq!(summary["config"]["problem"]["mu"], 2.0);
}

#[test]
fn configuration_errors_exit_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let missing = dir.path().join("missing.toml");
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--config", path(&missing)],
        vec!["run", "--preset", "lorenz"],
        vec!["run"],
        vec!["run", "--preset", "vdp", "--set", "problem.mu=\"fast\""],
        vec!["run", "--preset", "vdp", "--set", "controller.no_such_key=1"],
        vec!["run", "--preset", "dahlquist", "--eps-tol=-1"],
        vec!["run", "--preset", "dahlquist", "--strategy", "sometimes"],
    ];
    for mut args in cases {
        args.extend(["--out", path(&out_dir)]);
        let out = sdc(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out_dir.exists(), "{args:?}");
    }
}

#[test]
fn aborted_run_exits_2_and_keeps_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("abort");
    let out = sdc(&[
        "run",
        "--preset",
        "dahlquist",
        "--set",
        "problem.lambda=-1e6",
        "--precond",
        "explicit-euler",
        "--set",
        "controller.restart_budget=3",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "aborted");
    assert!(out_dir.join("steps.csv").exists());
    assert!(!out_dir.join("state.csv").exists());
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let out = sdc(&["run", "--preset", "dahlquist", "--out", path(&file)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn work_precision_and_convergence_tables() {
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("wp.csv");
    let out = sdc(&[
        "work-precision",
        "--preset",
        "dahlquist",
        "--strategies",
        "fixed,dt-adaptive",
        "--tols",
        "1e-6,1e-8",
        "--dts",
        "0.1,0.05",
        "--out",
        path(&wp),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&wp).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,control,global_error,wall_seconds,sweeps,newton_iters,restarts");
    assert_eq!(lines.count(), 4);

    let conv = dir.path().join("conv.csv");
    let out = sdc(&["convergence", "--preset", "dahlquist", "--sweeps", "2,3", "--out", path(&conv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("k   order"));
    let text = std::fs::read_to_string(&conv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,dt,global_error,observed_order");
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn block_and_worker_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("pint");
    let out = sdc(&[
        "run",
        "--preset",
        "dahlquist",
        "--strategy",
        "dt-adaptive",
        "--k-max",
        "5",
        "--block-steps",
        "4",
        "--pipelined",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = sdc(&[
        "run",
        "--preset",
        "dahlquist",
        "--precond",
        "min-sr-s",
        "--workers",
        "2",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["workers"], 2);
    assert_eq!(summary["solves_per_worker"].as_array().unwrap().len(), 2);
}

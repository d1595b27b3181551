//! End-to-end matrix for the command-line driver: exit codes, file shapes,
//! solve/verify round trips, byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsde-fpi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_env(dir: &Path, args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsde-fpi"))
        .current_dir(dir)
        .env(key, value)
        .args(args)
        .output()
        .expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_cfg(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const LINEAR_CFG: &str = r#"{
  "problem": {
    "t_end": 0.01,
    "steps": 6,
    "driver": { "f0": { "kind": "linear_y", "a": 0.7 } },
    "terminal": [ { "kind": "square" } ],
    "functional": { "kind": "density" }
  },
  "solver": { "oracle_check": true }
}"#;

const ZERO_CFG: &str = r#"{
  "problem": {
    "t_end": 0.5,
    "steps": 6,
    "driver": { "f0": { "kind": "zero" } },
    "terminal": [ { "kind": "clipped_call", "strike": 0.1, "cap": 2.0 } ],
    "functional": { "kind": "density" }
  }
}"#;

#[test]
fn missing_config_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "bad.json", &LINEAR_CFG.replace("\"t_end\"", "\"t_endz\""));
    let out = run(dir.path(), &["solve", "--config", "bad.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown field"), "stderr: {}", stderr(&out));
}

#[test]
fn missing_pde_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "cfg.json", LINEAR_CFG);
    let out = run(dir.path(), &["pde-check", "--config", "cfg.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pde"));
}

fn printed_bound(text: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with("conservative step bound:"))
        .expect("bound line present");
    line.rsplit(' ').next().unwrap().parse().expect("parseable bound")
}

#[test]
fn bound_matches_the_library_and_the_pinned_values() {
    let dir = tempfile::tempdir().unwrap();

    // C1 = 1 (density), C2 = 1.
    write_cfg(dir.path(), "one.json", &LINEAR_CFG.replace("\"a\": 0.7", "\"a\": 1.0"));
    let out = run(dir.path(), &["bound", "--config", "one.json"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let b = printed_bound(&stdout(&out));
    let expect = bsde_fpi::conservative_step_bound(1.0, 1.0, 1, 1, 1).unwrap();
    assert!((b - expect).abs() <= 1e-4 * expect);
    assert!((b - 1.4521e-3).abs() <= 1e-4 * 1.4521e-3);

    // C2 = 2 doubles the Lipschitz rate: bound shrinks to ~2.690e-4.
    write_cfg(dir.path(), "two.json", &LINEAR_CFG.replace("\"a\": 0.7", "\"a\": 2.0"));
    let out = run(dir.path(), &["bound", "--config", "two.json"]);
    assert_eq!(code(&out), 0);
    let b = printed_bound(&stdout(&out));
    assert!((b - 2.690e-4).abs() <= 1e-4 * 2.690e-4);

    // C2 = 0: no driver feedback, the bound clamps at 1.
    write_cfg(dir.path(), "zero.json", ZERO_CFG);
    let out = run(dir.path(), &["bound", "--config", "zero.json"]);
    assert_eq!(code(&out), 0);
    assert_eq!(printed_bound(&stdout(&out)), 1.0);
}

#[test]
fn zero_driver_solve_converges_in_one_iteration_per_window() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "cfg.json", ZERO_CFG);
    let out = run(dir.path(), &["solve", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for name in ["solution.csv", "convergence.csv", "report.txt"] {
        assert!(dir.path().join("run").join(name).exists(), "{name} missing");
    }
    let conv = std::fs::read_to_string(dir.path().join("run/convergence.csv")).unwrap();
    let rows: Vec<&str> = conv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "1", "extra iteration in {row:?}");
        assert_eq!(fields[2], "0.0", "nonzero increment in {row:?}");
    }
}

#[test]
fn oracle_check_is_reported_in_the_report_file() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "cfg.json", LINEAR_CFG);
    let out = run(dir.path(), &["solve", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("run/report.txt")).unwrap();
    assert!(report.contains("oracle deviation"), "report: {report}");
    assert!(report.contains("PASS"), "report: {report}");
}

#[test]
fn unsliceable_functional_beyond_the_bound_is_a_guard_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(
        dir.path(),
        "cfg.json",
        r#"{
  "problem": {
    "t_end": 0.25,
    "steps": 10,
    "driver": { "f0": { "kind": "linear_z", "b": 0.2 } },
    "terminal": [ { "kind": "clipped_square", "cap": 4.0 } ],
    "functional": { "kind": "quadratic", "c1": 3.2 }
  }
}"#,
    );
    let out = run(dir.path(), &["solve", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("single-window"), "stderr: {msg}");
    assert!(msg.contains("step bound"), "stderr: {msg}");
    // The horizon override turns the same run into a success.
    let out = run(dir.path(), &["solve", "--config", "cfg.json", "--out", "run", "--override-horizon"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn verify_round_trip_detects_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path(), "cfg.json", LINEAR_CFG);
    let out = run(dir.path(), &["solve", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0);
    let out = run(dir.path(), &["verify", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("verification: PASS"));

    // Bump one interior martingale value by 1e-3: the defect check must trip.
    let sol_path = dir.path().join("run/solution.csv");
    let text = std::fs::read_to_string(&sol_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let target = 8; // header + levels 0..2 occupy 1 + 7 lines; this is level 3, node 0
    let mut fields: Vec<String> = lines[target].split(',').map(str::to_string).collect();
    assert_eq!(fields[0], "3");
    let m: f64 = fields[3].parse().unwrap();
    fields[3] = format!("{:?}", m + 1e-3);
    lines[target] = fields.join(",");
    std::fs::write(&sol_path, lines.join("\n") + "\n").unwrap();
    let out = run(dir.path(), &["verify", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("verification: FAIL"));

    // Structurally broken file: missing rows exit 2 before any verdict.
    let truncated: Vec<&str> = text.lines().take(6).collect();
    std::fs::write(&sol_path, truncated.join("\n") + "\n").unwrap();
    let out = run(dir.path(), &["verify", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("missing row"));
}

#[test]
fn identical_configs_produce_byte_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(
        dir.path(),
        "cfg.json",
        r#"{
  "problem": {
    "t_end": 0.002,
    "steps": 8,
    "driver": {
      "f0": { "kind": "linear_yz", "a": 0.3, "b": 0.4 },
      "fi": [ { "kind": "linear_y", "a": 0.4 } ]
    },
    "terminal": [ { "kind": "clipped_call", "strike": -0.1, "cap": 1.5 } ],
    "functional": { "kind": "kernel", "c1": 1.0, "weights": { "kind": "lebesgue" } }
  }
}"#,
    );
    let args_a = ["solve", "--config", "cfg.json", "--out", "a", "--override-horizon"];
    let args_b = ["solve", "--config", "cfg.json", "--out", "b", "--override-horizon"];
    let args_c = ["solve", "--config", "cfg.json", "--out", "c", "--override-horizon"];
    assert_eq!(code(&run(dir.path(), &args_a)), 0);
    assert_eq!(code(&run(dir.path(), &args_b)), 0);
    // A single worker thread must not change a single byte either.
    assert_eq!(code(&run_env(dir.path(), &args_c, "BSDE_FPI_THREADS", "1")), 0);
    for name in ["solution.csv", "convergence.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        let c = std::fs::read(dir.path().join("c").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
        assert_eq!(a, c, "{name} differs under BSDE_FPI_THREADS=1");
    }
}

#[test]
fn pde_check_writes_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(
        dir.path(),
        "cfg.json",
        r#"{
  "problem": {
    "t_end": 0.05,
    "steps": 8,
    "driver": { "f0": { "kind": "linear_z", "b": -0.2 } },
    "terminal": [ { "kind": "clipped_square", "cap": 4.0 } ],
    "functional": { "kind": "quadratic", "c1": 3.2 }
  },
  "solver": { "override_horizon": true },
  "pde": {
    "x0": [0.0, 0.5],
    "x_half": 1.5,
    "dx": 0.05,
    "levels": [0],
    "central_bins": 1,
    "threshold": 0.05
  }
}"#,
    );
    let out = run(dir.path(), &["pde-check", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("run/pde_check.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("t,x,u_pde,y_lattice,abs_err"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "one probe row per anchor: {table}");
    for row in rows {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        let (u, err) = (fields[2], fields[4]);
        assert!(err <= 0.05 * u.abs().max(1e-8), "row out of tolerance: {row}");
    }

    // Tightening the threshold below the measured discrepancy flips to exit 1.
    write_cfg(
        dir.path(),
        "tight.json",
        &std::fs::read_to_string(dir.path().join("cfg.json"))
            .unwrap()
            .replace("\"threshold\": 0.05", "\"threshold\": 1e-6"),
    );
    let out = run(dir.path(), &["pde-check", "--config", "tight.json", "--out", "run2"]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("threshold"));
}

#[test]
fn study_error_column_tracks_the_exponential_reference() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(
        dir.path(),
        "cfg.json",
        r#"{
  "problem": {
    "t_end": 0.01,
    "steps": 4,
    "driver": { "f0": { "kind": "linear_y", "a": 0.5 } },
    "terminal": [ { "kind": "square" } ],
    "functional": { "kind": "density" }
  },
  "study": { "k_values": [4, 8, 16], "reference": { "kind": "exponential" } }
}"#,
    );
    let out = run(dir.path(), &["study", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("run/study.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("K,dt,y0,error,runtime_ms,method"));
    let errors: Vec<f64> = lines
        .map(|row| row.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 3);
    // First-order convergence: doubling K roughly halves the error.
    assert!(errors[2] < 0.3 * errors[0], "errors not shrinking: {errors:?}");

    // A zero driver hits the reference exactly at every resolution.
    write_cfg(
        dir.path(),
        "zero.json",
        &std::fs::read_to_string(dir.path().join("cfg.json"))
            .unwrap()
            .replace(r#"{ "kind": "linear_y", "a": 0.5 }"#, r#"{ "kind": "zero" }"#),
    );
    let out = run(dir.path(), &["study", "--config", "zero.json", "--out", "run0"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("run0/study.csv")).unwrap();
    for row in table.lines().skip(1) {
        assert_eq!(row.split(',').nth(3), Some("0.0"), "inexact zero-driver row: {row}");
    }
}

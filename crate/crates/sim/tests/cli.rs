use std::path::PathBuf;
use std::process::{Command, Output};

fn cond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cond")).args(args).env_remove("COND_THREADS").output().unwrap()
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "scenarios", name].iter().collect();
    p.to_str().unwrap().to_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = cond(&["run", "--scenario", &fixture("resting_particle.json"), "--steps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,dyn_ms,solve_ms,iters,residual,max_pen_m,contacts,ke_J"));
    assert_eq!(lines.count(), 10);
    let rows = cond_sim::report::parse_csv(&text).unwrap();
    assert!(rows.iter().all(|r| r.contacts == 1));
}

#[test]
fn zero_timings_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("{k}.csv"));
        let o = cond(&[
            "run",
            "--scenario",
            &fixture("box_on_mat.json"),
            "--steps",
            "15",
            "--zero-timings",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let text = String::from_utf8(bytes.pop().unwrap()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0.0000000000000000e0")));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("{threads}.csv"));
        let o = Command::new(env!("CARGO_BIN_EXE_cond"))
            .args(["run", "--scenario", &fixture("lattice_drag.json"), "--steps", "5", "--zero-timings", "--out"])
            .arg(&out)
            .env("COND_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn solver_flags_are_accepted() {
    let stack = fixture("particle_stack.json");
    for args in [
        &["--solver", "pgs", "--operator", "proximal"][..],
        &["--solver", "apgd"],
        &["--step-matrix", "bb-alt", "--chebyshev", "on", "--residual-tol", "1e-5", "--max-iter", "3000"],
        &["--operator", "anisotropic", "--kv", "1e6", "--seed", "7"],
    ] {
        let mut full = vec!["run", "--scenario", &stack, "--steps", "3"];
        full.extend_from_slice(args);
        let o = cond(&full);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"duration": 1.0, "bodies": []}"#).unwrap();
    let o = cond(&["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_size"));

    std::fs::write(&bad, r#"{"step_size": 0.01, "duration": 1.0, "colour": 3}"#).unwrap();
    assert_eq!(code(&cond(&["run", "--scenario", bad.to_str().unwrap()])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_cond"))
        .args(["run", "--scenario", &fixture("free_fall.json"), "--steps", "1"])
        .env("COND_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn io_errors_exit_four() {
    let o = cond(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(code(&o), 4);
    let o = cond(&["run", "--scenario", &fixture("free_fall.json"), "--steps", "1", "--out", "/nonexistent/dir/m.csv"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("div.json");
    std::fs::write(
        &p,
        r#"{"step_size": 0.01, "duration": 0.05, "solver": {"fixed_step": 10.0},
            "lattices": [{"name": "m", "dims": [3, 3, 2], "spacing": 0.1, "origin": [0, 0, 0], "node_mass": 0.1, "stiffness": 100.0}],
            "statics": [{"type": "plane", "point": [0, 0, 0], "normal": [0, 0, 1], "friction": 0.5}]}"#,
    )
    .unwrap();
    let o = cond(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("diverged=5"));
}

#[test]
fn bench_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let o = cond(&["bench", "--scenario", &fixture("lattice_drag.json"), "--sizes", "300,600", "--steps", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("exponent="));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("size,dof,contacts,iters,solve_ms,delassus_ms,total_ms\n"));

    let o = cond(&["bench", "--scenario", &fixture("lattice_drag.json"), "--sizes", "300", "--steps", "1"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("exponent=absent"));
    let o = cond(&["bench", "--scenario", &fixture("lattice_drag.json"), "--sizes", "600,300"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_prints_selected_checks() {
    let o = cond(&["verify", "--only", "3,7"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("PASS  3 "));
    assert!(lines[1].starts_with("PASS  7 "));
}

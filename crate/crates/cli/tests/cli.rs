//! End-to-end checks of the binary: artifact layout, reproducibility,
//! config precedence, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_aspadmm")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("aspadmm_cli_{}_{name}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn lasso_run_writes_all_artifacts_and_is_byte_reproducible() {
    let out1 = tmp("lasso1");
    let out2 = tmp("lasso2");
    for out in [&out1, &out2] {
        let o = run(
            &[
                "lasso",
                "--m",
                "20",
                "--n",
                "64",
                "--seed",
                "7",
                "--arms",
                "spadmm,aspadmm",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "config_resolved.json",
        "summary.json",
        "aspadmm_trace.csv",
        "spadmm_trace.csv",
        "aspadmm_curve.dat",
        "spadmm_curve.dat",
        "a.txt",
        "b.txt",
        "instance.json",
    ] {
        assert_eq!(
            read(&out1, name),
            read(&out2, name),
            "artifact {name} differs between identical runs"
        );
    }
    let trace = read(&out1, "aspadmm_trace.csv");
    assert!(trace.starts_with(
        "k,theta,objective,feasibility,kkt_residual,dandiao,bound_feas,bound_obj_lo,bound_obj_hi,time_ms\n"
    ));
    let curve = read(&out1, "aspadmm_curve.dat");
    assert!(curve.starts_with("iter,error\n"));
    let summary: serde_json::Value = serde_json::from_str(&read(&out1, "summary.json")).unwrap();
    assert!(summary["aspadmm"]["iterations"].is_u64());
    assert!(summary["aspadmm"]["converged"].as_bool().unwrap());
}

#[test]
fn gen_rtc_is_byte_identical_across_runs() {
    let out1 = tmp("gen1");
    let out2 = tmp("gen2");
    for out in [&out1, &out2] {
        let o = run(
            &[
                "gen", "rtc", "--dims", "8,8,3", "--sr", "0.8", "--alpha", "0.2", "--seed", "1",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["instance.json", "x_true.t3", "observed.t3", "config_resolved.json"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn verify_bounds_reports_zero_violations() {
    let out = tmp("vb");
    let o = run(
        &[
            "verify-bounds",
            "--which",
            "theorem2",
            "--iters",
            "300",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0 violations"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&read(&out, "bound_report.json")).unwrap();
    assert!(report["certified"].as_bool().unwrap());
}

#[test]
fn config_file_is_used_and_flags_override_it() {
    let out = tmp("cfg");
    std::fs::create_dir_all(&out).unwrap();
    let cfg_path = out.join("run.json");
    std::fs::write(&cfg_path, r#"{"m": 16, "n": 48, "seed": 3, "tau": 0.9}"#).unwrap();
    let o = run(
        &[
            "lasso",
            "--config",
            cfg_path.to_str().unwrap(),
            "--tau",
            "0.8",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: serde_json::Value =
        serde_json::from_str(&read(&out, "config_resolved.json")).unwrap();
    assert_eq!(resolved["m"], 16);
    assert_eq!(resolved["tau"], 0.8);
    let overrides = resolved["flag_overrides_of_file"].as_array().unwrap();
    assert!(overrides.iter().any(|v| v == "tau"));
}

#[test]
fn unknown_config_key_is_rejected_with_its_name() {
    let out = tmp("badcfg");
    std::fs::create_dir_all(&out).unwrap();
    let cfg_path = out.join("run.json");
    std::fs::write(&cfg_path, r#"{"m": 16, "bogus_key": 1}"#).unwrap();
    let o = run(
        &[
            "lasso",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus_key"), "{err}");
}

#[test]
fn malformed_number_names_the_flag() {
    let o = run(&["lasso", "--m", "not_a_number"], &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--m") || err.contains("not_a_number"), "{err}");
}

#[test]
fn env_seed_overrides_config() {
    let out1 = tmp("env1");
    let out2 = tmp("env2");
    let o = run(
        &["gen", "lasso", "--seed", "5", "--out", out1.to_str().unwrap()],
        &[("ASPADMM_SEED", "9")],
    );
    assert!(o.status.success());
    let o = run(
        &["gen", "lasso", "--seed", "9", "--out", out2.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success());
    assert_eq!(read(&out1, "a.txt"), read(&out2, "a.txt"));
    let resolved: serde_json::Value =
        serde_json::from_str(&read(&out1, "config_resolved.json")).unwrap();
    assert_eq!(resolved["seed"], 9);
}

#[test]
fn non_convergence_exits_3_but_writes_artifacts() {
    let out = tmp("noconv");
    let o = run(
        &[
            "lasso",
            "--m",
            "20",
            "--n",
            "64",
            "--max-iter",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("summary.json").exists());
    assert!(out.join("aspadmm_trace.csv").exists());
}

#[test]
fn rerunning_from_the_echo_reproduces_the_artifacts() {
    let out1 = tmp("echo1");
    let out2 = tmp("echo2");
    let o = run(
        &[
            "lasso", "--m", "20", "--n", "64", "--seed", "7", "--out",
            out1.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success());
    let echo = out1.join("config_resolved.json");
    let o = run(
        &[
            "lasso",
            "--config",
            echo.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["summary.json", "aspadmm_trace.csv", "spadmm_trace.csv", "a.txt", "b.txt"] {
        assert_eq!(read(&out1, name), read(&out2, name), "{name} differs");
    }
}

#[test]
fn sgs_check_passes_on_default_instance() {
    let out = tmp("sgscheck");
    let o = run(&["sgs-check", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&read(&out, "sgs_check.json")).unwrap();
    assert!(doc["step_condition_ok"].as_bool().unwrap());
    assert!(doc["proposition1_pass"].as_bool().unwrap());
}

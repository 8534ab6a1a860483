//! End-to-end behavior of the `dpc` binary on a tiny configuration.

mod common;

use std::path::Path;

use common::{
    dpc, dpc_raw, run_pipeline, scenarios, stderr, stdout, toy_policy, toy_ssm, two_zone_plant,
    write_config, TINY_CONFIG,
};
use dpc::harness::{load_policy, load_ssm, save_policy, save_ssm, EvalReport};

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn bits(t: &dpc::autodiff::Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn unknown_field_is_a_validation_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY_CONFIG.replacen("\"past\": 4", "\"past\": 4, \"pats\": 5", 1);
    let cfg = write_config(dir.path(), "bad.json", &text);
    let o = dpc(
        &["generate-data", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("pats"), "{}", stderr(&o));
}

#[test]
fn invalid_value_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY_CONFIG.replacen(
        "\"horizon\": 4, \"epochs\"",
        "\"horizon\": 0, \"epochs\"",
        1,
    );
    assert_ne!(text, TINY_CONFIG);
    let cfg = write_config(dir.path(), "bad.json", &text);
    let o = dpc(
        &["generate-data", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    assert_eq!(dpc_raw(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        dpc_raw(&["simulate", "--plant", "imaginary"]).status.code(),
        Some(2)
    );
    assert_eq!(dpc_raw(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_prerequisite_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let o = dpc(
        &["train-ssm", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("generate-data"), "{}", stderr(&o));
    let o = dpc(&["eval-report"], &dir.path().join("nothing"));
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&cfg, &a, None);
    run_pipeline(&cfg, &b, None);
    for f in [
        "sysid.csv",
        "ctrl.csv",
        "ssm.json",
        "ssm_history.json",
        "policy.json",
        "policy_history.json",
        "report_nominal.json",
        "report_true.json",
        "trajectory_nominal.csv",
        "trajectory_true.csv",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }

    // a different seed changes the data
    let c = dir.path().join("c");
    let o = dpc(
        &[
            "generate-data",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "4",
        ],
        &c,
    );
    assert!(o.status.success());
    assert_ne!(read(&a.join("sysid.csv")), read(&c.join("sysid.csv")));

    // manifests carry hashes of the files they describe
    let m: serde_json::Value =
        serde_json::from_slice(&read(&a.join("report_true.manifest.json"))).unwrap();
    assert_eq!(m["seed"], 3);
    assert!(m["timings_s"]["train_policy"].as_f64().unwrap() > 0.0);
    let hash = m["files"]["report_true.json"].as_str().unwrap();
    assert_eq!(hash.len(), 64);

    let r: EvalReport = serde_json::from_slice(&read(&a.join("report_true.json"))).unwrap();
    let n: EvalReport = serde_json::from_slice(&read(&a.join("report_nominal.json"))).unwrap();
    assert_eq!(r.nominal_violation_rate, n.policy.violation_rate);
    assert_eq!(
        r.mismatch_gap,
        r.policy.violation_rate - n.policy.violation_rate
    );
    assert_eq!(n.mismatch_gap, 0.0);
    assert_eq!(r.policy.actuator_violations, 0);

    // aggregation: two identical runs have zero spread
    let o = dpc(
        &["eval-report", a.to_str().unwrap(), b.to_str().unwrap()],
        &dir.path().join("agg"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 report(s)"), "{}", stdout(&o));
    let summary = std::fs::read_to_string(dir.path().join("agg/summary.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(summary.as_bytes());
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[2], "2");
        let std: f64 = rec[4].parse().unwrap();
        assert!(
            std == 0.0 || rec[3].parse::<f64>().unwrap().is_infinite(),
            "{rec:?}"
        );
        rows += 1;
    }
    assert_eq!(rows, 2 * r.columns().len());
}

#[test]
fn eval_report_averages_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let mut rates = Vec::new();
    for seed in [11u64, 12, 13] {
        let out = dir.path().join(format!("s{seed}"));
        run_pipeline(&cfg, &out, Some(seed));
        let r: EvalReport = serde_json::from_slice(&read(&out.join("report_true.json"))).unwrap();
        assert_eq!(r.seed, seed);
        rates.push(r.policy.heat_joules / 3.6e6);
    }
    let o = dpc(
        &["eval-report", dir.path().to_str().unwrap()],
        &dir.path().join("agg"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("agg/summary.csv")).unwrap();
    let row = summary
        .lines()
        .find(|l| l.starts_with("true,heat_kwh,"))
        .unwrap_or_else(|| panic!("{summary}"));
    let cols: Vec<&str> = row.split(',').collect();
    let mean = rates.iter().sum::<f64>() / 3.0;
    let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert_eq!(cols[2], "3");
    assert!((cols[3].parse::<f64>().unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    assert!((cols[4].parse::<f64>().unwrap() - std).abs() <= 1e-12 * std.max(1.0));
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let env_out = dir.path().join("from_env");
    let o = std::process::Command::new(common::bin())
        .args(["generate-data", "--config", cfg.to_str().unwrap()])
        .env(dpc::harness::cli::OUT_DIR_ENV, &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("sysid.csv").exists());
    assert!(env_out.join("data.manifest.json").exists());
}

#[test]
fn mismatched_architecture_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let other = write_config(
        dir.path(),
        "other.json",
        &TINY_CONFIG.replacen("\"past\": 4", "\"past\": 6", 1),
    );
    let out = dir.path().join("run");
    for step in ["generate-data", "train-ssm"] {
        let o = dpc(&[step, "--config", cfg.to_str().unwrap()], &out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = dpc(&["train-policy", "--config", other.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn checkpoints_reload_to_bitwise_identical_forward_passes() {
    let dir = tempfile::tempdir().unwrap();
    let plant = two_zone_plant();
    let model = toy_ssm(&plant, 4, 71);
    let batch = scenarios(&plant, 4, 5, 6, 72);
    let policy = toy_policy(&plant, &model, 5, &[7], &batch, 73);

    save_ssm(&dir.path().join("m.json"), &model, "h").unwrap();
    save_policy(&dir.path().join("p.json"), &policy, "h").unwrap();
    let (m2, hash) = load_ssm(&dir.path().join("m.json")).unwrap();
    let (p2, _) = load_policy(&dir.path().join("p.json")).unwrap();
    assert_eq!(hash, "h");

    let (_, u) = policy.control_trajectory(&batch).unwrap();
    let (_, u2) = p2.control_trajectory(&batch).unwrap();
    assert_eq!(bits(&u), bits(&u2));
    let y = model.predict(&batch.y_past, &u, &batch.d, 5).unwrap();
    let y2 = m2.predict(&batch.y_past, &u, &batch.d, 5).unwrap();
    assert_eq!(bits(&y), bits(&y2));

    // saving the reloaded model reproduces the file
    save_ssm(&dir.path().join("m2.json"), &m2, "h").unwrap();
    assert_eq!(
        read(&dir.path().join("m.json")),
        read(&dir.path().join("m2.json"))
    );
}

//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criterion 3 trains the desk configuration from
//! `configs/desk.json` through the binary, so this target takes minutes.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{closed_loop_fd_error, dpc, run_pipeline, stderr, write_config, TINY_CONFIG};
use dpc::autodiff::{grad_check, GradCheckOptions, Graph, Tensor, Var};
use dpc::blocks::{mlp_param_count, spectral_radius, StableDynamicsMap};
use dpc::harness::{build_plant, EvalReport, RunConfig};
use dpc::policy::{assemble_features, FeatureInputs, PolicyNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(
        &std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap()
}

fn report(path: &Path) -> EvalReport {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

type OpFn = fn(&mut Graph, &[Var]) -> dpc::Result<Var>;
type OpCase = (&'static str, OpFn, Vec<(usize, usize)>);

fn weighted(g: &mut Graph, v: Var) -> dpc::Result<Var> {
    let (r, c) = g.shape(v);
    let w: Vec<f64> = (0..r * c).map(|i| (0.7 * i as f64 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(r, c, w)?);
    let lin = g.hadamard(v, w)?;
    let lin = g.sum(lin)?;
    let sq = g.sum_squares(v)?;
    let sq = g.scale(sq, 0.5)?;
    g.add(lin, sq)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let ops: Vec<OpCase> = vec![
        ("matmul", |g, v| g.matmul(v[0], v[1]), vec![(3, 2), (2, 4)]),
        ("add", |g, v| g.add(v[0], v[1]), vec![(4, 3), (4, 3)]),
        (
            "add_broadcast",
            |g, v| g.add(v[0], v[1]),
            vec![(4, 3), (4, 1)],
        ),
        ("sub", |g, v| g.sub(v[0], v[1]), vec![(4, 3), (4, 1)]),
        (
            "hadamard",
            |g, v| g.hadamard(v[0], v[1]),
            vec![(4, 3), (4, 3)],
        ),
        ("affine", |g, v| g.affine(v[0], -1.3, 0.4), vec![(3, 3)]),
        ("scale", |g, v| g.scale(v[0], 2.5), vec![(3, 3)]),
        (
            "concat_rows",
            |g, v| g.concat_rows(&[v[0], v[1]]),
            vec![(2, 3), (3, 3)],
        ),
        ("slice_rows", |g, v| g.slice_rows(v[0], 1, 2), vec![(4, 3)]),
        ("relu", |g, v| g.relu(v[0]), vec![(4, 3)]),
        ("gelu", |g, v| g.gelu(v[0]), vec![(4, 3)]),
        ("sigmoid", |g, v| g.sigmoid(v[0]), vec![(4, 3)]),
        ("softplus", |g, v| g.softplus(v[0]), vec![(4, 3)]),
        ("softmax_rows", |g, v| g.softmax_rows(v[0]), vec![(4, 3)]),
        (
            "sum",
            |g, v| {
                let s = g.sum(v[0])?;
                g.sum_squares(s)
            },
            vec![(3, 2)],
        ),
        (
            "mean",
            |g, v| {
                let s = g.mean(v[0])?;
                g.sum_squares(s)
            },
            vec![(3, 2)],
        ),
        ("sum_squares", |g, v| g.sum_squares(v[0]), vec![(3, 2)]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_op = 0.0f64;
    for (name, op, shapes) in &ops {
        for _ in 0..20 {
            let params: Vec<(String, Tensor)> = shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| {
                    // keep relu inputs away from the kink
                    let data = (0..r * c)
                        .map(|_| {
                            let x: f64 = rng.random_range(0.05..2.0);
                            if rng.random_bool(0.5) {
                                -x
                            } else {
                                x
                            }
                        })
                        .collect();
                    (format!("p{i}"), Tensor::new(r, c, data).unwrap())
                })
                .collect();
            let report = grad_check(
                |g, v| {
                    let y = op(g, v)?;
                    weighted(g, y)
                },
                &params,
                &GradCheckOptions::default(),
            )
            .map_err(|e| format!("{name}: {e}"))?;
            worst_op = worst_op.max(report.max_rel_error);
            if report.max_rel_error >= 1e-5 {
                return Err(format!(
                    "{name}: relative error {:.2e} >= 1e-5",
                    report.max_rel_error
                ));
            }
        }
    }
    let closed = closed_loop_fd_error().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if closed >= 1e-4 {
        return Err(format!("closed-loop relative error {closed:.2e} >= 1e-4"));
    }
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s"));
    }
    Ok(format!(
        "{} ops worst {worst_op:.2e}, closed loop N=4 2-zone {closed:.2e}, {secs:.1} s",
        ops.len()
    ))
}

fn stability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    let mut draws = 0;
    for n in [3usize, 9, 20] {
        for _ in 0..1000 {
            let hi = rng.random_range(0.5..0.999999);
            let lo = rng.random_range(0.0..hi);
            let map = StableDynamicsMap::new(n, lo, hi, &mut rng).map_err(|e| e.to_string())?;
            let rho = spectral_radius(&map.materialize().unwrap(), 2000, 1e-14)
                .unwrap()
                .value;
            worst = worst.max(rho - hi);
            if rho > hi + 1e-10 {
                return Err(format!("n={n}: rho {rho} > lambda_max {hi}"));
            }
            draws += 1;
        }
    }
    Ok(format!("{draws} draws, max rho - lambda_max {worst:.2e}"))
}

struct DeskRun {
    out: PathBuf,
}

fn desk_pipeline() -> Result<DeskRun, String> {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_desk");
    let _ = std::fs::remove_dir_all(&out);
    let config = workspace().join("configs/desk.json");
    let cfg = config.to_str().unwrap();
    let ssm = out.join("ssm.json");
    let policy = out.join("policy.json");
    let (ssm, policy) = (ssm.to_str().unwrap(), policy.to_str().unwrap());
    for step in [
        vec!["generate-data", "--config", cfg],
        vec!["train-ssm", "--config", cfg],
        vec!["train-policy", "--config", cfg, "--ssm", ssm],
        vec![
            "simulate", "--config", cfg, "--ssm", ssm, "--policy", policy, "--plant", "nominal",
        ],
        vec![
            "simulate", "--config", cfg, "--ssm", ssm, "--policy", policy, "--plant", "true",
        ],
    ] {
        let o = dpc(&step, &out);
        if !o.status.success() {
            return Err(format!("{} failed: {}", step[0], stderr(&o)));
        }
    }
    Ok(DeskRun { out })
}

fn identification(run: &DeskRun) -> Outcome {
    let h = json(&run.out.join("ssm_history.json"));
    let nmse = h["test_nmse"]["mean"].as_f64().unwrap();
    let epochs = h["history"]["epochs"].as_array().unwrap().len();
    let secs = json(&run.out.join("ssm.manifest.json"))["timings_s"]["train_ssm"]
        .as_f64()
        .unwrap();
    let msg = format!("test nMSE {nmse:.5}, {epochs} epochs, {secs:.1} s");
    if nmse < 0.15 && epochs <= 300 && secs < 600.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn nominal_performance(run: &DeskRun) -> Outcome {
    let r = report(&run.out.join("report_nominal.json"));
    let p = &r.policy;
    let b = &r.baseline;
    let msg = format!(
        "violation rate {:.4}, mean violation {:.4} C, actuator violations {}, energy ratio {:.4}, baseline violation rate {:.4}",
        p.violation_rate, p.mean_violation, p.actuator_violations, r.energy_ratio, b.violation_rate
    );
    let ok = p.violation_rate < 0.05
        && p.mean_violation < 0.2
        && p.actuator_violations == 0
        && r.energy_ratio <= 0.7
        && b.violation_rate >= p.violation_rate;
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn training_cost(run: &DeskRun) -> Outcome {
    let m = json(&run.out.join("report_nominal.manifest.json"));
    let secs = m["timings_s"]["train_policy"]
        .as_f64()
        .ok_or("no train_policy timing in the report manifest")?;
    let h = json(&run.out.join("policy_history.json"));
    let updates = h["history"]["updates"].as_u64().unwrap() as f64;
    let params = h["param_count"].as_u64().unwrap();
    let per_1000 = secs / updates * 1000.0;
    let msg = format!(
        "{params} parameters, {updates} updates in {secs:.1} s, {per_1000:.1} s per 1000 updates"
    );
    if per_1000 < 600.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dimensioning() -> Outcome {
    let cfg =
        RunConfig::load(&workspace().join("configs/six_zone.json")).map_err(|e| e.to_string())?;
    let plant = build_plant(&cfg).map_err(|e| e.to_string())?;
    let (zones, past, n_d) = (plant.zones(), cfg.ssm.past, 1);
    let horizon = cfg.policy.horizon;
    let layout = cfg.policy.layout(zones, n_d, past);

    let mut g = Graph::new();
    let inputs = FeatureInputs {
        past_outputs: Some(g.constant(Tensor::zeros(zones * past, 2))),
        lower_bounds: Some(g.constant(Tensor::zeros(zones * horizon, 2))),
        disturbances: Some(g.constant(Tensor::zeros(n_d * horizon, 2))),
        upper_bounds: None,
    };
    let features = assemble_features(&mut g, &inputs, &layout).map_err(|e| e.to_string())?;
    let rows = g.shape(features).0;

    let chain = cfg.policy.hidden.clone();
    let policy = PolicyNet::new(
        layout,
        &chain,
        cfg.policy.activation,
        plant.actuators(),
        horizon,
        0,
    )
    .map_err(|e| e.to_string())?;
    let head = policy.net.output_dim();
    let count = mlp_param_count(&policy.net.sizes());
    let msg = format!("{rows} feature rows, {head} head rows, {count} parameters");
    if rows == 416 && head == 224 && count == 84_524 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(run: &DeskRun) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tiny = write_config(dir.path(), "tiny.json", TINY_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&tiny, &a, None);
    run_pipeline(&tiny, &b, None);
    for out in [&a, &b] {
        let o = dpc(&["eval-report", out.to_str().unwrap()], out);
        if !o.status.success() {
            return Err(stderr(&o));
        }
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".manifest.json") {
            continue;
        }
        if std::fs::read(a.join(&name)).ok() != std::fs::read(b.join(&name)).ok() {
            return Err(format!("{name} differs between identical runs"));
        }
        compared += 1;
    }

    // desk-scale data regenerated from the same config and seed
    let desk = dir.path().join("desk");
    let o = dpc(
        &[
            "generate-data",
            "--config",
            workspace().join("configs/desk.json").to_str().unwrap(),
        ],
        &desk,
    );
    if !o.status.success() {
        return Err(stderr(&o));
    }
    for name in ["sysid.csv", "ctrl.csv"] {
        if std::fs::read(run.out.join(name)).ok() != std::fs::read(desk.join(name)).ok() {
            return Err(format!("desk {name} differs between identical runs"));
        }
        compared += 1;
    }
    Ok(format!("{compared} artifacts byte-identical across reruns"))
}

fn mismatch(run: &DeskRun) -> Outcome {
    let nominal = report(&run.out.join("report_nominal.json"));
    let real = report(&run.out.join("report_true.json"));
    let msg = format!(
        "true {:.4} vs nominal {:.4}, gap {:+.4}",
        real.policy.violation_rate, nominal.policy.violation_rate, real.mismatch_gap
    );
    if real.policy.violation_rate > nominal.policy.violation_rate && real.mismatch_gap > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient fidelity", gradient_fidelity()),
        (2, "stability by construction", stability()),
    ];
    match desk_pipeline() {
        Ok(run) => {
            results.push((3, "system identification", identification(&run)));
            results.push((4, "nominal performance", nominal_performance(&run)));
            results.push((5, "training cost", training_cost(&run)));
            results.push((6, "dimensioning", dimensioning()));
            results.push((7, "determinism", determinism(&run)));
            results.push((8, "plant-model mismatch", mismatch(&run)));
        }
        Err(e) => {
            for (id, name) in [
                (3, "system identification"),
                (4, "nominal performance"),
                (5, "training cost"),
            ] {
                results.push((id, name, Err(e.clone())));
            }
            results.push((6, "dimensioning", dimensioning()));
            results.push((7, "determinism", Err(e.clone())));
            results.push((8, "plant-model mismatch", Err(e)));
        }
    }
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(m) => println!("criterion {id} {name}: PASS ({m})"),
            Err(m) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({m})");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

//! Small fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpc::autodiff::GradCheckOptions;
use dpc::dynamics::{NeuralSsm, SignalScaling, SsmConfig};
use dpc::plant::{
    generate_ctrl_dataset, generate_sysid_dataset, AmbientConfig, ComfortConfig, ExcitationConfig,
    RcBuildingModel, RcParams, ScenarioBatch, Split, SysIdDataset,
};
use dpc::policy::{
    closed_loop_loss, fit_standardizer, ClosedLoopModel, FeatureLayout, LossWeights,
    PenaltyActivation, PolicyNet,
};
use dpc::Result;

pub fn two_zone_plant() -> RcBuildingModel {
    RcBuildingModel::new(RcParams {
        zones: 2,
        ..RcParams::default()
    })
    .unwrap()
}

pub fn sysid_data(plant: &RcBuildingModel, days: usize, seed: u64) -> SysIdDataset {
    generate_sysid_dataset(
        plant,
        days,
        &ExcitationConfig::default(),
        &AmbientConfig::default(),
        seed,
    )
    .unwrap()
}

/// Small randomly initialized model with data-derived scaling.
pub fn toy_ssm(plant: &RcBuildingModel, past: usize, seed: u64) -> NeuralSsm {
    let cfg = SsmConfig {
        past,
        state_hidden: vec![4],
        input_hidden: vec![4],
        disturbance_hidden: vec![3],
        ..SsmConfig::default()
    };
    let ds = sysid_data(plant, 3, seed);
    let arch = cfg.architecture(plant.zones(), plant.params().n_controls(), 1);
    let scaling = SignalScaling::from_data(&ds, &plant.actuators()).unwrap();
    NeuralSsm::new(&arch, scaling, seed).unwrap()
}

/// `count` training-split scenarios of a short control dataset.
pub fn scenarios(
    plant: &RcBuildingModel,
    past: usize,
    horizon: usize,
    count: usize,
    seed: u64,
) -> ScenarioBatch {
    let ds = generate_ctrl_dataset(
        plant,
        6,
        &ComfortConfig::default(),
        &ExcitationConfig::default(),
        &AmbientConfig::default(),
        seed,
    )
    .unwrap();
    let anchors = ds.anchors(Split::Train, past, horizon, 1);
    let stride = (anchors.len() / count).max(1);
    let picked: Vec<usize> = anchors.into_iter().step_by(stride).take(count).collect();
    ds.batch(&picked, past, horizon).unwrap()
}

/// Control law with standardization fitted on `batch`.
pub fn toy_policy(
    plant: &RcBuildingModel,
    model: &NeuralSsm,
    horizon: usize,
    hidden: &[usize],
    batch: &ScenarioBatch,
    seed: u64,
) -> PolicyNet {
    let layout = FeatureLayout::standard(model.n_y(), model.n_d(), model.past(), horizon);
    let raw = PolicyNet::new(
        layout.clone(),
        hidden,
        dpc::blocks::Activation::Gelu,
        plant.actuators(),
        horizon,
        seed,
    )
    .unwrap();
    let std = fit_standardizer(&raw, batch).unwrap();
    PolicyNet::from_parts(raw.net, layout, std, raw.actuators, horizon).unwrap()
}

pub fn desk_weights() -> LossWeights {
    LossWeights {
        q_umin: 1.0,
        q_du: 1.0,
        q_y: 50.0,
        q_u: 50.0,
    }
}

/// Closed-loop finite-difference check on a 2-zone, N=4 instance: up to 50
/// random policy entries, step 1e-5. Returns the max relative error.
pub fn closed_loop_fd_error() -> Result<f64> {
    let plant = two_zone_plant();
    let model = toy_ssm(&plant, 4, 11);
    let batch = scenarios(&plant, 4, 4, 6, 12);
    let policy = toy_policy(&plant, &model, 4, &[6], &batch, 13);
    let weights = desk_weights();
    let opts = GradCheckOptions {
        step: 1e-5,
        tol: 1e-4,
        max_entries: Some(50),
        seed: 14,
        ..GradCheckOptions::default()
    };
    let report = dpc::autodiff::grad_check_model(
        &policy,
        |g, p| {
            let cl = ClosedLoopModel::new(p.clone(), model.clone())?;
            Ok(
                closed_loop_loss(g, &cl, &batch, &weights, PenaltyActivation::Relu, true)?
                    .0
                    .total,
            )
        },
        &opts,
    )?;
    Ok(report.max_rel_error)
}

/// Config small enough for every CLI command to finish in seconds.
pub const TINY_CONFIG: &str = r#"{
  "plant": { "sysid_days": 3, "ctrl_days": 3 },
  "ssm": {
    "past": 4,
    "state_hidden": [4],
    "input_hidden": [6],
    "disturbance_hidden": [4],
    "training": { "horizon": 4, "epochs": 2, "batch_size": 16, "eval_stride": 4 }
  },
  "policy": {
    "horizon": 4,
    "hidden": [8],
    "training": { "updates": 6, "batch_size": 8, "train_scenarios": 24, "dev_scenarios": 8, "eval_every": 3 }
  },
  "run": { "seed": 3, "eval": { "days": 1, "warmup_days": 1, "initial_temp": 20.0 } }
}"#;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dpc")
}

/// Run the binary with `args`, writing into `out`.
pub fn dpc(args: &[&str], out: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

pub fn dpc_raw(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Run the four pipeline commands into `out`; panics on any failure.
pub fn run_pipeline(config: &Path, out: &Path, seed: Option<u64>) {
    let cfg = config.to_str().unwrap();
    let seed_s = seed.map(|s| s.to_string());
    let mut common = vec!["--config", cfg];
    if let Some(s) = &seed_s {
        common.extend(["--seed", s.as_str()]);
    }
    let ssm = out.join("ssm.json");
    let policy = out.join("policy.json");
    let ssm_s = ssm.to_str().unwrap();
    let policy_s = policy.to_str().unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate-data"],
        vec!["train-ssm"],
        vec!["train-policy", "--ssm", ssm_s],
        vec![
            "simulate", "--ssm", ssm_s, "--policy", policy_s, "--plant", "nominal",
        ],
        vec![
            "simulate", "--ssm", ssm_s, "--policy", policy_s, "--plant", "true",
        ],
    ];
    for step in steps {
        let mut args = step.clone();
        args.extend(common.iter().copied());
        let o = dpc(&args, out);
        assert!(o.status.success(), "{step:?} failed: {}", stderr(&o));
    }
}

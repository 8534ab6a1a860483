//! Whole pipeline in process through the harness: data, identification,
//! control law, then receding-horizon evaluation on the learned model and on
//! the emulator against a thermostat baseline. Pass a JSON config to replace
//! the built-in 2-zone one (about a minute).

use dpc::harness::{
    build_plant, evaluate, generate_datasets, identify, learn_policy, PlantKind, RunConfig,
};

const SMALL: &str = r#"{
  "plant": { "building": { "zones": 2 }, "sysid_days": 60, "ctrl_days": 30 },
  "ssm": {
    "past": 16,
    "state_hidden": [32],
    "input_hidden": [32],
    "disturbance_hidden": [16],
    "training": { "horizon": 16, "epochs": 60, "eval_stride": 4 }
  },
  "policy": {
    "horizon": 16,
    "hidden": [96, 96, 96],
    "training": { "updates": 1500, "batch_size": 200, "train_scenarios": 600, "dev_scenarios": 100, "final_lr_fraction": 0.02 }
  },
  "optimizer": { "ssm": { "lr": 0.003 }, "policy": { "lr": 0.002 } },
  "run": { "seed": 5, "eval": { "days": 3, "warmup_days": 1, "initial_temp": 20.0 } }
}"#;

fn main() -> dpc::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::from_json(SMALL)?,
    };
    let plant = build_plant(&cfg)?;
    let (sysid, ctrl) = generate_datasets(&cfg, &plant)?;
    let (model, ssm) = identify(&cfg, &plant, &sysid)?;
    println!(
        "model: {} parameters, test nMSE {:.4}",
        ssm.param_count, ssm.test_nmse.mean
    );
    let (law, summary) = learn_policy(&cfg, &plant, &model, &ctrl)?;
    println!(
        "control law: {} parameters, dev loss ratio {:.4}",
        summary.param_count, summary.dev_loss_ratio
    );

    for kind in [PlantKind::Nominal, PlantKind::True] {
        let (report, sim) = evaluate(&cfg, &plant, &model, &law, kind)?;
        println!();
        print!("{}", report.render());
        let worst = sim
            .records
            .iter()
            .max_by(|a, b| {
                let v = |r: &dpc::harness::StepRecord| {
                    r.y.iter()
                        .zip(&r.y_lower)
                        .map(|(y, lo)| lo - y)
                        .fold(0.0f64, f64::max)
                };
                v(a).total_cmp(&v(b))
            })
            .expect("non-empty simulation");
        println!(
            "largest comfort shortfall at step {}: zones {:?}, lower bounds {:?}",
            worst.k, worst.y, worst.y_lower
        );
    }
    Ok(())
}

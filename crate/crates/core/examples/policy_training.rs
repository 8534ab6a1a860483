//! Train an explicit control law by backpropagating the economic loss
//! through a frozen identified model. A 2-zone building keeps it quick.

use dpc::autodiff::AdamConfig;
use dpc::blocks::Activation;
use dpc::dynamics::{train_ssm, NeuralSsm, SignalScaling, SsmConfig, SysIdConfig};
use dpc::plant::{
    generate_ctrl_dataset, generate_sysid_dataset, AmbientConfig, ComfortConfig, ExcitationConfig,
    RcBuildingModel, RcParams,
};
use dpc::policy::{
    fit_standardizer, policy_apply_receding, scenario_sets, train_policy, ClosedLoopModel,
    FeatureLayout, LossWeights, PolicyNet, PolicyTrainConfig,
};

const PAST: usize = 8;
const HORIZON: usize = 8;

fn main() -> dpc::Result<()> {
    let plant = RcBuildingModel::new(RcParams {
        zones: 2,
        ..RcParams::default()
    })?;
    let (ambient, excitation) = (AmbientConfig::default(), ExcitationConfig::default());

    let sysid = generate_sysid_dataset(&plant, 30, &excitation, &ambient, 1)?;
    let cfg = SsmConfig {
        past: PAST,
        state_hidden: vec![16],
        input_hidden: vec![16],
        disturbance_hidden: vec![8],
        ..SsmConfig::default()
    };
    let training = SysIdConfig {
        horizon: PAST,
        epochs: 30,
        eval_stride: 4,
        ..SysIdConfig::default()
    };
    let arch = cfg.architecture(sysid.n_y(), sysid.n_u(), sysid.n_d());
    let initial = NeuralSsm::new(
        &arch,
        SignalScaling::from_data(&sysid, &plant.actuators())?,
        2,
    )?;
    let (model, _) = train_ssm(&initial, &sysid, &training, &AdamConfig::with_lr(3e-3), 3)?;

    let ctrl = generate_ctrl_dataset(
        &plant,
        30,
        &ComfortConfig::default(),
        &excitation,
        &ambient,
        4,
    )?;
    let tc = PolicyTrainConfig {
        updates: 400,
        batch_size: 100,
        train_scenarios: 300,
        dev_scenarios: 100,
        eval_every: 50,
        final_lr_fraction: 0.1,
        ..PolicyTrainConfig::default()
    };
    let (train, dev) = scenario_sets(&ctrl, PAST, HORIZON, &tc, 5)?;

    let layout = FeatureLayout::standard(model.n_y(), model.n_d(), PAST, HORIZON);
    let raw = PolicyNet::new(
        layout.clone(),
        &[64, 64],
        Activation::Gelu,
        plant.actuators(),
        HORIZON,
        6,
    )?;
    let standardizer = fit_standardizer(&raw, &train)?;
    let policy = PolicyNet::from_parts(raw.net, layout, standardizer, raw.actuators, HORIZON)?;

    let weights = LossWeights {
        q_umin: 1.0,
        q_du: 1.0,
        q_y: 50.0,
        q_u: 50.0,
    };
    let closed_loop = ClosedLoopModel::new(policy, model)?;
    let (law, history) = train_policy(
        &closed_loop,
        &train,
        &dev,
        &weights,
        &tc,
        &AdamConfig::with_lr(2e-3),
        7,
    )?;
    for e in &history.evaluations {
        println!(
            "update {:>4}  train {:>9.4}  dev {:>9.4}",
            e.update, e.train_loss, e.dev_loss
        );
    }
    println!(
        "dev loss {:.4} -> {:.4} (best at update {})",
        history.initial_dev_loss, history.best_dev_loss, history.best_update
    );

    // receding-horizon action for the first dev scenario, engineering units
    let first = dev.select(&[0])?;
    let u = policy_apply_receding(&law, &first)?;
    println!("first action [T_supply, flow_1, flow_2]: {:?}", u.data());
    Ok(())
}

//! Identify a block-structured neural state-space model of a 2-zone building
//! from excitation data, then compare open-loop predictions with the test
//! split.

use dpc::autodiff::AdamConfig;
use dpc::dynamics::{open_loop_nmse, train_ssm, NeuralSsm, SignalScaling, SsmConfig, SysIdConfig};
use dpc::plant::{
    generate_sysid_dataset, AmbientConfig, ExcitationConfig, RcBuildingModel, RcParams, Split,
};

fn main() -> dpc::Result<()> {
    let plant = RcBuildingModel::new(RcParams {
        zones: 2,
        ..RcParams::default()
    })?;
    let ds = generate_sysid_dataset(
        &plant,
        30,
        &ExcitationConfig::default(),
        &AmbientConfig::default(),
        7,
    )?;

    let cfg = SsmConfig {
        past: 8,
        state_hidden: vec![16],
        input_hidden: vec![16],
        disturbance_hidden: vec![8],
        training: SysIdConfig {
            horizon: 8,
            epochs: 40,
            batch_size: 64,
            eval_stride: 4,
            ..SysIdConfig::default()
        },
        ..SsmConfig::default()
    };
    let arch = cfg.architecture(ds.n_y(), ds.n_u(), ds.n_d());
    let scaling = SignalScaling::from_data(&ds, &plant.actuators())?;
    let initial = NeuralSsm::new(&arch, scaling, 1)?;
    let before = open_loop_nmse(&initial, &ds, Split::Test, 8, 4)?;

    let (model, history) = train_ssm(&initial, &ds, &cfg.training, &AdamConfig::with_lr(3e-3), 2)?;
    for e in history.epochs.iter().step_by(10) {
        println!(
            "epoch {:>3}  train {:.5}  dev nMSE {:.5}",
            e.epoch, e.train_loss, e.dev_nmse
        );
    }
    let after = open_loop_nmse(&model, &ds, Split::Test, 8, 4)?;
    println!(
        "test nMSE: {:.4} untrained, {:.4} trained ({} windows)",
        before.mean, after.mean, after.windows
    );

    // one open-loop prediction against the emulator record
    let (start, _) = ds.splits.range(Split::Test);
    let anchor = start + 8;
    let batch = ds.batch(&[anchor], 8, 8)?;
    let y = model.predict(&batch.y_past, &batch.u, &batch.d, 8)?;
    let truth = &batch.y_future;
    println!("{:>4} {:>10} {:>10}", "k", "predicted", "measured");
    for k in 0..8 {
        println!(
            "{k:>4} {:>10.3} {:>10.3}",
            y.get(k * 2, 0),
            truth.get(k * 2, 0)
        );
    }
    Ok(())
}

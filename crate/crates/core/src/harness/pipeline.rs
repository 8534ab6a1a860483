//! The pipeline stages as library calls. The CLI wraps each of these with
//! file I/O; examples and tests call them directly.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::EvalReport;
use super::simulate::{build_eval_scenario, simulate, BangBang, Controller, PlantKind, Simulation};
use crate::dynamics::{
    open_loop_nmse, train_ssm, NeuralSsm, NmseReport, SignalScaling, SysIdHistory,
};
use crate::error::{Error, Result};
use crate::plant::{
    generate_ctrl_dataset, generate_sysid_dataset, CtrlDataset, RcBuildingModel, Split,
    SysIdDataset,
};
use crate::policy::{
    fit_standardizer, scenario_sets, train_policy, ClosedLoopModel, PolicyHistory, PolicyNet,
};

pub fn build_plant(cfg: &RunConfig) -> Result<RcBuildingModel> {
    RcBuildingModel::new(cfg.plant.building.clone())
}

pub fn generate_datasets(
    cfg: &RunConfig,
    plant: &RcBuildingModel,
) -> Result<(SysIdDataset, CtrlDataset)> {
    let seeds = cfg.seeds();
    let p = &cfg.plant;
    let sysid = generate_sysid_dataset(
        plant,
        p.sysid_days,
        &p.excitation,
        &p.ambient,
        seeds.sysid_data,
    )?;
    let ctrl = generate_ctrl_dataset(
        plant,
        p.ctrl_days,
        &p.comfort,
        &p.excitation,
        &p.ambient,
        seeds.ctrl_data,
    )?;
    Ok((sysid, ctrl))
}

/// Identification result with held-out fit quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSummary {
    pub history: SysIdHistory,
    pub dev_nmse: NmseReport,
    pub test_nmse: NmseReport,
    pub param_count: usize,
}

pub fn identify(
    cfg: &RunConfig,
    plant: &RcBuildingModel,
    ds: &SysIdDataset,
) -> Result<(NeuralSsm, SsmSummary)> {
    if ds.n_u() != plant.params().n_controls() || ds.n_y() != plant.zones() {
        return Err(Error::Dimension(format!(
            "dataset has {} outputs and {} controls, plant config has {} zones",
            ds.n_y(),
            ds.n_u(),
            plant.zones()
        )));
    }
    let seeds = cfg.seeds();
    let arch = cfg.ssm.architecture(ds.n_y(), ds.n_u(), ds.n_d());
    let scaling = SignalScaling::from_data(ds, &plant.actuators())?;
    let init = NeuralSsm::new(&arch, scaling, seeds.ssm_init)?;
    let t = &cfg.ssm.training;
    let (model, history) = train_ssm(&init, ds, t, &cfg.optimizer.ssm, seeds.ssm_train)?;
    let dev_nmse = open_loop_nmse(&model, ds, Split::Dev, t.horizon, t.eval_stride)?;
    let test_nmse = open_loop_nmse(&model, ds, Split::Test, t.horizon, t.eval_stride)?;
    use crate::blocks::Parameters;
    let param_count = model.param_count();
    Ok((
        model,
        SsmSummary {
            history,
            dev_nmse,
            test_nmse,
            param_count,
        },
    ))
}

/// Untrained control law with feature standardization fitted on the
/// training scenarios.
pub fn initial_policy(
    cfg: &RunConfig,
    plant: &RcBuildingModel,
    model: &NeuralSsm,
    ds: &CtrlDataset,
) -> Result<PolicyNet> {
    let seeds = cfg.seeds();
    let pc = &cfg.policy;
    let layout = pc.layout(model.n_y(), model.n_d(), model.past());
    let raw = PolicyNet::new(
        layout.clone(),
        &pc.hidden,
        pc.activation,
        plant.actuators(),
        pc.horizon,
        seeds.policy_init,
    )?;
    let (train, _) = scenario_sets(ds, model.past(), pc.horizon, &pc.training, seeds.scenarios)?;
    let std = fit_standardizer(&raw, &train)?;
    PolicyNet::from_parts(raw.net, layout, std, raw.actuators, pc.horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub history: PolicyHistory,
    pub param_count: usize,
    /// Best dev loss relative to the untrained law.
    pub dev_loss_ratio: f64,
}

pub fn learn_policy(
    cfg: &RunConfig,
    plant: &RcBuildingModel,
    model: &NeuralSsm,
    ds: &CtrlDataset,
) -> Result<(PolicyNet, PolicySummary)> {
    if ds.y.first().map(Vec::len) != Some(model.n_y())
        || ds.d.first().map(Vec::len) != Some(model.n_d())
    {
        return Err(Error::Dimension(
            "control dataset does not match the model signals".into(),
        ));
    }
    let seeds = cfg.seeds();
    let pc = &cfg.policy;
    let policy = initial_policy(cfg, plant, model, ds)?;
    let (train, dev) = scenario_sets(ds, model.past(), pc.horizon, &pc.training, seeds.scenarios)?;
    let cl = ClosedLoopModel::new(policy, model.clone())?;
    let (best, history) = train_policy(
        &cl,
        &train,
        &dev,
        &cfg.loss,
        &pc.training,
        &cfg.optimizer.policy,
        seeds.policy_train,
    )?;
    use crate::blocks::Parameters;
    let param_count = best.param_count();
    let dev_loss_ratio = history.best_dev_loss / history.initial_dev_loss;
    Ok((
        best,
        PolicySummary {
            history,
            param_count,
            dev_loss_ratio,
        },
    ))
}

/// Closed-loop evaluation on `kind`. On the emulator the law is also run on
/// the nominal model so the mismatch gap is part of the report.
pub fn evaluate(
    cfg: &RunConfig,
    plant: &RcBuildingModel,
    model: &NeuralSsm,
    policy: &PolicyNet,
    kind: PlantKind,
) -> Result<(EvalReport, Simulation)> {
    let scenario = build_eval_scenario(
        plant,
        &cfg.plant.comfort,
        &cfg.plant.ambient,
        &cfg.run.eval,
        model.past(),
        policy.horizon(),
        cfg.seeds().eval,
    )?;
    let horizon = policy.horizon();
    let sim = simulate(
        &mut Controller::Policy(policy),
        kind,
        plant,
        model,
        &scenario,
        horizon,
    )?;
    let baseline = simulate(
        &mut Controller::BangBang(BangBang::new(plant.actuators())),
        kind,
        plant,
        model,
        &scenario,
        horizon,
    )?;
    let nominal_rate = match kind {
        PlantKind::Nominal => sim.metrics.violation_rate,
        PlantKind::True => {
            simulate(
                &mut Controller::Policy(policy),
                PlantKind::Nominal,
                plant,
                model,
                &scenario,
                horizon,
            )?
            .metrics
            .violation_rate
        }
    };
    let report = EvalReport::new(
        cfg,
        kind,
        horizon,
        sim.metrics.clone(),
        baseline.metrics,
        nominal_rate,
    );
    Ok((report, sim))
}

//! Structural properties of the neural state-space model and its trainer.

mod common;

use common::{sysid_data, toy_ssm, two_zone_plant};
use dpc::autodiff::{grad_check_model, Adam, AdamConfig, GradCheckOptions, Graph, Tensor};
use dpc::blocks::Parameters;
use dpc::dynamics::{sysid_loss, train_ssm, NeuralSsm, SignalScaling, SysIdConfig, SysIdObjective};
use dpc::plant::{Split, SysIdBatch};
use proptest::prelude::*;

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn model() -> NeuralSsm {
    toy_ssm(&two_zone_plant(), 4, 21)
}

/// Zero the last layer of an MLP block so it outputs exactly zero.
fn silence(m: &mut dpc::blocks::Mlp) {
    let last = m.layers_mut().last_mut().unwrap();
    last.weight = Tensor::zeros(last.weight.rows(), last.weight.cols());
    last.bias = Tensor::zeros(last.bias.rows(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn state_update_is_additive(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        u in prop::collection::vec(0.0f64..1.0, 3),
        d in -10.0f64..20.0,
    ) {
        let m = model();
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let xv = g.constant(Tensor::column(&x));
        let act = two_zone_plant().actuators();
        let u_eng = g.constant(Tensor::column(&act.denormalize(&u)));
        let u0 = g.constant(Tensor::zeros(3, 1));
        let dv = g.constant(Tensor::scalar(d));
        let d0 = g.constant(Tensor::zeros(1, 1));
        let mut next = |u, d| { let s = b.step(&mut g, xv, u, d).unwrap(); s.x_next };
        let (full, no_u, no_d, none) = (next(u_eng, dv), next(u0, dv), next(u_eng, d0), next(u0, d0));
        let v = |t| g.value(t).clone();
        let (full, no_u, no_d, none) = (v(full), v(no_u), v(no_d), v(none));
        for i in 0..6 {
            let r = full.data()[i] - no_u.data()[i] - no_d.data()[i] + none.data()[i];
            prop_assert!(r.abs() < 1e-12, "entry {i}: {r}");
        }
    }

    #[test]
    fn fit_only_loss_is_nonnegative_mse(seed in 0u64..1000) {
        let plant = two_zone_plant();
        let m = toy_ssm(&plant, 4, seed);
        let ds = sysid_data(&plant, 3, seed);
        let anchors: Vec<usize> = ds.anchors(Split::Train, 4, 4, 7);
        let batch = ds.batch(&anchors, 4, 4).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let l = sysid_loss(&mut g, &b, &batch, &SysIdObjective::fit_only()).unwrap();
        let (total, fit) = (g.value(l.total).item().unwrap(), g.value(l.fit).item().unwrap());
        prop_assert!(total >= 0.0);
        prop_assert_eq!(total.to_bits(), fit.to_bits());
    }
}

#[test]
fn rollout_matches_hand_loop_bitwise() {
    let plant = two_zone_plant();
    let m = toy_ssm(&plant, 4, 22);
    let ds = sysid_data(&plant, 3, 23);
    let anchors: Vec<usize> = ds
        .anchors(Split::Train, 4, 8, 1)
        .into_iter()
        .step_by(17)
        .take(5)
        .collect();
    let batch = ds.batch(&anchors, 4, 8).unwrap();
    for horizon in [1usize, 8] {
        let u = batch.u.slice_rows(0, horizon * 3).unwrap();
        let d = batch.d.slice_rows(0, horizon).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let (yp, uv, dv) = (
            g.constant(batch.y_past.clone()),
            g.constant(u.clone()),
            g.constant(d.clone()),
        );
        let r = b.rollout(&mut g, yp, uv, dv, horizon).unwrap();

        let mut x = b.estimate_initial_state(&mut g, yp).unwrap();
        let mut ys = Vec::new();
        for k in 0..horizon {
            let uk = g.constant(u.slice_rows(k * 3, 3).unwrap());
            let dk = g.constant(d.slice_rows(k, 1).unwrap());
            let s = b.step(&mut g, x, uk, dk).unwrap();
            x = s.x_next;
            ys.push(g.value(s.y_next).clone());
        }
        let hand = Tensor::concat_rows(&ys.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(bits(g.value(r.y)), bits(&hand), "horizon {horizon}");
        assert_eq!(
            bits(&m.predict(&batch.y_past, &u, &d, horizon).unwrap()),
            bits(&hand)
        );
    }
}

#[test]
fn horizon_mismatch_is_a_dimension_error() {
    let m = model();
    let mut g = Graph::new();
    let b = m.bind(&mut g, "", false).unwrap();
    let yp = g.constant(Tensor::zeros(8, 1));
    let u = g.constant(Tensor::zeros(3 * 3, 1));
    let d = g.constant(Tensor::zeros(4, 1));
    assert!(matches!(
        b.rollout(&mut g, yp, u, d, 4),
        Err(dpc::Error::Dimension(_))
    ));
    let short = g.constant(Tensor::zeros(6, 1));
    assert!(matches!(
        b.estimate_initial_state(&mut g, short),
        Err(dpc::Error::Dimension(_))
    ));
}

/// Model with silent input and disturbance blocks, identity scaling and a
/// bias-free output map.
fn free_model(seed: u64) -> NeuralSsm {
    let mut m = toy_ssm(&two_zone_plant(), 4, seed);
    silence(&mut m.input_map);
    silence(&mut m.disturbance_map);
    m.output_map.bias = Tensor::zeros(2, 1);
    m.scaling = SignalScaling::identity(2, 3, 1);
    m
}

#[test]
fn contraction_bound_holds() {
    for seed in 0..20 {
        let m = free_model(seed);
        let lambda_max: f64 = 0.99;
        let w = &m.output_map.weight;
        let c = (0..w.rows())
            .map(|i| w.row_values(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let y_past =
            Tensor::from_columns(&[[19.0, 21.0, 19.5, 21.2, 20.1, 21.0, 20.3, 21.9]]).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let yp = g.constant(y_past);
        let u = g.constant(Tensor::zeros(3 * 12, 1));
        let d = g.constant(Tensor::zeros(12, 1));
        let r = b.rollout(&mut g, yp, u, d, 12).unwrap();
        let x0 = g.value(r.x0).max_abs();
        for (k, &y) in r.outputs.iter().enumerate() {
            let bound = lambda_max.powi(k as i32 + 1) * c * x0;
            assert!(
                g.value(y).max_abs() <= bound + 1e-12,
                "seed {seed} step {k}"
            );
        }
    }
}

#[test]
fn free_response_is_non_increasing() {
    let m = free_model(3);
    let mut g = Graph::new();
    let b = m.bind(&mut g, "", false).unwrap();
    let mut x = g.constant(Tensor::column(&[3.0, 0.5, 1.0, 2.5, 0.1, 4.0]));
    let u = g.constant(Tensor::zeros(3, 1));
    let d = g.constant(Tensor::zeros(1, 1));
    let mut prev = g.value(x).max_abs();
    for _ in 0..50 {
        x = b.step(&mut g, x, u, d).unwrap().x_next;
        let now = g.value(x).max_abs();
        assert!(now <= prev, "{now} > {prev}");
        assert!(g.value(x).data().iter().all(|&v| v >= 0.0));
        prev = now;
    }
}

fn window_batch(m: &NeuralSsm, horizon: usize, seed: u64) -> SysIdBatch {
    let ds = sysid_data(&two_zone_plant(), 3, seed);
    let anchors: Vec<usize> = ds
        .anchors(Split::Train, m.past(), horizon, 1)
        .into_iter()
        .step_by(23)
        .take(4)
        .collect();
    ds.batch(&anchors, m.past(), horizon).unwrap()
}

#[test]
fn rollout_gradient_through_all_blocks() {
    let m = model();
    let batch = window_batch(&m, 4, 24);
    let opts = GradCheckOptions {
        tol: 1e-4,
        ..GradCheckOptions::default()
    };
    let report = grad_check_model(
        &m,
        |g, m: &NeuralSsm| {
            let b = m.bind(g, "", true)?;
            let obj = SysIdObjective::fit_only();
            Ok(sysid_loss(g, &b, &batch, &obj)?.total)
        },
        &opts,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    for block in ["observer", "state", "input", "disturbance", "output"] {
        assert!(
            report
                .params
                .iter()
                .any(|p| p.name.starts_with(block) && p.checked > 0),
            "{block}"
        );
    }
}

#[test]
fn observer_gradient_of_state_norm() {
    let m = model();
    let batch = window_batch(&m, 4, 25);
    let report = grad_check_model(
        &m,
        |g, m: &NeuralSsm| {
            let b = m.bind(g, "", true)?;
            let yp = g.constant(batch.y_past.clone());
            let x = b.estimate_initial_state(g, yp)?;
            g.sum_squares(x)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    let observer: usize = report
        .params
        .iter()
        .filter(|p| p.name.starts_with("observer"))
        .map(|p| p.checked)
        .sum();
    assert_eq!(observer, m.observer.param_count());
}

#[test]
fn influence_penalty_activates_only_past_the_bound() {
    let m0 = model();
    let batch = window_batch(&m0, 4, 26);
    let obj = SysIdObjective {
        smooth_weight: 0.0,
        influence_weight: 1.0,
        influence: [-1.0, 1.0],
    };
    let run = |level: f64| {
        let mut m = m0.clone();
        silence(&mut m.disturbance_map);
        silence(&mut m.input_map);
        m.input_map.layers_mut().last_mut().unwrap().bias = Tensor::filled(6, 1, level);
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let l = sysid_loss(&mut g, &b, &batch, &obj).unwrap();
        (
            g.value(l.total).item().unwrap(),
            g.value(l.fit).item().unwrap(),
        )
    };
    for level in [0.0, 0.99, -0.99, 1.0] {
        let (total, fit) = run(level);
        assert_eq!(total, fit, "level {level}");
    }
    for level in [1.01, -1.5] {
        let (total, fit) = run(level);
        assert!(total > fit, "level {level}");
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let m = model();
    let ds = sysid_data(&two_zone_plant(), 3, 27);
    let cfg = SysIdConfig {
        horizon: 4,
        epochs: 0,
        ..SysIdConfig::default()
    };
    let (trained, history) = train_ssm(&m, &ds, &cfg, &AdamConfig::with_lr(1e-2), 1).unwrap();
    assert_eq!(trained, m);
    assert!(history.epochs.is_empty());
    assert_eq!(history.updates, 0);
}

#[test]
fn self_generated_targets_keep_zero_loss() {
    let m = model();
    let mut batch = window_batch(&m, 4, 28);
    batch.y_future = m.predict(&batch.y_past, &batch.u, &batch.d, 4).unwrap();
    let mut current = m.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-2));
    for _ in 0..5 {
        let mut g = Graph::new();
        let b = current.bind(&mut g, "", true).unwrap();
        let l = sysid_loss(&mut g, &b, &batch, &SysIdObjective::fit_only()).unwrap();
        assert!(g.value(l.total).item().unwrap() < 1e-24);
        let grads = g.backward(l.total).unwrap();
        adam.step(current.params_mut(), &grads).unwrap();
    }
    assert_eq!(current, m);
}

#[test]
fn training_is_bitwise_reproducible() {
    let m = model();
    let ds = sysid_data(&two_zone_plant(), 3, 29);
    let cfg = SysIdConfig {
        horizon: 4,
        epochs: 2,
        batch_size: 32,
        eval_stride: 3,
        ..SysIdConfig::default()
    };
    let run = || train_ssm(&m, &ds, &cfg, &AdamConfig::with_lr(3e-3), 5).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    for ((_, x), (_, y)) in a.params().iter().zip(b.params()) {
        assert_eq!(bits(x), bits(y));
    }
    assert_eq!(ha, hb);
    assert_ne!(a, m);
    let (c, _) = train_ssm(&m, &ds, &cfg, &AdamConfig::with_lr(3e-3), 6).unwrap();
    assert_ne!(a, c);
}

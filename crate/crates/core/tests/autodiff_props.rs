//! Property tests for the tape: every op's backward pass against central
//! differences, slicing round-trips, and the GELU approximation against an
//! exact normal-CDF oracle.

use dpc::autodiff::{grad_check, scalar, GradCheckOptions, Graph, Tensor, Var};
use dpc::Result;
use proptest::prelude::*;

/// Turn any tensor into a scalar with value-dependent, non-uniform adjoints.
fn probe(g: &mut Graph, v: Var) -> Result<Var> {
    let (r, c) = g.shape(v);
    let w: Vec<f64> = (0..r * c).map(|i| (0.7 * i as f64 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(r, c, w)?);
    let lin = g.hadamard(v, w)?;
    let lin = g.sum(lin)?;
    let sq = g.sum_squares(v)?;
    let sq = g.scale(sq, 0.5)?;
    g.add(lin, sq)
}

fn tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(rows, cols, data[..rows * cols].to_vec()).unwrap()
}

fn check<F>(f: F, params: Vec<(&str, Tensor)>) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let params: Vec<(String, Tensor)> = params
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    let report = grad_check(f, &params, &GradCheckOptions::default()).unwrap();
    report.max_rel_error
}

const TOL: f64 = 1e-5;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Values at least 0.05 away from zero, for the relu kink.
fn off_kink(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.05f64..2.0, any::<bool>()), n).prop_map(|v| {
        v.into_iter()
            .map(|(x, neg)| if neg { -x } else { x })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn matmul(a in values(12), b in values(12)) {
        let e = check(|g, v| { let m = g.matmul(v[0], v[1])?; probe(g, m) },
            vec![("a", tensor(3, 2, &a)), ("b", tensor(2, 4, &b))]);
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn add_sub_hadamard(a in values(12), b in values(12)) {
        for op in 0..3 {
            let e = check(|g, v| {
                let m = match op { 0 => g.add(v[0], v[1])?, 1 => g.sub(v[0], v[1])?, _ => g.hadamard(v[0], v[1])? };
                probe(g, m)
            }, vec![("a", tensor(4, 3, &a)), ("b", tensor(4, 3, &b))]);
            prop_assert!(e < TOL, "op {op}: {e}");
        }
    }

    #[test]
    fn column_broadcast(a in values(12), b in values(4)) {
        for op in 0..3 {
            let e = check(|g, v| {
                let m = match op { 0 => g.add(v[0], v[1])?, 1 => g.sub(v[0], v[1])?, _ => g.hadamard(v[0], v[1])? };
                probe(g, m)
            }, vec![("a", tensor(4, 3, &a)), ("b", tensor(4, 1, &b))]);
            prop_assert!(e < TOL, "op {op}: {e}");
        }
    }

    #[test]
    fn affine_and_scale(a in values(6), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let e = check(|g, v| { let m = g.affine(v[0], s, t)?; let m = g.scale(m, 0.5 * s)?; probe(g, m) },
            vec![("a", tensor(2, 3, &a))]);
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn concat_and_slice(a in values(6), b in values(9), start in 0usize..4, len in 1usize..3) {
        let e = check(|g, v| {
            let c = g.concat_rows(&[v[0], v[1]])?;
            let s = g.slice_rows(c, start, len)?;
            probe(g, s)
        }, vec![("a", tensor(2, 3, &a)), ("b", tensor(3, 3, &b))]);
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn relu_away_from_kink(a in off_kink(8)) {
        let e = check(|g, v| { let m = g.relu(v[0])?; probe(g, m) }, vec![("a", tensor(4, 2, &a))]);
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn smooth_activations(a in values(8)) {
        for op in 0..4 {
            let e = check(|g, v| {
                let m = match op {
                    0 => g.gelu(v[0])?,
                    1 => g.sigmoid(v[0])?,
                    2 => g.softplus(v[0])?,
                    _ => g.softmax_rows(v[0])?,
                };
                probe(g, m)
            }, vec![("a", tensor(2, 4, &a))]);
            prop_assert!(e < TOL, "op {op}: {e}");
        }
    }

    #[test]
    fn reductions(a in values(6)) {
        for op in 0..3 {
            let e = check(|g, v| {
                let s = match op { 0 => g.sum(v[0])?, 1 => g.mean(v[0])?, _ => g.sum_squares(v[0])? };
                // square the scalar so the adjoint depends on the value
                g.sum_squares(s)
            }, vec![("a", tensor(3, 2, &a))]);
            prop_assert!(e < TOL, "op {op}: {e}");
        }
    }

    #[test]
    fn split_then_concat_is_bitwise(a in values(20), rows in 2usize..5, cut_frac in 0.0f64..1.0) {
        let t = tensor(rows, 4, &a);
        let cut = 1 + ((rows - 1) as f64 * cut_frac) as usize % (rows - 1);
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let top = g.slice_rows(x, 0, cut).unwrap();
        let bottom = g.slice_rows(x, cut, rows - cut).unwrap();
        let back = g.concat_rows(&[top, bottom]).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(g.value(back)), bits(&t));
    }

    #[test]
    fn gradients_are_deterministic(a in values(12), b in values(12)) {
        let grads = || {
            let mut g = Graph::new();
            let x = g.param("a", tensor(3, 4, &a)).unwrap();
            let w = g.param("b", tensor(4, 3, &b)).unwrap();
            let m = g.matmul(x, w).unwrap();
            let m = g.gelu(m).unwrap();
            let s = g.softmax_rows(m).unwrap();
            let l = probe(&mut g, s).unwrap();
            let gr = g.backward(l).unwrap();
            [gr.get("a").unwrap().clone(), gr.get("b").unwrap().clone()]
                .map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(grads(), grads());
    }
}

/// Two-layer composite through every op family at once.
#[test]
fn composite_network_passes() {
    let w1: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let w2: Vec<f64> = (0..6).map(|i| ((i * 3 % 4) as f64 - 1.5) * 0.4).collect();
    let b1 = vec![0.1, -0.2, 0.3];
    let e = check(
        |g, v| {
            let x = g.constant(Tensor::from_rows(&[
                [0.5, -1.0],
                [1.5, 0.2],
                [-0.3, 0.8],
                [1.1, -0.6],
            ])?);
            let h = g.matmul(v[0], x)?;
            let h = g.add(h, v[1])?;
            let h = g.gelu(h)?;
            let o = g.matmul(v[2], h)?;
            let s = g.sigmoid(o)?;
            let p = g.softplus(o)?;
            let c = g.concat_rows(&[s, p])?;
            let m = g.mean(c)?;
            let q = g.sum_squares(c)?;
            let t = g.add(m, q)?;
            g.affine(t, 2.0, 1.0)
        },
        vec![
            ("w1", tensor(3, 4, &w1)),
            ("b1", Tensor::column(&b1)),
            ("w2", tensor(2, 3, &w2)),
        ],
    );
    assert!(e < TOL, "{e}");
}

fn exact_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

#[test]
fn gelu_tanh_form_against_exact_cdf() {
    assert_eq!(scalar::gelu(0.0), 0.0);
    // tanh form at 1 is 0.841192; exact x*Phi(x) is 0.841345
    assert!(
        (scalar::gelu(1.0) - 0.841192).abs() < 1e-6,
        "{}",
        scalar::gelu(1.0)
    );
    assert!((exact_gelu(1.0) - 0.841345).abs() < 1e-6);
    let worst = (-600..=600)
        .map(|i| i as f64 / 100.0)
        .map(|x| (scalar::gelu(x) - exact_gelu(x)).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-3, "tanh approximation error {worst}");
}

#[test]
fn graph_gelu_matches_scalar_form() {
    let xs = [-3.0, -0.5, 0.0, 0.25, 2.0];
    let mut g = Graph::new();
    let x = g.constant(Tensor::column(&xs));
    let y = g.gelu(x).unwrap();
    for (i, &v) in xs.iter().enumerate() {
        assert_eq!(g.value(y).get(i, 0), scalar::gelu(v));
    }
}

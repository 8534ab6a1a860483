//! Build a tiny two-layer network on the tape, backpropagate, and compare the
//! result with central finite differences.

use dpc::autodiff::{grad_check, GradCheckOptions, Graph, Tensor};

fn main() -> dpc::Result<()> {
    let x = Tensor::from_rows(&[[0.5, -1.0, 0.3], [1.5, 0.2, -0.7]])?;
    let target = Tensor::from_rows(&[[0.1, 0.0, -0.2]])?;
    let params = vec![
        (
            "w1".to_string(),
            Tensor::from_rows(&[[0.4, -0.3], [0.8, 0.1], [-0.5, 0.6], [0.2, 0.9]])?,
        ),
        ("b1".to_string(), Tensor::column(&[0.1, -0.1, 0.05, 0.0])),
        (
            "w2".to_string(),
            Tensor::from_rows(&[[0.3, -0.7, 0.5, 0.2]])?,
        ),
    ];

    let loss = |g: &mut Graph, v: &[dpc::autodiff::Var]| {
        let xv = g.constant(x.clone());
        let h = g.matmul(v[0], xv)?;
        let h = g.add(h, v[1])?;
        let h = g.gelu(h)?;
        let y = g.matmul(v[2], h)?;
        let t = g.constant(target.clone());
        let e = g.sub(y, t)?;
        g.sum_squares(e)
    };

    let mut g = Graph::new();
    let vars: Vec<_> = params
        .iter()
        .map(|(n, t)| g.param(n, t.clone()))
        .collect::<dpc::Result<_>>()?;
    let l = loss(&mut g, &vars)?;
    println!("loss {:.6}", g.value(l).item()?);
    let grads = g.backward(l)?;
    for (name, grad) in grads.iter() {
        println!("d loss / d {name}: {:?}", grad.data());
    }

    let report = grad_check(loss, &params, &GradCheckOptions::default())?;
    println!(
        "finite differences: {} entries checked, max relative error {:.2e}, passed {}",
        report.params.iter().map(|p| p.checked).sum::<usize>(),
        report.max_rel_error,
        report.passed
    );
    Ok(())
}

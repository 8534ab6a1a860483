//! The state-transition map keeps its spectral radius inside a chosen band
//! whatever its weights are. Compare the power-iteration estimate with the
//! bound, then watch a free response decay.

use dpc::autodiff::Tensor;
use dpc::blocks::{spectral_radius, StableDynamicsMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dpc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:>4} {:>8} {:>8} {:>10}", "n", "lo", "hi", "rho");
    for (n, lo, hi) in [(3, 0.2, 0.9), (9, 0.8, 0.99), (20, 0.0, 0.999999)] {
        let map = StableDynamicsMap::new(n, lo, hi, &mut rng)?;
        let a = map.materialize()?;
        let rho = spectral_radius(&a, 5000, 1e-14)?;
        println!("{n:>4} {lo:>8} {hi:>8} {:>10.6}", rho.value);
    }

    // Saturated weights pin the radius to either end of the band.
    let n = 4;
    let mut a = Tensor::zeros(n, n);
    for damping in [-50.0, 50.0] {
        let map = StableDynamicsMap::from_parts(
            Tensor::filled(n, n, 1e3),
            Tensor::filled(n, 1, damping),
            0.5,
            0.95,
        )?;
        a = map.materialize()?;
        println!(
            "damping {damping:+}: rho {:.6} in [0.5, 0.95]",
            spectral_radius(&a, 5000, 1e-14)?.value
        );
    }

    let mut x = Tensor::filled(n, 1, 1.0);
    for k in 0..=40 {
        if k % 10 == 0 {
            let norm = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            println!("k={k:>2} |x| = {norm:.6}");
        }
        x = a.matmul(&x)?;
    }
    Ok(())
}

//! Donsker-Varadhan estimates on correlated Gaussians against the closed form.
//!
//! `cargo run --release --example dv_gaussian -- [samples] [steps]`

use iblab::mi::{dv_train_estimate, gaussian_mi_closed_form, DvConfig, StatisticNet};
use iblab::tensor::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> iblab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    println!("{:>5} {:>10} {:>10}", "rho", "DV [nat]", "true [nat]");
    for rho in [0.0, 0.5, 0.9] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = Matrix::zeros((n, 1));
        let mut z = Matrix::zeros((n, 1));
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = a;
            z[[i, 0]] = rho * a + (1.0f64 - rho * rho).sqrt() * b;
        }
        let mut net = StatisticNet::new(1, 1, &[64, 64], 0)?;
        let config = DvConfig { steps, ..DvConfig::default() };
        let est = dv_train_estimate(&x, &z, &mut net, &config)?;
        let truth = gaussian_mi_closed_form(rho)?;
        println!("{rho:>5} {:>10.4} {:>10.4}", est.nats(), truth.nats());
    }
    Ok(())
}

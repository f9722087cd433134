//! Optimal IB frontier of the synthetic task via Blahut–Arimoto.
//!
//! `cargo run --example ba_curve -- [points] [out.csv]`

use iblab::ba::{ba_curve, geometric_grid, write_curve_csv, CurveOptions, DiscreteJoint};
use iblab::data::calibrate_synthetic;
use iblab::data::gen_synthetic;

fn main() -> iblab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let points = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let spec = calibrate_synthetic(0.99, 0.5)?;
    let data = gen_synthetic(&spec)?;
    let joint = DiscreteJoint::new(data.exact_joint.clone().expect("synthetic joint is exact"))?;
    println!("MI(X;Y) = {:.4} bits, H(Y) = {:.4} bits", joint.mi_bits(), joint.h_y_bits());

    let grid = geometric_grid(0.5, 200.0, points);
    let start = std::time::Instant::now();
    let curve = ba_curve(&joint, &grid, &CurveOptions::default())?;
    println!("{} points in {:.1?}", curve.len(), start.elapsed());
    println!("{:>9} {:>9} {:>9} {:>5} {:>6}", "beta_ba", "I(X;Z)", "I(Z;Y)", "|Z|", "iters");
    for p in &curve {
        println!(
            "{:9.3} {:9.4} {:9.4} {:5} {:6}{}",
            p.beta_ba,
            p.mi_xz_bits,
            p.mi_zy_bits,
            p.support,
            p.iterations,
            if p.converged { "" } else { " (not converged)" }
        );
    }
    if let Some(path) = args.get(2) {
        write_curve_csv(std::path::Path::new(path), &curve)?;
    }
    Ok(())
}

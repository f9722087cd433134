//! Knee of a saturating curve, and of a sweep's points file if one is given.
//!
//! `cargo run --example knee -- [points.csv]`

use iblab::sweep::{knee_of, phase_report, SweepStore};

fn main() -> iblab::Result<()> {
    let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.0 - (-5.0 * x).exp()).collect();
    let k = knee_of(&xs, &ys)?;
    let analytic = (5f64.ln() - (1.0 - (-5f64).exp()).ln()) / 5.0;
    println!("y = 1 - exp(-5x): knee at x = {:.4} (analytic {analytic:.4})", xs[k.index]);
    let sx: Vec<f64> = xs.iter().map(|x| 10.0 * x).collect();
    println!("x scaled by 10: knee at x = {:.4}", sx[knee_of(&sx, &ys)?.index]);

    if let Some(dir) = std::env::args().nth(1) {
        let points = SweepStore::new(&dir).points()?;
        let r = phase_report(&points)?;
        println!(
            "{} points: beta* = {:.3e} at ({:.3}, {:.3}){}",
            points.len(),
            r.knee.beta_star,
            r.knee.mi_xz_bits,
            r.knee.mi_zy_bits,
            if r.knee.low_confidence { ", low confidence" } else { "" }
        );
        for (beta, d) in &r.knee.profile {
            println!("  {beta:>10.3e} {d:>7.4}");
        }
    }
    Ok(())
}

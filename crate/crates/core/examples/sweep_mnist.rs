//! β sweep of one objective on MNIST, then the knee of the resulting curve.
//!
//! `cargo run --release --example sweep_mnist -- [aib|vib|nib] [epochs] [train_subset] [seeds] [store_dir]`
//!
//! Cells already present in the store are reused, so an interrupted sweep
//! picks up where it stopped.

use iblab::data::{data_dir, load_idx_pair, split};
use iblab::objectives::{ModelSpec, Objective, TrainConfig};
use iblab::sweep::{curve_aggregate, phase_report, sweep, SweepConfig, SweepInputs, SweepStore};

fn main() -> iblab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(String::as_str).unwrap_or("aib");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let subset: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seeds: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);
    let dir = args.get(5).cloned().unwrap_or_else(|| format!("runs/sweep-{kind}"));

    let (train_set, test_set) = load_idx_pair(&data_dir().join("mnist"), "mnist")?;
    let s = split(train_set.len(), (4, 1), 0)?;
    let spec = ModelSpec::mnist();
    let template = match kind {
        "vib" => Objective::Vib { beta: 0.0 },
        "nib" => Objective::Nib { beta: 0.0, noise_sigma: 0.5 },
        _ => Objective::aib(0.0, spec.input_dim()),
    };
    let train_config = TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let config = SweepConfig {
        seeds: (0..seeds).collect(),
        train_subset: Some(subset),
        ..SweepConfig::default()
    };
    let inputs = SweepInputs {
        train: &train_set,
        split: &s,
        test: &test_set,
    };
    let out = sweep(&inputs, &spec, template, &train_config, &config, &SweepStore::new(&dir), false)?;
    println!("{} points ({} reused), {} failures", out.points.len(), out.reused, out.failures.len());

    let curve = curve_aggregate(&out.points);
    println!("{:>10} {:>9} {:>9} {:>7}", "beta", "I(X;Z)", "I(Z;Y)", "acc");
    for m in &curve.means {
        println!("{:>10.3e} {:>9.4} {:>9.4} {:>7.4}", m.beta, m.mi_xz_bits, m.mi_zy_bits, m.clean_accuracy);
    }
    let report = phase_report(&out.points)?;
    println!(
        "knee at beta {:.3e} ({:.3}, {:.3}){}",
        report.knee.beta_star,
        report.knee.mi_xz_bits,
        report.knee.mi_zy_bits,
        if report.knee.low_confidence { " [low confidence]" } else { "" }
    );
    println!(
        "Spearman(beta, I(X;Z)) = {:.3} on per-beta means, {:.3} on all points",
        report.spearman_beta_mi_xz, report.spearman_all_points
    );
    println!("largest I(Z;Y) step below the knee = {:.4} bits", report.max_step_beyond_knee);
    Ok(())
}

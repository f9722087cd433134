//! Trains one bottleneck MLP on MNIST and attacks it.
//!
//! `cargo run --release --example train_mnist -- <normal|aib|vib|nib|dropout> [beta] [epochs] [train_limit] [statistic_lr] [relu|linear]`
//!
//! Expects the IDX files under `$IBLAB_DATA_DIR/mnist` (default `data/mnist`).

use iblab::attacks::{attack_model, AttackConfig};
use iblab::data::{data_dir, load_idx_pair, split};
use iblab::objectives::{train, ModelSpec, Objective, TrainConfig};

fn main() -> iblab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(String::as_str).unwrap_or("normal");
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let limit: Option<usize> = args.get(4).and_then(|s| s.parse().ok()).filter(|&n| n > 0);
    let statistic_lr: Option<f64> = args.get(5).and_then(|s| s.parse().ok());

    let (train_set, test_set) = load_idx_pair(&data_dir().join("mnist"), "mnist")?;
    let mut s = split(train_set.len(), (4, 1), 0)?;
    if let Some(n) = limit {
        s.train.truncate(n);
        s.validation.truncate(n / 4);
    }
    let mut spec = ModelSpec::mnist();
    if args.get(6).map(String::as_str) == Some("linear") {
        spec.bottleneck_activation = iblab::objectives::Activation::Linear;
    }
    let objective = match kind {
        "aib" => Objective::aib(beta, spec.input_dim()),
        "vib" => Objective::Vib { beta },
        "nib" => Objective::Nib { beta, noise_sigma: 0.5 },
        "dropout" => Objective::Dropout { rate: beta },
        _ => Objective::Normal,
    };
    let config = TrainConfig {
        max_epochs: epochs,
        statistic_learning_rate: statistic_lr,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let trained = train(&train_set, &s, &spec, objective, &config)?;
    println!("trained in {:.1?}, best epoch {}", start.elapsed(), trained.best_epoch);

    let attack = AttackConfig {
        deepfool_samples: Some(500),
        ..AttackConfig::default()
    };
    let start = std::time::Instant::now();
    let result = attack_model(&trained.model, &test_set.features, &test_set.labels, &attack)?;
    println!("attacked in {:.1?}", start.elapsed());
    println!("clean {:.4}", result.clean_accuracy);
    for (e, a) in &result.fgs {
        println!("FGS {e:.2}: {a:.4}");
    }
    for (e, a) in &result.tgs {
        println!("TGS {e:.2}: {a:.4}");
    }
    println!(
        "DeepFool mean ‖δ‖₂ {:.4} over {} samples ({} not flipped)",
        result.deepfool_mean_l2, result.deepfool_samples, result.deepfool_flagged
    );
    Ok(())
}

//! FGS, TGS and DeepFool against a trained MNIST model.
//!
//! `cargo run --release --example attacks -- [model.ckpt] [samples]`
//!
//! Without a checkpoint a Normal model is trained for three epochs.

use iblab::attacks::{attack_model, AttackConfig};
use iblab::data::{data_dir, load_idx_pair, split};
use iblab::objectives::{train, ModelSpec, Objective, TrainConfig, TrainedModel};

fn main() -> iblab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let samples: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let (train_set, test_set) = load_idx_pair(&data_dir().join("mnist"), "mnist")?;
    let trained = match args.get(1) {
        Some(p) => TrainedModel::load(std::path::Path::new(p))?,
        None => {
            let s = split(train_set.len(), (4, 1), 0)?;
            let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
            train(&train_set, &s, &ModelSpec::mnist(), Objective::Normal, &cfg)?
        }
    };
    let rows: Vec<usize> = (0..samples.min(test_set.len())).collect();
    let (x, y) = test_set.gather(&rows);
    let config = AttackConfig::default();
    let r = attack_model(&trained.model, &x, &y, &config)?;
    println!("clean accuracy {:.4}", r.clean_accuracy);
    for (eps, acc) in &r.fgs {
        println!("FGS eps {eps:.2}: {acc:.4}");
    }
    for (eps, acc) in &r.tgs {
        println!("TGS eps {eps:.2}: {acc:.4}");
    }
    println!("DeepFool mean |delta|_2 {:.4} over {} samples", r.deepfool_mean_l2, r.deepfool_samples);
    Ok(())
}

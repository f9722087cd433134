//! KDE, binning and DV estimates for one synthetic-task model, plus the
//! exact label information for reference.
//!
//! `cargo run --release --example mi_estimators -- [epochs]`

use iblab::config::DatasetKind;
use iblab::config::{prepare_data, ExperimentConfig, Overrides};
use iblab::mi::{binning_mi, dv_train_estimate, kde_mi_xz, kde_mi_zy, BinTarget, DvConfig, KdeConfig, StatisticNet};
use iblab::objectives::{train, Objective};

fn main() -> iblab::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.kind = DatasetKind::Synthetic;
    cfg.objective = Objective::Vib { beta: 1e-3 };
    cfg.train.learning_rate = 0.003;
    cfg.train.batch_size = 64;
    cfg.train.patience = 100;
    cfg.train.max_epochs = epochs;
    let cfg = cfg.resolve(&Overrides::default())?;
    let data = prepare_data(&cfg)?;
    let trained = train(&data.train, &data.split, &cfg.spec(), cfg.objective, &cfg.train)?;

    let rows: Vec<usize> = (0..data.test.len()).collect();
    let (x, y) = data.test.gather(&rows);
    let z = trained.codes(&x)?;
    let kde = KdeConfig::default();
    println!("I(X;Y) exact       {:.4} bits", data.train.exact_mi_bits().expect("exact"));
    println!("I(X;Z) kde         {:.4} bits", kde_mi_xz(&z, &kde)?.value_bits);
    println!("I(Z;Y) kde         {:.4} bits", kde_mi_zy(&z, &y, &kde)?.value_bits);
    for bins in [10, 30, 100] {
        let xz = binning_mi(&z, BinTarget::Values(&x), bins)?;
        let zy = binning_mi(&z, BinTarget::Labels(&y), bins)?;
        println!("binning, {bins:>3} bins I(X;Z) {:.4}, I(Z;Y) {:.4}", xz.value_bits, zy.value_bits);
    }
    let mut net = StatisticNet::new(x.ncols(), z.ncols(), &[64, 32], 0)?;
    let dv = dv_train_estimate(&x, &z, &mut net, &DvConfig { batch: 256, ..DvConfig::default() })?;
    println!("I(X;Z) dv          {:.4} bits", dv.value_bits);
    Ok(())
}

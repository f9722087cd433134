//! 2-D principal projection of a trained model's bottleneck, written as SVG.
//!
//! `cargo run --release --example pca_bottleneck -- [model.ckpt] [out.svg]`
//!
//! Without a checkpoint a small Normal model is trained on the synthetic task.

use iblab::config::{prepare_data, DatasetKind, ExperimentConfig, Overrides};
use iblab::objectives::{train, TrainedModel};
use iblab::plot::{color, write_svg, Chart, Series, Style};
use iblab::sweep::pca;

fn main() -> iblab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(2).cloned().unwrap_or_else(|| "pca.svg".into());
    let mut cfg = ExperimentConfig::default();
    let trained = match args.get(1) {
        Some(path) => {
            let t = TrainedModel::load(std::path::Path::new(path))?;
            if t.model.spec.input_dim() == 12 {
                cfg.dataset.kind = DatasetKind::Synthetic;
            }
            t
        }
        None => {
            cfg.dataset.kind = DatasetKind::Synthetic;
            cfg.train.learning_rate = 0.003;
            cfg.train.batch_size = 64;
            cfg.train.patience = 100;
            cfg.train.max_epochs = 400;
            let c = cfg.clone().resolve(&Overrides::default())?;
            let d = prepare_data(&c)?;
            train(&d.train, &d.split, &c.spec(), c.objective, &c.train)?
        }
    };
    let cfg = cfg.resolve(&Overrides::default())?;
    let test = prepare_data(&cfg)?.test;
    let rows: Vec<usize> = (0..test.len().min(2000)).collect();
    let (x, y) = test.gather(&rows);
    let (proj, var) = pca(&trained.codes(&x)?)?;
    println!("variance along the two components: {:.4}, {:.4}", var[0], var[1]);
    let mut chart = Chart::new("bottleneck", "PC 1", "PC 2");
    for c in 0..test.n_classes {
        let pts = (0..proj.nrows()).filter(|&i| y[i] == c).map(|i| (proj[[i, 0]], proj[[i, 1]])).collect();
        chart = chart.with(Series::new(format!("class {c}"), pts, Style::Markers, color(c)));
    }
    write_svg(std::path::Path::new(&out), &chart.to_svg())?;
    println!("wrote {out}");
    Ok(())
}

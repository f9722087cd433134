//! Calibrates the 12-bit icosahedron task and prints its exact statistics.
//!
//! `cargo run --example synthetic_dataset -- [target_bits] [balance] [out.csv]`

use iblab::data::{calibrate_synthetic, gen_synthetic, split};
use iblab::data::synthetic::export_csv;

fn main() -> iblab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let target: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.99);
    let balance: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let spec = calibrate_synthetic(target, balance)?;
    println!("sharpness = {:.6}, threshold = {:.6}", spec.sharpness, spec.threshold);
    let data = gen_synthetic(&spec)?;
    let joint = data.exact_joint.as_ref().expect("exact joint");
    println!("{} patterns of {} bits", data.len(), data.dim());
    println!("p(y=1) = {:.4}", joint.column(1).sum());
    println!("I(X;Y) = {:.4} bits", data.exact_mi_bits().expect("exact"));
    let s = split(data.len(), (4, 1), 0)?;
    println!("split: {} train / {} validation", s.train.len(), s.validation.len());
    if let Some(path) = args.get(3) {
        export_csv(&data, &spec, std::path::Path::new(path))?;
        println!("wrote {path}");
    }
    Ok(())
}

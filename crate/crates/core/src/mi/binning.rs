use std::collections::HashMap;

use super::{entropy_bits, MIEstimate, Method};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Second variable of a binned MI estimate.
#[derive(Clone, Copy, Debug)]
pub enum BinTarget<'a> {
    Labels(&'a [usize]),
    Values(&'a Matrix),
}

/// Discrete symbol per row: per-dimension uniform bins over the observed
/// range, rows mapped to dense ids.
fn discretize(a: &Matrix, bins: usize) -> Vec<usize> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = a
        .columns()
        .into_iter()
        .map(|c| {
            let lo = c.fold(f64::INFINITY, |m, &v| m.min(v));
            let hi = c.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            (lo, hi)
        })
        .unzip();
    let mut ids: HashMap<Vec<u32>, usize> = HashMap::new();
    a.rows()
        .into_iter()
        .map(|row| {
            let key: Vec<u32> = row
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let width = hi[j] - lo[j];
                    if width <= 0.0 {
                        0
                    } else {
                        (((v - lo[j]) / width * bins as f64).floor() as u32).min(bins as u32 - 1)
                    }
                })
                .collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

fn symbols(target: BinTarget<'_>, bins: usize) -> Vec<usize> {
    match target {
        BinTarget::Labels(l) => l.to_vec(),
        BinTarget::Values(m) => discretize(m, bins),
    }
}

fn weighted_mi(a: &[usize], b: &[usize], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    let mut pab: HashMap<(usize, usize), f64> = HashMap::new();
    for ((&x, &y), &wi) in a.iter().zip(b).zip(w) {
        let p = wi / total;
        *pa.entry(x).or_default() += p;
        *pb.entry(y).or_default() += p;
        *pab.entry((x, y)).or_default() += p;
    }
    let h = |v: Vec<f64>| entropy_bits(&v);
    h(pa.into_values().collect()) + h(pb.into_values().collect()) - h(pab.into_values().collect())
}

/// Plug-in MI (bits) between binned rows of `a` and `b`.
pub fn binning_mi(a: &Matrix, b: BinTarget<'_>, bins: usize) -> Result<MIEstimate> {
    let w = vec![1.0; a.nrows()];
    binning_mi_weighted(a, b, &w, bins)
}

/// As [`binning_mi`] with per-row probability weights, so an enumerated
/// joint can be passed row by row.
pub fn binning_mi_weighted(
    a: &Matrix,
    b: BinTarget<'_>,
    weights: &[f64],
    bins: usize,
) -> Result<MIEstimate> {
    if bins < 2 {
        return Err(Error::Config(vec![format!("bins must be ≥ 2, got {bins}")]));
    }
    let n = a.nrows();
    let b_len = match b {
        BinTarget::Labels(l) => l.len(),
        BinTarget::Values(m) => m.nrows(),
    };
    if b_len != n || weights.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "binning needs row-aligned inputs: {n} vs {b_len} vs {} weights",
            weights.len()
        )));
    }
    let sa = discretize(a, bins);
    let sb = symbols(b, bins);
    let raw = weighted_mi(&sa, &sb, weights);
    Ok(MIEstimate::new(Method::Binning, raw)
        .with_param("bins", bins)
        .with_param("n", n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mi::label_entropy_bits;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_information_is_entropy() {
        let a = Array2::from_shape_fn((64, 1), |(i, _)| i as f64);
        let est = binning_mi(&a, BinTarget::Values(&a), 64).unwrap();
        assert!((est.value_bits - 6.0).abs() < 1e-12);
    }

    #[test]
    fn labels_identical_to_bins() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let a = Array2::from_shape_fn((400, 1), |(i, _)| labels[i] as f64);
        let est = binning_mi(&a, BinTarget::Labels(&labels), 4).unwrap();
        assert!((est.value_bits - label_entropy_bits(&labels)).abs() < 1e-12);
    }

    #[test]
    fn independent_uniforms_near_zero() {
        // plug-in bias ≈ (bins-1)²/(2 N ln2) ≈ 0.0006 bits here
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let a = Array2::from_shape_simple_fn((n, 1), || rng.random::<f64>());
        let b = Array2::from_shape_simple_fn((n, 1), || rng.random::<f64>());
        let est = binning_mi(&a, BinTarget::Values(&b), 8).unwrap();
        let bias_bound = 3.0 * 49.0 / (2.0 * n as f64 * std::f64::consts::LN_2);
        assert!(est.value_bits < bias_bound, "{}", est.value_bits);
    }

    #[test]
    fn nested_refinement_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let a = Array2::from_shape_simple_fn((n, 2), || rng.random::<f64>());
        let labels: Vec<usize> = a.rows().into_iter().map(|r| usize::from(r[0] + 0.3 * r[1] > 0.6)).collect();
        let mut prev = 0.0;
        for bins in [2, 4, 8, 16, 32, 64] {
            let v = binning_mi(&a, BinTarget::Labels(&labels), bins).unwrap().value_bits;
            assert!(v + 1e-12 >= prev, "{bins}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn rejects_single_bin() {
        let a = Array2::zeros((3, 1));
        assert!(binning_mi(&a, BinTarget::Labels(&[0, 1, 0]), 1).is_err());
    }
}

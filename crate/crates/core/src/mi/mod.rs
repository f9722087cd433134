//! Mutual information estimators and closed-form oracles. Every reported
//! value is in bits.

mod binning;
mod dv;
mod kde;

pub use binning::{binning_mi, binning_mi_weighted, BinTarget};
pub use dv::{dv_bound_node, dv_train_estimate, DvConfig, StatisticNet};
pub use kde::{kde_mi_xz, kde_mi_zy, median_pairwise_distance, Bandwidth, KdeConfig};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sha256_hex, Matrix};

pub const LN_2: f64 = std::f64::consts::LN_2;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * LN_2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kde,
    Binning,
    Dv,
    Exact,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Kde => "kde",
            Method::Binning => "binning",
            Method::Dv => "dv",
            Method::Exact => "exact",
        })
    }
}

/// A reported estimate. `value_bits` is clamped for reporting; the
/// unclamped value is kept in `raw_bits`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub value_bits: f64,
    pub raw_bits: f64,
    pub method: Method,
    pub params: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl MIEstimate {
    pub fn new(method: Method, raw_bits: f64) -> Self {
        Self {
            value_bits: raw_bits.max(0.0),
            raw_bits,
            method,
            params: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn nats(&self) -> f64 {
        bits_to_nats(self.value_bits)
    }

    /// Short digest of the settings, for CSV rows.
    pub fn params_digest(&self) -> String {
        let text = serde_json::to_string(&self.params).expect("string map serializes");
        sha256_hex(text.as_bytes())[..12].to_string()
    }
}

/// Shannon entropy of a probability vector, bits. Zero entries contribute 0.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.log2())
        .sum()
}

/// Empirical label entropy H(Y), bits.
pub fn label_entropy_bits(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    let probs: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    entropy_bits(&probs)
}

/// MI of a joint probability table (rows X, cols Y), bits.
pub fn joint_mi_bits(joint: &Matrix) -> f64 {
    let px = joint.sum_axis(ndarray::Axis(1));
    let py = joint.sum_axis(ndarray::Axis(0));
    let mut acc = 0.0;
    for ((i, j), &p) in joint.indexed_iter() {
        if p > 0.0 {
            acc += p * (p / (px[i] * py[j])).log2();
        }
    }
    acc
}

/// `-½ ln(1-ρ²)` for a bivariate Gaussian with correlation ρ.
pub fn gaussian_mi_closed_form(rho: f64) -> Result<MIEstimate> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("|ρ| must be < 1, got {rho}")));
    }
    let nats = -0.5 * (1.0 - rho * rho).ln();
    Ok(MIEstimate::new(Method::Exact, nats_to_bits(nats)).with_param("rho", rho))
}

/// One row of the estimates CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub dataset: String,
    pub model_id: String,
    pub layer: String,
    pub method: Method,
    pub params_digest: String,
    pub value_bits: f64,
}

impl EstimateRow {
    pub fn new(dataset: &str, model_id: &str, layer: &str, est: &MIEstimate) -> Self {
        Self {
            dataset: dataset.into(),
            model_id: model_id.into(),
            layer: layer.into(),
            method: est.method,
            params_digest: est.params_digest(),
            value_bits: est.value_bits,
        }
    }
}

pub fn write_estimates_csv(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    crate::persist::write_csv(path, crate::persist::ESTIMATES_SCHEMA, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_entropy_reference_values() {
        let ten: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        assert!((label_entropy_bits(&ten) - 10f64.log2()).abs() < 1e-12);
        assert_eq!(label_entropy_bits(&[3, 3, 3]), 0.0);
        let skew = [0, 1, 1, 1];
        // -(¼ log₂ ¼ + ¾ log₂ ¾)
        let expected = -(0.25 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert!((label_entropy_bits(&skew) - expected).abs() < 1e-12);
        assert!((expected - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn gaussian_closed_form() {
        assert_eq!(gaussian_mi_closed_form(0.0).unwrap().value_bits, 0.0);
        let e = gaussian_mi_closed_form(0.9).unwrap();
        assert!((e.nats() - 0.830_366).abs() < 1e-5);
        let e = gaussian_mi_closed_form(0.5).unwrap();
        assert!((e.nats() - 0.143_841).abs() < 1e-5);
        assert!(matches!(gaussian_mi_closed_form(1.0), Err(Error::Domain(_))));
        assert!(matches!(gaussian_mi_closed_form(-1.2), Err(Error::Domain(_))));
    }

    #[test]
    fn joint_mi_of_independent_and_copy() {
        let indep = crate::tensor::matrix(&[&[0.06, 0.14], &[0.24, 0.56]]);
        assert!(joint_mi_bits(&indep).abs() < 1e-12);
        let copy = crate::tensor::matrix(&[&[0.5, 0.0], &[0.0, 0.5]]);
        assert!((joint_mi_bits(&copy) - 1.0).abs() < 1e-12);
    }
}

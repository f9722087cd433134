//! Pairwise Gaussian-mixture (KDE) bounds on the entropy of a representation.
//!
//! For a deterministic encoder the conditional entropy of the kernel-smoothed
//! representation is a constant, so `I(X;Z)` reduces to the mixture entropy
//! `-(1/N) Σ_i log (1/N) Σ_j exp(-‖z_i − z_j‖² / 2σ²)`. `I(Z;Y)` subtracts the
//! label-conditional mixture entropies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{label_entropy_bits, nats_to_bits, MIEstimate, Method};
use crate::error::{Error, Result};
use crate::tensor::{pairwise_entropy_forward, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed { sigma: f64 },
    /// σ = scale × median pairwise distance.
    ScaledMedian { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    pub sigma_floor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::ScaledMedian { scale: 0.1 },
            sigma_floor: 1e-6,
        }
    }
}

impl KdeConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed { sigma },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.bandwidth {
            Bandwidth::Fixed { sigma } => sigma > 0.0,
            Bandwidth::ScaledMedian { scale } => scale > 0.0,
        };
        if ok && self.sigma_floor > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(vec![format!("invalid KDE bandwidth {self:?}")]))
        }
    }

    /// Resolved σ for `z`, plus a warning when the floor kicked in.
    pub fn sigma_for(&self, z: &Matrix) -> (f64, Option<String>) {
        let sigma = match self.bandwidth {
            Bandwidth::Fixed { sigma } => sigma,
            Bandwidth::ScaledMedian { scale } => scale * median_pairwise_distance(z),
        };
        if sigma < self.sigma_floor {
            (
                self.sigma_floor,
                Some(format!(
                    "bandwidth {sigma:.3e} below floor, using {:.1e}",
                    self.sigma_floor
                )),
            )
        } else {
            (sigma, None)
        }
    }
}

/// Median Euclidean distance over all unordered pairs of rows.
pub fn median_pairwise_distance(z: &Matrix) -> f64 {
    let n = z.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let zi = z.row(i);
        for j in (i + 1)..n {
            let s: f64 = zi
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn params(est: MIEstimate, cfg: &KdeConfig, sigma: f64, n: usize) -> MIEstimate {
    let mode = match cfg.bandwidth {
        Bandwidth::Fixed { .. } => "fixed".to_string(),
        Bandwidth::ScaledMedian { scale } => format!("median*{scale}"),
    };
    est.with_param("bandwidth", mode)
        .with_param("sigma", format!("{sigma:.6e}"))
        .with_param("n", n)
}

/// KDE estimate of I(X;Z) from the representation rows `z`.
pub fn kde_mi_xz(z: &Matrix, config: &KdeConfig) -> Result<MIEstimate> {
    config.validate()?;
    if z.nrows() < 2 {
        return Err(Error::Data(format!(
            "KDE needs at least 2 samples, got {}",
            z.nrows()
        )));
    }
    let (sigma, warning) = config.sigma_for(z);
    let (h, _) = pairwise_entropy_forward(z, sigma);
    let mut est = params(MIEstimate::new(Method::Kde, nats_to_bits(h)), config, sigma, z.nrows());
    est.warnings.extend(warning);
    Ok(est)
}

/// KDE estimate of I(Z;Y): `Ĥ(Z) − Σ_c (N_c/N) Ĥ(Z|Y=c)`, clamped to
/// `[0, H(Y)]`.
pub fn kde_mi_zy(z: &Matrix, labels: &[usize], config: &KdeConfig) -> Result<MIEstimate> {
    config.validate()?;
    let n = z.nrows();
    if n < 2 || labels.len() != n {
        return Err(Error::Data(format!(
            "KDE needs ≥ 2 row-aligned samples, got {n} rows and {} labels",
            labels.len()
        )));
    }
    let (sigma, warning) = config.sigma_for(z);
    let (h_all, _) = pairwise_entropy_forward(z, sigma);

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let mut h_cond = 0.0;
    for (class, rows) in &by_class {
        if rows.len() < 2 {
            warnings.push(format!("class {class} has a single sample; contributes 0"));
            continue;
        }
        let zc = z.select(ndarray::Axis(0), rows);
        let (hc, _) = pairwise_entropy_forward(&zc, sigma);
        h_cond += rows.len() as f64 / n as f64 * hc;
    }
    let raw = nats_to_bits(h_all - h_cond);
    let hy = label_entropy_bits(labels);
    let mut est = params(MIEstimate::new(Method::Kde, raw), config, sigma, n);
    est.value_bits = raw.clamp(0.0, hy);
    est.warnings = warnings;
    Ok(est)
}

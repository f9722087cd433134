//! The 12-bit rotation-invariant classification task.
//!
//! Each input is a binary 12-vector marking occupied vertices of a regular
//! icosahedron. The label depends on the pattern only through
//! `g(x) = Σ_{i<j} x_i x_j (u_i·u_j)`, which is invariant under the
//! icosahedral rotation group, via `p(y=1|x) = σ(γ (g(x) − θ))`. Every one of
//! the 4096 patterns is enumerated, so the joint `p(x, y)` is exact.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::mi::entropy_bits;

pub const N_VERTICES: usize = 12;
pub const N_PATTERNS: usize = 1 << N_VERTICES;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Sharpness γ of the sigmoid link.
    pub sharpness: f64,
    /// Threshold θ on the invariant.
    pub threshold: f64,
    /// Seed for the sampled labels.
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0) || !self.sharpness.is_finite() {
            return Err(Error::Config(vec![format!(
                "synthetic sharpness must be positive, got {}",
                self.sharpness
            )]));
        }
        Ok(())
    }
}

/// Unit vectors of the 12 icosahedron vertices `(0, ±1, ±φ)` and cyclic
/// permutations.
pub fn icosahedron_vertices() -> [[f64; 3]; N_VERTICES] {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let norm = (1.0 + phi * phi).sqrt();
    let mut out = [[0.0; 3]; N_VERTICES];
    let mut k = 0;
    for a in [1.0, -1.0] {
        for b in [1.0, -1.0] {
            for v in [[0.0, a, b * phi], [a, b * phi, 0.0], [b * phi, 0.0, a]] {
                out[k] = [v[0] / norm, v[1] / norm, v[2] / norm];
                k += 1;
            }
        }
    }
    out
}

fn gram() -> [[f64; N_VERTICES]; N_VERTICES] {
    let u = icosahedron_vertices();
    let mut g = [[0.0; N_VERTICES]; N_VERTICES];
    for i in 0..N_VERTICES {
        for j in 0..N_VERTICES {
            g[i][j] = (0..3).map(|c| u[i][c] * u[j][c]).sum();
        }
    }
    g
}

/// Bits of `pattern` as 0/1 features, vertex 0 in the most significant bit.
pub fn pattern_bits(pattern: usize) -> [u8; N_VERTICES] {
    let mut bits = [0u8; N_VERTICES];
    for (i, b) in bits.iter_mut().enumerate() {
        *b = ((pattern >> (N_VERTICES - 1 - i)) & 1) as u8;
    }
    bits
}

/// The rotation invariant `Σ_{i<j} x_i x_j (u_i·u_j)`.
pub fn invariant(bits: &[u8; N_VERTICES]) -> f64 {
    let g = gram();
    let mut acc = 0.0;
    for i in 0..N_VERTICES {
        if bits[i] == 0 {
            continue;
        }
        for j in (i + 1)..N_VERTICES {
            if bits[j] == 1 {
                acc += g[i][j];
            }
        }
    }
    acc
}

/// `g(x)` for all 4096 patterns in pattern order.
pub fn all_invariants() -> Vec<f64> {
    (0..N_PATTERNS).map(|p| invariant(&pattern_bits(p))).collect()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `p(y=1|x)` for every pattern.
pub fn label_probabilities(spec: &SyntheticSpec) -> Vec<f64> {
    all_invariants()
        .into_iter()
        .map(|g| sigmoid(spec.sharpness * (g - spec.threshold)))
        .collect()
}

/// Exact `(p(y=1), MI(X;Y) bits)` under the uniform pattern prior.
pub fn exact_statistics(p1: &[f64]) -> (f64, f64) {
    let n = p1.len() as f64;
    let marginal = p1.iter().sum::<f64>() / n;
    let conditional = p1.iter().map(|&p| entropy_bits(&[p, 1.0 - p])).sum::<f64>() / n;
    (marginal, entropy_bits(&[marginal, 1.0 - marginal]) - conditional)
}

/// All 4096 patterns with exact joint and one sampled label per pattern.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let p1 = label_probabilities(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let features = Array2::from_shape_fn((N_PATTERNS, N_VERTICES), |(p, i)| {
        f64::from(pattern_bits(p)[i])
    });
    let labels: Vec<usize> = p1
        .iter()
        .map(|&p| usize::from(rng.random::<f64>() < p))
        .collect();
    let prior = 1.0 / N_PATTERNS as f64;
    let joint = Array2::from_shape_fn((N_PATTERNS, 2), |(p, y)| {
        prior * if y == 1 { p1[p] } else { 1.0 - p1[p] }
    });
    LabeledDataset::new("synthetic", features, labels, 2, Some(joint))
}

/// Chooses θ in the gap between adjacent invariant levels whose deterministic
/// label marginal is closest to `target_balance`, then bisects γ until the
/// exact MI(X;Y) is within 0.02 bits of `target_mi_bits`.
pub fn calibrate_synthetic(target_mi_bits: f64, target_balance: f64) -> Result<SyntheticSpec> {
    if !(target_mi_bits > 0.0 && target_mi_bits <= 1.0) {
        return Err(Error::Config(vec![format!(
            "target MI must lie in (0, 1] bits, got {target_mi_bits}"
        )]));
    }
    if !(target_balance > 0.0 && target_balance < 1.0) {
        return Err(Error::Config(vec![format!(
            "target balance must lie in (0, 1), got {target_balance}"
        )]));
    }
    let g = all_invariants();
    let mut levels: Vec<f64> = g.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let n = g.len() as f64;
    let threshold = levels
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .min_by(|&a, &b| {
            let bal = |t: f64| (g.iter().filter(|&&v| v > t).count() as f64 / n - target_balance).abs();
            bal(a).total_cmp(&bal(b))
        })
        .expect("more than one invariant level");

    let mi_at = |gamma: f64| {
        let spec = SyntheticSpec {
            sharpness: gamma,
            threshold,
            seed: 0,
        };
        exact_statistics(&label_probabilities(&spec)).1
    };

    // MI(X;Y) increases with γ towards H(Y) of the deterministic rule
    let (mut lo, mut hi) = (1e-6, 1e4);
    let ceiling = mi_at(hi);
    if ceiling < target_mi_bits - 0.02 {
        return Err(Error::Calibration {
            reason: format!("target {target_mi_bits} bits exceeds the deterministic-rule ceiling"),
            nearest_bits: ceiling,
        });
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mi_at(mid) < target_mi_bits {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    let sharpness = hi;
    let achieved = mi_at(sharpness);
    if (achieved - target_mi_bits).abs() > 0.02 {
        return Err(Error::Calibration {
            reason: format!("could not reach {target_mi_bits} bits"),
            nearest_bits: achieved,
        });
    }
    Ok(SyntheticSpec {
        sharpness,
        threshold,
        seed: 0,
    })
}

/// Writes `x0..x11, p_y1, label` rows.
pub fn export_csv(dataset: &LabeledDataset, spec: &SyntheticSpec, path: &std::path::Path) -> Result<()> {
    let p1 = label_probabilities(spec);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..N_VERTICES).map(|i| format!("x{i}")).collect();
    header.push("p_y1".into());
    header.push("label".into());
    w.write_record(&header)?;
    for (row, (&p, &y)) in dataset.features.rows().into_iter().zip(p1.iter().zip(&dataset.labels)) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{}", *v as u8)).collect();
        rec.push(format!("{p:.17e}"));
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rotations of the icosahedron map vertices to vertices; recover the
    /// induced permutation by matching coordinates.
    fn axis_rotation(k: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let (s, c) = angle.sin_cos();
        let mut r = [[0.0; 3]; 3];
        let cross = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        for a in 0..3 {
            for b in 0..3 {
                let id = if a == b { 1.0 } else { 0.0 };
                r[a][b] = c * id + s * cross[a][b] + (1.0 - c) * k[a] * k[b];
            }
        }
        r
    }

    fn permutation_of(rot: [[f64; 3]; 3]) -> [usize; N_VERTICES] {
        let u = icosahedron_vertices();
        let mut perm = [0; N_VERTICES];
        for (i, v) in u.iter().enumerate() {
            let r: Vec<f64> = (0..3).map(|a| (0..3).map(|b| rot[a][b] * v[b]).sum()).collect();
            perm[i] = u
                .iter()
                .position(|w| (0..3).all(|c| (w[c] - r[c]).abs() < 1e-9))
                .expect("rotation must map the icosahedron onto itself");
        }
        perm
    }

    #[test]
    fn vertices_are_unit_and_uniform() {
        let u = icosahedron_vertices();
        for v in &u {
            let n: f64 = v.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // every vertex has five nearest neighbours at dot product 1/√5
        for i in 0..N_VERTICES {
            let near = (0..N_VERTICES)
                .filter(|&j| j != i && ((0..3).map(|c| u[i][c] * u[j][c]).sum::<f64>() - 5f64.sqrt().recip()).abs() < 1e-9)
                .count();
            assert_eq!(near, 5);
        }
    }

    #[test]
    fn invariant_respects_symmetry_group() {
        // 2-fold, 3-fold (cyclic axes), 5-fold about a vertex
        let rotations = [
            [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            axis_rotation(icosahedron_vertices()[0], 2.0 * std::f64::consts::PI / 5.0),
            [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rot in rotations {
            let perm = permutation_of(rot);
            for _ in 0..200 {
                let p = rng.random_range(0..N_PATTERNS);
                let bits = pattern_bits(p);
                let mut moved = [0u8; N_VERTICES];
                for i in 0..N_VERTICES {
                    moved[perm[i]] = bits[i];
                }
                assert!((invariant(&bits) - invariant(&moved)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_enumerates_all_patterns() {
        let spec = SyntheticSpec {
            sharpness: 10.0,
            threshold: -1.5,
            seed: 1,
        };
        let ds = gen_synthetic(&spec).unwrap();
        assert_eq!(ds.len(), 4096);
        let mut seen = std::collections::HashSet::new();
        for row in ds.features.rows() {
            seen.insert(row.iter().map(|&v| v as u8).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 4096);
        let joint = ds.exact_joint.as_ref().unwrap();
        assert!((joint.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibrated_generator_hits_published_statistics() {
        let spec = calibrate_synthetic(0.99, 0.5).unwrap();
        let (balance, mi) = exact_statistics(&label_probabilities(&spec));
        assert!((0.45..=0.55).contains(&balance), "{balance}");
        assert!((0.95..=1.0).contains(&mi), "{mi}");
        assert!((mi - 0.99).abs() <= 0.02);
    }

    #[test]
    fn sharpness_limits() {
        let flat = SyntheticSpec {
            sharpness: 1e-12,
            threshold: -1.5,
            seed: 0,
        };
        assert!(exact_statistics(&label_probabilities(&flat)).1.abs() < 1e-9);
        let sharp = SyntheticSpec {
            sharpness: 1e6,
            threshold: -1.5,
            seed: 0,
        };
        let (balance, mi) = exact_statistics(&label_probabilities(&sharp));
        let h = entropy_bits(&[balance, 1.0 - balance]);
        assert!((mi - h).abs() < 1e-9 && mi <= 1.0);
    }

    #[test]
    fn unreachable_target_reports_nearest() {
        // a very lopsided split caps H(Y) far below 1 bit
        match calibrate_synthetic(1.0, 0.001) {
            Err(Error::Calibration { nearest_bits, .. }) => assert!(nearest_bits < 0.5),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn labels_depend_only_on_invariant_levels() {
        let g = all_invariants();
        let mut levels = g.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        // the 4096 patterns fall into a few dozen levels
        assert!(levels.len() < 64);
    }
}

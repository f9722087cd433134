//! Datasets: the enumerable synthetic task, IDX ingestion, splits and
//! minibatching.

mod idx;
pub mod synthetic;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::{calibrate_synthetic, gen_synthetic, SyntheticSpec};

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Features in `[0,1]`, integer labels, optional exact joint `p(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub exact_joint: Option<Matrix>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        exact_joint: Option<Matrix>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        if features.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data("feature values must lie in [0, 1]".into()));
        }
        if let Some(joint) = &exact_joint {
            if joint.iter().any(|&p| p < 0.0) || (joint.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::Data(
                    "exact joint must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            n_classes,
            exact_joint,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Feature rows and labels at `indices`.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let x = self.features.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// A new dataset holding only `indices` (drops the exact joint).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (features, labels) = self.gather(indices);
        Self {
            name: self.name.clone(),
            features,
            labels,
            n_classes: self.n_classes,
            exact_joint: None,
        }
    }

    /// Exact MI(X;Y) in bits from the joint, if enumerable.
    pub fn exact_mi_bits(&self) -> Option<f64> {
        self.exact_joint.as_ref().map(crate::mi::joint_mi_bits)
    }
}

/// Train / validation (/ test) index lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Train:validation ratio, e.g. `(4, 1)`.
    pub ratio: (usize, usize),
    pub seed: u64,
}

/// Seeded shuffle of `0..n`, then the first `ratio.0/(ratio.0+ratio.1)` go to
/// training and the rest to validation.
pub fn split(n: usize, ratio: (usize, usize), seed: u64) -> Result<SplitIndices> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Config(vec![format!(
            "split ratio parts must be positive, got {}:{}",
            ratio.0, ratio.1
        )]));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * ratio.0 / (ratio.0 + ratio.1);
    let validation = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        validation,
        test: Vec::new(),
        ratio,
        seed,
    })
}

fn epoch_rng(seed: u64, epoch: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(0x9E37_79B9).wrapping_add(epoch));
    rng
}

/// Seeded per-epoch minibatch order over `indices`. The last batch may be
/// short.
pub fn minibatches(
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config(vec!["batch size must be at least 1".into()]));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut epoch_rng(seed, epoch, 0));
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// A second, independent batch sequence for marginal sampling; batch `i` has
/// the same length as `first[i]`.
pub fn partner_batches(
    indices: &[usize],
    first: &[Vec<usize>],
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut rng = epoch_rng(seed, epoch, 1);
    let mut order = indices.to_vec();
    order.shuffle(&mut rng);
    let mut pos = 0;
    first
        .iter()
        .map(|b| {
            if pos + b.len() > order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let out = order[pos..pos + b.len()].to_vec();
            pos += b.len();
            out
        })
        .collect()
}

/// Root directory for dataset files: `$IBLAB_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("IBLAB_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// MNIST-format train/test pair found under `dir` with the standard names.
pub fn load_idx_pair(dir: &std::path::Path, name: &str) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        name,
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        name,
    )?;
    Ok((train, test))
}

/// Array2 convenience used by tests.
pub fn one_hot(labels: &[usize], k: usize) -> Matrix {
    let mut m = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        m[[i, l]] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_to_one_split_sizes() {
        let s = split(60000, (4, 1), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (48000, 12000));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let a = split(1003, (4, 1), 9).unwrap();
        let b = split(1003, (4, 1), 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1003).collect::<Vec<_>>());
        assert_ne!(a, split(1003, (4, 1), 10).unwrap());
    }

    #[test]
    fn full_batch_and_reproducible_order() {
        let idx: Vec<usize> = (0..50).collect();
        let one = minibatches(&idx, 50, 3, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 50);
        assert_eq!(minibatches(&idx, 7, 3, 2).unwrap(), minibatches(&idx, 7, 3, 2).unwrap());
        assert_ne!(minibatches(&idx, 7, 3, 2).unwrap(), minibatches(&idx, 7, 3, 3).unwrap());
        assert!(minibatches(&idx, 0, 3, 0).is_err());
    }

    #[test]
    fn partner_batches_differ_from_first() {
        // with m = 256 out of 60000 the chance of identical batches is nil
        let idx: Vec<usize> = (0..60000).collect();
        let first = minibatches(&idx, 256, 5, 0).unwrap();
        let second = partner_batches(&idx, &first, 5, 0);
        assert_eq!(first.len(), second.len());
        let identical = first.iter().zip(&second).filter(|(a, b)| a == b).count();
        assert_eq!(identical, 0);
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.len(), b.len());
        }
    }

    #[test]
    fn dataset_rejects_bad_inputs() {
        let x = Array2::from_elem((2, 3), 0.5);
        assert!(LabeledDataset::new("t", x.clone(), vec![0, 3], 3, None).is_err());
        assert!(LabeledDataset::new("t", x.clone(), vec![0], 3, None).is_err());
        assert!(LabeledDataset::new("t", x.mapv(|_| f64::NAN), vec![0, 1], 3, None).is_err());
    }
}

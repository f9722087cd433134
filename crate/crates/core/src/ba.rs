//! Self-consistent Blahut–Arimoto iteration for the discrete IB problem.
//!
//! The solver minimizes `I(X;Z) − β_BA · I(Z;Y)` over encoders `p(z|x)` with
//! `|Z|` states by alternating
//!
//! ```text
//! p(z|x)  ∝ p(z) · exp(−β_BA · KL(p(y|x) ‖ p(y|z)))
//! p(z)    = Σ_x p(x) p(z|x)
//! p(y|z)  = Σ_x p(y|x) p(x|z)
//! ```
//!
//! `β_BA` weights prediction; the Lagrangian multiplier on compression used
//! elsewhere in the crate is its reciprocal, `β = 1/β_BA`.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::{entropy_bits, nats_to_bits};
use crate::tensor::Matrix;

const SMOOTHING_FLOOR: f64 = 1e-12;

/// A validated joint distribution table `p(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    p_xy: Matrix,
    p_x: Array1<f64>,
    p_y_given_x: Matrix,
}

impl DiscreteJoint {
    /// Rows with zero mass are dropped.
    pub fn new(p_xy: Matrix) -> Result<Self> {
        if p_xy.is_empty() {
            return Err(Error::Data("empty joint table".into()));
        }
        if p_xy.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Data("joint table has negative or non-finite entries".into()));
        }
        let total = p_xy.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("joint table sums to {total}, not 1")));
        }
        let keep: Vec<usize> = p_xy
            .sum_axis(Axis(1))
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, _)| i)
            .collect();
        let p_xy = p_xy.select(Axis(0), &keep);
        let p_x = p_xy.sum_axis(Axis(1));
        let p_y_given_x = &p_xy / &p_x.view().insert_axis(Axis(1));
        Ok(Self {
            p_xy,
            p_x,
            p_y_given_x,
        })
    }

    pub fn n_x(&self) -> usize {
        self.p_xy.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.p_xy.ncols()
    }

    pub fn table(&self) -> &Matrix {
        &self.p_xy
    }

    pub fn p_y(&self) -> Array1<f64> {
        self.p_xy.sum_axis(Axis(0))
    }

    pub fn mi_bits(&self) -> f64 {
        crate::mi::joint_mi_bits(&self.p_xy)
    }

    pub fn h_y_bits(&self) -> f64 {
        entropy_bits(self.p_y().as_slice().expect("contiguous"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BAConfig {
    pub cardinality: usize,
    pub beta_ba: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for BAConfig {
    fn default() -> Self {
        Self {
            cardinality: 10,
            beta_ba: 1.0,
            tol: 1e-9,
            max_iter: 5000,
            seed: 0,
        }
    }
}

impl BAConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.cardinality == 0 {
            errs.push("cardinality must be ≥ 1".to_string());
        }
        if !(self.beta_ba > 0.0) || !self.beta_ba.is_finite() {
            errs.push(format!("β_BA must be positive and finite, got {}", self.beta_ba));
        }
        if !(self.tol > 0.0) {
            errs.push("tolerance must be positive".into());
        }
        if self.max_iter == 0 {
            errs.push("max_iter must be ≥ 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BAEncoder {
    pub p_z_given_x: Matrix,
    pub p_z: Array1<f64>,
    pub p_y_given_z: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BASolution {
    pub encoder: BAEncoder,
    pub mi_xz_bits: f64,
    pub mi_zy_bits: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `I(X;Z) − β_BA·I(Z;Y)` in nats at every self-consistent iterate.
    pub functional: Vec<f64>,
}

/// `Σ p log(p/q)` in nats. Zero entries of `p` contribute nothing.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Marginal and decoder implied by an encoder. The returned decoder is the
/// exact (unsmoothed) one; empty clusters get the label marginal.
fn marginals(joint: &DiscreteJoint, enc: &Matrix) -> (Array1<f64>, Matrix) {
    let weighted = enc * &joint.p_x.view().insert_axis(Axis(1)); // p(x,z)
    let p_z = weighted.sum_axis(Axis(0));
    let mut p_y_given_z = weighted.t().dot(&joint.p_y_given_x); // p(z,y)
    let p_y = joint.p_y();
    for (mut row, &pz) in p_y_given_z.rows_mut().into_iter().zip(p_z.iter()) {
        if pz > 0.0 {
            row /= pz;
        } else {
            row.assign(&p_y);
        }
    }
    (p_z, p_y_given_z)
}

/// `(I(X;Z), I(Z;Y))` in nats from the tables.
fn mutual_informations(joint: &DiscreteJoint, enc: &Matrix, p_z: &Array1<f64>, p_y_given_z: &Matrix) -> (f64, f64) {
    let mut ixz = 0.0;
    for (x, row) in enc.rows().into_iter().enumerate() {
        for (z, &q) in row.iter().enumerate() {
            if q > 0.0 && p_z[z] > 0.0 {
                ixz += joint.p_x[x] * q * (q / p_z[z]).ln();
            }
        }
    }
    let p_y = joint.p_y();
    let mut izy = 0.0;
    for (z, row) in p_y_given_z.rows().into_iter().enumerate() {
        if p_z[z] > 0.0 {
            izy += p_z[z] * kl_discrete(row.as_slice().expect("contiguous"), p_y.as_slice().expect("contiguous"));
        }
    }
    (ixz.max(0.0), izy.max(0.0))
}

fn smoothed(p_y_given_z: &Matrix) -> Matrix {
    let mut q = p_y_given_z.mapv(|v| v.max(SMOOTHING_FLOOR));
    for mut row in q.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    q
}

/// Softmax of small seeded Gaussian noise per row.
pub fn random_encoder(n_x: usize, cardinality: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Array2::from_shape_simple_fn((n_x, cardinality), || {
        let e: f64 = StandardNormal.sample(&mut rng);
        (0.1 * e).exp()
    });
    for mut row in enc.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    enc
}

/// Runs the iteration from `init` (or a seeded random encoder).
pub fn ba_solve_from(joint: &DiscreteJoint, config: &BAConfig, init: Option<&Matrix>) -> Result<BASolution> {
    config.validate()?;
    let nz = config.cardinality;
    let mut enc = match init {
        Some(m) if m.dim() == (joint.n_x(), nz) => m.clone(),
        Some(m) => {
            return Err(Error::Shape(format!(
                "warm start encoder {:?} does not match ({}, {nz})",
                m.dim(),
                joint.n_x()
            )))
        }
        None => random_encoder(joint.n_x(), nz, config.seed),
    };
    let beta = config.beta_ba;
    let (mut p_z, mut p_y_given_z) = marginals(joint, &enc);
    let mut functional = Vec::new();
    let (ixz, izy) = mutual_informations(joint, &enc, &p_z, &p_y_given_z);
    functional.push(ixz - beta * izy);

    let mut converged = false;
    let mut iterations = 0;
    let mut logits = Array2::zeros((joint.n_x(), nz));
    while iterations < config.max_iter {
        iterations += 1;
        let q = smoothed(&p_y_given_z);
        let log_pz = p_z.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        for (x, mut row) in logits.rows_mut().into_iter().enumerate() {
            let pyx = joint.p_y_given_x.row(x);
            for z in 0..nz {
                let d = kl_discrete(pyx.as_slice().expect("contiguous"), q.row(z).as_slice().expect("contiguous"));
                row[z] = log_pz[z] - beta * d;
            }
        }
        let mut change: f64 = 0.0;
        for (mut new_row, old_row) in logits.rows_mut().into_iter().zip(enc.rows_mut()) {
            let max = new_row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            new_row.mapv_inplace(|v| (v - max).exp());
            let s = new_row.sum();
            new_row /= s;
            for (n, o) in new_row.iter().zip(old_row) {
                change = change.max((n - *o).abs());
                *o = *n;
            }
        }
        let m = marginals(joint, &enc);
        p_z = m.0;
        p_y_given_z = m.1;
        let (ixz, izy) = mutual_informations(joint, &enc, &p_z, &p_y_given_z);
        functional.push(ixz - beta * izy);
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let (ixz, izy) = mutual_informations(joint, &enc, &p_z, &p_y_given_z);
    Ok(BASolution {
        encoder: BAEncoder {
            p_z_given_x: enc,
            p_z,
            p_y_given_z,
        },
        mi_xz_bits: nats_to_bits(ixz),
        mi_zy_bits: nats_to_bits(izy),
        converged,
        iterations,
        functional,
    })
}

pub fn ba_solve(joint: &DiscreteJoint, config: &BAConfig) -> Result<BASolution> {
    ba_solve_from(joint, config, None)
}

/// One row of the reference curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BACurvePoint {
    pub beta_ba: f64,
    /// `1/β_BA`, the multiplier on compression in `I(Z;Y) − β·I(X;Z)`.
    pub beta_lagrangian: f64,
    pub mi_xz_bits: f64,
    pub mi_zy_bits: f64,
    pub converged: bool,
    pub iterations: usize,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub cardinality: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub warm_start: bool,
    /// Weight of seeded noise mixed into a warm start so collapsed or empty
    /// clusters can split again.
    pub restart_noise: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            cardinality: 10,
            tol: 1e-9,
            max_iter: 5000,
            seed: 0,
            warm_start: true,
            restart_noise: 1e-3,
        }
    }
}

/// Number of distinct decoders `p(y|z)` among states with mass above 1e-6.
/// States sharing a decoder are one cluster: merging them leaves `I(Z;Y)`
/// unchanged.
pub fn effective_support(encoder: &BAEncoder) -> usize {
    let mut reps: Vec<ndarray::ArrayView1<f64>> = Vec::new();
    for (z, row) in encoder.p_y_given_z.rows().into_iter().enumerate() {
        if encoder.p_z[z] <= 1e-6 {
            continue;
        }
        if !reps.iter().any(|r| r.iter().zip(row.iter()).all(|(a, b)| (a - b).abs() < 1e-3)) {
            reps.push(row);
        }
    }
    reps.len()
}

/// `exp(lo..hi)` geometric grid with `n` points.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Solves along an ascending `β_BA` grid, warm-starting each point from the
/// previous encoder unless disabled.
pub fn ba_curve(joint: &DiscreteJoint, grid: &[f64], opts: &CurveOptions) -> Result<Vec<BACurvePoint>> {
    if grid.is_empty() {
        return Err(Error::Config(vec!["β_BA grid is empty".into()]));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(vec!["β_BA grid must be strictly ascending".into()]));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut prev: Option<Matrix> = None;
    for (i, &beta_ba) in grid.iter().enumerate() {
        let config = BAConfig {
            cardinality: opts.cardinality,
            beta_ba,
            tol: opts.tol,
            max_iter: opts.max_iter,
            seed: opts.seed.wrapping_add(i as u64),
        };
        let init = match (&prev, opts.warm_start) {
            (Some(p), true) => {
                let noise = random_encoder(joint.n_x(), opts.cardinality, config.seed);
                Some(p * (1.0 - opts.restart_noise) + noise * opts.restart_noise)
            }
            _ => None,
        };
        let sol = ba_solve_from(joint, &config, init.as_ref())?;
        if !sol.converged {
            log::warn!("β_BA = {beta_ba:.4}: not converged after {} iterations", sol.iterations);
        }
        out.push(BACurvePoint {
            beta_ba,
            beta_lagrangian: 1.0 / beta_ba,
            mi_xz_bits: sol.mi_xz_bits,
            mi_zy_bits: sol.mi_zy_bits,
            converged: sol.converged,
            iterations: sol.iterations,
            support: effective_support(&sol.encoder),
        });
        prev = Some(sol.encoder.p_z_given_x);
    }
    Ok(out)
}

pub fn write_curve_csv(path: &std::path::Path, points: &[BACurvePoint]) -> Result<()> {
    crate::persist::write_csv(path, crate::persist::BA_CURVE_SCHEMA, points)
}

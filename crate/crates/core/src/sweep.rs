//! β sweeps, information-plane curves, knee selection and PCA projections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ba::geometric_grid;
use crate::data::{LabeledDataset, SplitIndices};
use crate::error::{Error, Result};
use crate::mi::{kde_mi_xz, kde_mi_zy, KdeConfig};
use crate::objectives::{evaluate, train, ModelSpec, Objective, TrainConfig, TrainedModel};
use crate::persist::{append_csv, read_csv, write_csv, SWEEP_SCHEMA};
use crate::tensor::{sha256_hex, Matrix};

/// One trained model placed in the information plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IBCurvePoint {
    pub model_id: String,
    pub objective: String,
    pub beta: f64,
    pub seed: u64,
    pub mi_xz_bits: f64,
    pub mi_zy_bits: f64,
    pub clean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Ascending, positive.
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Size of the fixed held-out subset used for the MI estimates.
    pub eval_samples: usize,
    pub eval_seed: u64,
    pub kde: KdeConfig,
    /// Train each cell on only this many training rows (seeded subset).
    pub train_subset: Option<usize>,
    /// Epoch cap per cell; the training section's cap when unset.
    pub max_epochs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: default_grid(),
            seeds: vec![0, 1, 2],
            eval_samples: 2000,
            eval_seed: 0,
            kde: KdeConfig::default(),
            train_subset: None,
            max_epochs: None,
        }
    }
}

/// 16 geometric points over four decades ending at 2.
pub fn default_grid() -> Vec<f64> {
    geometric_grid(2e-4, 2.0, 16)
}

impl SweepConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.betas.is_empty() {
            errs.push("sweep grid is empty".into());
        }
        if self.betas.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            errs.push("sweep β values must be positive and finite".into());
        }
        if self.betas.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("sweep grid must be strictly ascending".into());
        }
        if self.seeds.is_empty() {
            errs.push("sweep needs at least one seed".into());
        }
        if self.eval_samples < 2 {
            errs.push(format!("eval_samples must be ≥ 2, got {}", self.eval_samples));
        }
        if self.train_subset == Some(0) {
            errs.push("train_subset must be positive".into());
        }
        if self.max_epochs == Some(0) {
            errs.push("sweep max_epochs must be positive".into());
        }
        if let Err(Error::Config(e)) = self.kde.validate() {
            errs.extend(e);
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Training data, its split, and the held-out set used for evaluation.
pub struct SweepInputs<'a> {
    pub train: &'a LabeledDataset,
    pub split: &'a SplitIndices,
    pub test: &'a LabeledDataset,
}

pub fn model_id(objective: &Objective, beta: f64, seed: u64) -> String {
    format!("{}-b{beta:.4e}-s{seed}", objective.name())
}

/// Rows of `test` used for MI estimation: a seeded subset of fixed size.
pub fn eval_subset(test: &LabeledDataset, samples: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..test.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(samples.min(test.len()));
    idx.sort_unstable();
    idx
}

/// KDE estimates of both coordinates for a trained model on `rows` of
/// `data`.
pub fn place_model(trained: &TrainedModel, data: &LabeledDataset, rows: &[usize], kde: &KdeConfig) -> Result<(f64, f64)> {
    let (x, y) = data.gather(rows);
    let z = trained.codes(&x)?;
    let xz = kde_mi_xz(&z, kde)?;
    let zy = kde_mi_zy(&z, &y, kde)?;
    for w in xz.warnings.iter().chain(&zy.warnings) {
        log::warn!("{w}");
    }
    Ok((xz.value_bits, zy.value_bits))
}

/// Trains and places one (β, seed) cell.
pub fn run_cell(
    inputs: &SweepInputs<'_>,
    spec: &ModelSpec,
    template: Objective,
    train_config: &TrainConfig,
    config: &SweepConfig,
    beta: f64,
    seed: u64,
) -> Result<(IBCurvePoint, TrainedModel)> {
    let objective = template.with_strength(beta);
    let cfg = TrainConfig {
        seed,
        max_epochs: config.max_epochs.unwrap_or(train_config.max_epochs),
        ..*train_config
    };
    let split = match config.train_subset {
        Some(n) if n < inputs.split.train.len() => {
            let mut s = inputs.split.clone();
            let mut rows = s.train.clone();
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 5)));
            rows.truncate(n);
            s.train = rows;
            s
        }
        _ => inputs.split.clone(),
    };
    let trained = train(inputs.train, &split, spec, objective, &cfg)?;
    let all: Vec<usize> = (0..inputs.test.len()).collect();
    let clean_accuracy = evaluate(&trained.model, inputs.test, &all)?;
    let rows = eval_subset(inputs.test, config.eval_samples, config.eval_seed);
    let (mi_xz_bits, mi_zy_bits) = place_model(&trained, inputs.test, &rows, &config.kde)?;
    let point = IBCurvePoint {
        model_id: model_id(&objective, beta, seed),
        objective: objective.name().into(),
        beta,
        seed,
        mi_xz_bits,
        mi_zy_bits,
        clean_accuracy,
    };
    Ok((point, trained))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model_id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema: String,
    pub config_digest: String,
    pub dataset: String,
    pub objective: String,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub completed: usize,
    pub failures: Vec<CellFailure>,
}

pub const MANIFEST_SCHEMA: &str = "iblab.sweep-manifest.v1";

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Directory holding `points.csv`, `manifest.json` and one checkpoint per
/// cell under `models/`.
#[derive(Clone, Debug)]
pub struct SweepStore {
    pub dir: PathBuf,
}

impl SweepStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn points_path(&self) -> PathBuf {
        self.dir.join("points.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn checkpoint_path(&self, model_id: &str) -> PathBuf {
        self.dir.join("models").join(format!("{model_id}.ckpt"))
    }

    /// Stored points; a repeated cell keeps its latest row.
    pub fn points(&self) -> Result<Vec<IBCurvePoint>> {
        let path = self.points_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let rows: Vec<IBCurvePoint> = read_csv(&path, SWEEP_SCHEMA)?;
        let mut latest: BTreeMap<String, usize> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            latest.insert(r.model_id.clone(), i);
        }
        let mut keep: Vec<usize> = latest.into_values().collect();
        keep.sort_unstable();
        Ok(keep.into_iter().map(|i| rows[i].clone()).collect())
    }

    pub fn manifest(&self) -> Result<Option<SweepManifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: SweepManifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Schema {
                path,
                found: m.schema,
                expected: MANIFEST_SCHEMA.into(),
            });
        }
        Ok(Some(m))
    }

    fn write_manifest(&self, m: &SweepManifest) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(m)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub points: Vec<IBCurvePoint>,
    pub failures: Vec<CellFailure>,
    /// Cells found in the store and not retrained.
    pub reused: usize,
}

/// Trains every (β, seed) cell not already stored, in parallel; results go
/// through one locked writer. A failed cell is recorded and the sweep
/// carries on.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    inputs: &SweepInputs<'_>,
    spec: &ModelSpec,
    template: Objective,
    train_config: &TrainConfig,
    config: &SweepConfig,
    store: &SweepStore,
    force: bool,
) -> Result<SweepOutcome> {
    config.validate()?;
    train_config.validate()?;
    template.validate(spec.input_dim())?;
    let digest = {
        let text = serde_json::to_string(&(spec, template, train_config, config, &inputs.train.name))?;
        sha256_hex(text.as_bytes())
    };
    let existing = store.points()?;
    let mut manifest = match store.manifest()? {
        Some(m) if m.config_digest == digest => m,
        Some(m) => {
            return Err(Error::Config(vec![format!(
                "store {} belongs to a different sweep configuration ({})",
                store.dir.display(),
                &m.config_digest[..12]
            )]))
        }
        None => SweepManifest {
            schema: MANIFEST_SCHEMA.into(),
            config_digest: digest,
            dataset: inputs.train.name.clone(),
            objective: template.name().into(),
            betas: config.betas.clone(),
            seeds: config.seeds.clone(),
            created_unix: now_unix(),
            updated_unix: now_unix(),
            completed: 0,
            failures: Vec::new(),
        },
    };
    store.write_manifest(&manifest)?;

    let done: std::collections::BTreeSet<String> = existing.iter().map(|p| p.model_id.clone()).collect();
    let cells: Vec<(f64, u64)> = config
        .betas
        .iter()
        .flat_map(|&b| config.seeds.iter().map(move |&s| (b, s)))
        .filter(|&(b, s)| force || !done.contains(&model_id(&template.with_strength(b), b, s)))
        .collect();
    let reused = config.betas.len() * config.seeds.len() - cells.len();
    let writer = Mutex::new((manifest.clone(), Vec::<CellFailure>::new()));

    cells.par_iter().for_each(|&(beta, seed)| {
        let id = model_id(&template.with_strength(beta), beta, seed);
        let result = run_cell(inputs, spec, template, train_config, config, beta, seed).and_then(|(point, trained)| {
            trained.save(&store.checkpoint_path(&id))?;
            Ok(point)
        });
        let mut guard = writer.lock().expect("writer lock");
        let outcome = result.and_then(|point| {
            append_csv(&store.points_path(), SWEEP_SCHEMA, std::slice::from_ref(&point))?;
            log::info!(
                "{id}: I(X;Z) {:.3} bits, I(Z;Y) {:.3} bits, acc {:.4}",
                point.mi_xz_bits,
                point.mi_zy_bits,
                point.clean_accuracy
            );
            Ok(())
        });
        let (m, failures) = &mut *guard;
        match outcome {
            Ok(()) => m.completed += 1,
            Err(e) => {
                log::error!("{id} failed: {e}");
                let f = CellFailure { model_id: id, error: e.to_string() };
                m.failures.push(f.clone());
                failures.push(f);
            }
        }
        m.updated_unix = now_unix();
        if let Err(e) = store.write_manifest(m) {
            log::error!("could not update manifest: {e}");
        }
    });
    let (m, mut failures) = writer.into_inner().expect("writer lock");
    manifest = m;
    manifest.failures.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    failures.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    store.write_manifest(&manifest)?;
    // rows were appended in completion order; store them in grid order
    let mut points = store.points()?;
    points.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.seed.cmp(&b.seed)).then(a.model_id.cmp(&b.model_id)));
    if !points.is_empty() {
        write_csv(&store.points_path(), SWEEP_SCHEMA, &points)?;
    }
    Ok(SweepOutcome { points, failures, reused })
}

/// Seed mean of one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaMean {
    pub beta: f64,
    pub mi_xz_bits: f64,
    pub mi_zy_bits: f64,
    pub clean_accuracy: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedCurve {
    /// Ascending in β.
    pub means: Vec<BetaMean>,
    /// Means sorted by `mi_xz` with `mi_zy` replaced by its running maximum.
    pub envelope: Vec<(f64, f64)>,
}

/// Per-β seed means and the display envelope. Raw points are untouched.
pub fn curve_aggregate(points: &[IBCurvePoint]) -> AggregatedCurve {
    let mut groups: Vec<(f64, Vec<&IBCurvePoint>)> = Vec::new();
    let mut sorted: Vec<&IBCurvePoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    for p in sorted {
        match groups.last_mut() {
            Some((b, g)) if *b == p.beta => g.push(p),
            _ => groups.push((p.beta, vec![p])),
        }
    }
    let means: Vec<BetaMean> = groups
        .into_iter()
        .map(|(beta, g)| {
            let n = g.len() as f64;
            BetaMean {
                beta,
                mi_xz_bits: g.iter().map(|p| p.mi_xz_bits).sum::<f64>() / n,
                mi_zy_bits: g.iter().map(|p| p.mi_zy_bits).sum::<f64>() / n,
                clean_accuracy: g.iter().map(|p| p.clean_accuracy).sum::<f64>() / n,
                n: g.len(),
            }
        })
        .collect();
    let mut env: Vec<(f64, f64)> = means.iter().map(|m| (m.mi_xz_bits, m.mi_zy_bits)).collect();
    env.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::NEG_INFINITY;
    for p in &mut env {
        best = best.max(p.1);
        p.1 = best;
    }
    AggregatedCurve { means, envelope: env }
}

/// Knees closer than this to the chord (normalized units) are flagged.
pub const LOW_CONFIDENCE_DISTANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Knee {
    /// Position in the input order.
    pub index: usize,
    /// Normalized chord distance of every input point.
    pub profile: Vec<f64>,
    pub low_confidence: bool,
}

/// Max-distance-from-chord knee of a curve given as `(x, y)` samples. The
/// chord joins the points of smallest and largest `x`; both axes are first
/// scaled to `[0, 1]`. Only points above the chord qualify. Equal distances
/// resolve to the smaller `x`.
pub fn knee_of(xs: &[f64], ys: &[f64]) -> Result<Knee> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Data(format!("knee detection needs ≥ 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("curve contains non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (x0, dx) = span(xs);
    let (y0, dy) = span(ys);
    let midpoint = order[order.len() / 2];
    if dx == 0.0 || dy == 0.0 {
        return Ok(Knee {
            index: midpoint,
            profile: vec![0.0; xs.len()],
            low_confidence: true,
        });
    }
    let nx = |i: usize| (xs[i] - x0) / dx;
    let ny = |i: usize| (ys[i] - y0) / dy;
    let (a, b) = (order[0], order[order.len() - 1]);
    let (cx, cy) = (nx(b) - nx(a), ny(b) - ny(a));
    let len = cx.hypot(cy);
    // signed: positive above the chord, where a concave curve bends
    let profile: Vec<f64> = (0..xs.len())
        .map(|i| (cx * (ny(i) - ny(a)) - (nx(i) - nx(a)) * cy) / len)
        .collect();
    let mut best = order[0];
    for &i in &order {
        if profile[i] > profile[best] {
            best = i;
        }
    }
    if profile[best] < LOW_CONFIDENCE_DISTANCE {
        return Ok(Knee {
            index: midpoint,
            profile,
            low_confidence: true,
        });
    }
    Ok(Knee {
        index: best,
        profile,
        low_confidence: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub beta_star: f64,
    pub mi_xz_bits: f64,
    pub mi_zy_bits: f64,
    /// `(β, distance)` for every per-β mean.
    pub profile: Vec<(f64, f64)>,
    pub low_confidence: bool,
}

/// Knee of the per-β means in the information plane.
pub fn knee_detect(curve: &AggregatedCurve) -> Result<KneeResult> {
    let xs: Vec<f64> = curve.means.iter().map(|m| m.mi_xz_bits).collect();
    let ys: Vec<f64> = curve.means.iter().map(|m| m.mi_zy_bits).collect();
    let k = knee_of(&xs, &ys)?;
    let m = &curve.means[k.index];
    Ok(KneeResult {
        beta_star: m.beta,
        mi_xz_bits: m.mi_xz_bits,
        mi_zy_bits: m.mi_zy_bits,
        profile: curve.means.iter().map(|m| m.beta).zip(k.profile).collect(),
        low_confidence: k.low_confidence,
    })
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data(format!(
            "Spearman needs two equal-length samples of ≥ 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("Spearman undefined for a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Summary of the compression trend over a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Between β and the per-β seed means of `mi_xz`.
    pub spearman_beta_mi_xz: f64,
    /// Same over every (β, seed) point; seed offsets dilute it.
    pub spearman_all_points: f64,
    /// Largest change of mean `mi_zy` between adjacent grid values below β*.
    pub max_step_beyond_knee: f64,
    pub knee: KneeResult,
}

pub fn phase_report(points: &[IBCurvePoint]) -> Result<PhaseReport> {
    let betas: Vec<f64> = points.iter().map(|p| p.beta).collect();
    let xz: Vec<f64> = points.iter().map(|p| p.mi_xz_bits).collect();
    let rho_all = spearman(&betas, &xz)?;
    let curve = curve_aggregate(points);
    let mean_betas: Vec<f64> = curve.means.iter().map(|m| m.beta).collect();
    let mean_xz: Vec<f64> = curve.means.iter().map(|m| m.mi_xz_bits).collect();
    let rho = spearman(&mean_betas, &mean_xz)?;
    let knee = knee_detect(&curve)?;
    let below: Vec<&BetaMean> = curve.means.iter().filter(|m| m.beta <= knee.beta_star).collect();
    let max_step = below
        .windows(2)
        .map(|w| (w[1].mi_zy_bits - w[0].mi_zy_bits).abs())
        .fold(0.0, f64::max);
    Ok(PhaseReport {
        spearman_beta_mi_xz: rho,
        spearman_all_points: rho_all,
        max_step_beyond_knee: max_step,
        knee,
    })
}

/// Mean-centred projection onto the two leading principal directions. Each
/// direction is signed so its largest-magnitude loading is positive. With
/// one feature column the second output column is zero.
pub fn pca_project_2d(z: &Matrix) -> Result<Matrix> {
    Ok(pca(z)?.0)
}

/// Projection plus the variances along the two kept directions.
pub fn pca(z: &Matrix) -> Result<(Matrix, [f64; 2])> {
    let (n, d) = z.dim();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs ≥ 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::Shape("PCA input has no columns".into()));
    }
    let mean = z.mean_axis(ndarray::Axis(0)).expect("n ≥ 2");
    let centred = z - &mean;
    let cov = centred.t().dot(&centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Matrix::zeros((d, 2));
    let mut var = [0.0; 2];
    for (k, &c) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(c);
        let lead = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("d ≥ 1");
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, k]] = sign * v[i];
        }
        var[k] = eig.eigenvalues[c].max(0.0);
    }
    Ok((centred.dot(&basis), var))
}

/// Writes `points` (replacing any existing table).
pub fn write_points_csv(path: &Path, points: &[IBCurvePoint]) -> Result<()> {
    crate::persist::write_csv(path, SWEEP_SCHEMA, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pt(beta: f64, seed: u64, xz: f64, zy: f64) -> IBCurvePoint {
        IBCurvePoint {
            model_id: format!("m{beta}-{seed}"),
            objective: "aib".into(),
            beta,
            seed,
            mi_xz_bits: xz,
            mi_zy_bits: zy,
            clean_accuracy: 0.5,
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 16);
        assert!((g[0] - 2e-4).abs() < 1e-18 && (g[15] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn single_seed_means_equal_raw() {
        let pts = vec![pt(0.1, 0, 3.0, 2.0), pt(1.0, 0, 1.0, 1.5)];
        let c = curve_aggregate(&pts);
        assert_eq!(c.means[0].mi_xz_bits, 3.0);
        assert_eq!(c.means[1].mi_zy_bits, 1.5);
        assert_eq!(c.means[0].n, 1);
    }

    #[test]
    fn envelope_is_running_max() {
        let pts = vec![pt(0.1, 0, 3.0, 2.0), pt(0.5, 0, 2.0, 2.1), pt(1.0, 0, 1.0, 1.0)];
        let c = curve_aggregate(&pts);
        assert_eq!(c.envelope, vec![(1.0, 1.0), (2.0, 2.1), (3.0, 2.1)]);
    }

    #[test]
    fn piecewise_linear_knee_at_corner() {
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x.min(0.4)).collect();
        let k = knee_of(&xs, &ys).unwrap();
        assert_eq!(k.index, 8);
        assert!(!k.low_confidence);
    }

    #[test]
    fn straight_line_is_low_confidence() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!(knee_of(&xs, &ys).unwrap().low_confidence);
    }

    #[test]
    fn knee_ties_prefer_smaller_x() {
        // symmetric tent: the two peak samples sit at equal chord distance
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(knee_of(&xs, &ys).unwrap().index, 1);
    }

    #[test]
    fn points_below_chord_never_win() {
        // a dip below the chord is farther from it than the bump above
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 0.9, 1.0, 0.2, 1.0];
        assert_eq!(knee_of(&xs, &ys).unwrap().index, 1);
        assert!(knee_of(&xs, &[0.0, 0.1, 0.2, 0.3, 1.0]).unwrap().low_confidence);
    }

    #[test]
    fn knee_needs_three_points() {
        assert!(knee_of(&[0.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn spearman_reference_values() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // 1 − 6Σd²/(n(n²−1)) with d = (0,0,1,−1,0): 1 − 12/120
        assert!((spearman(&a, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn phase_report_on_clean_trend() {
        let mut pts = Vec::new();
        for (i, b) in [0.01, 0.1, 1.0, 10.0].iter().enumerate() {
            for s in 0..3 {
                let xz = 4.0 - i as f64;
                pts.push(pt(*b, s, xz + 0.01 * s as f64, (xz).min(2.0)));
            }
        }
        let r = phase_report(&pts).unwrap();
        assert!(r.spearman_beta_mi_xz < -0.9);
        assert_eq!(r.knee.beta_star, 1.0);
        assert!(r.max_step_beyond_knee < 1e-12);
    }

    #[test]
    fn pca_of_two_d_preserves_distances() {
        let z = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 3 + j * 7) as f64 * 0.37).sin() * (1.0 + j as f64));
        let p = pca_project_2d(&z).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let d0 = (&z.row(i) - &z.row(j)).mapv(|v| v * v).sum().sqrt();
                let d1 = (&p.row(i) - &p.row(j)).mapv(|v| v * v).sum().sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_rank_one_and_padding() {
        let z = Array2::from_shape_fn((20, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j]);
        let (p, var) = pca(&z).unwrap();
        assert!(var[1] < 1e-12 * var[0]);
        assert!(p.column(1).iter().all(|v| v.abs() < 1e-9));
        let one = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
        let p = pca_project_2d(&one).unwrap();
        assert_eq!(p.ncols(), 2);
        assert!(p.column(1).iter().all(|&v| v == 0.0));
        assert!(pca_project_2d(&Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn pca_sign_convention() {
        let z = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { -(i as f64) } else { 0.1 * ((i % 3) as f64) });
        let (p, _) = pca(&z).unwrap();
        // leading direction is ±e₀ with positive loading, so the projection
        // reverses the (negated) first column
        assert!(p[[9, 0]] < p[[0, 0]]);
    }

    #[test]
    fn store_keeps_latest_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let store = SweepStore::new(dir.path());
        let mut a = pt(0.1, 0, 1.0, 1.0);
        append_csv(&store.points_path(), SWEEP_SCHEMA, &[a.clone()]).unwrap();
        a.mi_xz_bits = 2.0;
        append_csv(&store.points_path(), SWEEP_SCHEMA, &[a.clone(), pt(1.0, 0, 0.5, 0.5)]).unwrap();
        let got = store.points().unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].mi_xz_bits, 2.0);
    }

    #[test]
    fn config_violations_are_collected() {
        let c = SweepConfig {
            betas: vec![1.0, -1.0],
            seeds: vec![],
            eval_samples: 1,
            ..SweepConfig::default()
        };
        assert_eq!(c.violations().len(), 4);
    }
}

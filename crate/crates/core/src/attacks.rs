//! White-box attacks on the deterministic evaluation path of a [`Model`]:
//! fast gradient sign (untargeted and targeted) and DeepFool (L2).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{argmax_rows, decode, encode, Model};
use crate::tensor::{Graph, Matrix};

/// Mean cross-entropy and its gradient with respect to the inputs.
pub fn input_gradient(model: &Model, x: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let mut g = Graph::new();
    let be = model.encoder.bind_frozen(&mut g);
    let bd = model.decoder.bind_frozen(&mut g);
    let xi = g.variable(x.clone());
    let enc = encode(&mut g, model, &be, xi, None)?;
    let logits = decode(&mut g, model, &bd, enc.z, None)?;
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let mut grads = g.backward(ce)?;
    let gx = grads.take(xi).unwrap_or_else(|| Matrix::zeros(x.dim()));
    Ok((g.scalar(ce), gx))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(vec![format!("ε must be finite and ≥ 0, got {eps}")]))
    }
}

/// `clip(x + ε·sign(∂L(x, y)/∂x), 0, 1)`.
pub fn fgs(model: &Model, x: &Matrix, labels: &[usize], eps: f64) -> Result<Matrix> {
    check_eps(eps)?;
    let (_, gx) = input_gradient(model, x, labels)?;
    Ok(ndarray::Zip::from(x).and(&gx).map_collect(|&xi, &gi| (xi + eps * sign(gi)).clamp(0.0, 1.0)))
}

/// `clip(x − ε·sign(∂L(x, y_target)/∂x), 0, 1)`.
pub fn tgs(model: &Model, x: &Matrix, targets: &[usize], eps: f64) -> Result<Matrix> {
    check_eps(eps)?;
    let (_, gx) = input_gradient(model, x, targets)?;
    Ok(ndarray::Zip::from(x).and(&gx).map_collect(|&xi, &gi| (xi - eps * sign(gi)).clamp(0.0, 1.0)))
}

/// `(y + 1) mod K`.
pub fn target_labels(labels: &[usize], n_classes: usize) -> Vec<usize> {
    labels.iter().map(|&y| (y + 1) % n_classes).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepFoolConfig {
    pub max_iter: usize,
    pub overshoot: f64,
}

impl Default for DeepFoolConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            overshoot: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepFoolRecord {
    pub original: usize,
    pub adversarial: usize,
    /// `‖Σ r_i‖₂`, before overshoot.
    pub delta_l2: f64,
    pub iterations: usize,
    pub flipped: bool,
}

/// Logits and `∂logit_k/∂x` for every class `k`.
fn logits_and_jacobian(model: &Model, x: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
    let mut g = Graph::new();
    let be = model.encoder.bind_frozen(&mut g);
    let bd = model.decoder.bind_frozen(&mut g);
    let xi = g.variable(x.clone());
    let enc = encode(&mut g, model, &be, xi, None)?;
    let logits = decode(&mut g, model, &bd, enc.z, None)?;
    let (m, k) = g.value(logits).dim();
    let mut jac = Vec::with_capacity(k);
    for class in 0..k {
        let mut sel = Matrix::zeros((m, k));
        sel.column_mut(class).fill(1.0);
        let sel = g.constant(sel);
        let picked = g.mul(logits, sel)?;
        let total = g.sum_all(picked);
        let mut grads = g.backward(total)?;
        jac.push(grads.take(xi).unwrap_or_else(|| Matrix::zeros(x.dim())));
    }
    Ok((g.value(logits).clone(), jac))
}

/// Batched L2 DeepFool. Each row is linearized at its current overshot
/// point `x + (1+η)·Σr` until its predicted class leaves the original one or
/// `max_iter` steps have run. Only the returned adversarial inputs are
/// clipped to `[0, 1]`.
pub fn deepfool(model: &Model, x: &Matrix, config: &DeepFoolConfig) -> Result<(Matrix, Vec<DeepFoolRecord>)> {
    if config.max_iter == 0 || !(config.overshoot >= 0.0) {
        return Err(Error::Config(vec![format!("invalid DeepFool settings {config:?}")]));
    }
    let (m, d) = x.dim();
    let original = model.predict(x)?;
    let mut r_tot = Matrix::zeros((m, d));
    let mut records: Vec<DeepFoolRecord> = original
        .iter()
        .map(|&t| DeepFoolRecord {
            original: t,
            adversarial: t,
            delta_l2: 0.0,
            iterations: 0,
            flipped: false,
        })
        .collect();
    let overshot = |x: &Matrix, r: &Matrix| x + &(r * (1.0 + config.overshoot));
    let mut active: Vec<usize> = (0..m).collect();
    for _ in 0..=config.max_iter {
        if active.is_empty() {
            break;
        }
        let rows = overshot(&x.select(ndarray::Axis(0), &active), &r_tot.select(ndarray::Axis(0), &active));
        let (logits, jac) = logits_and_jacobian(model, &rows)?;
        let labels = argmax_rows(&logits);
        let mut still = Vec::new();
        for (a, &row) in active.iter().enumerate() {
            let rec = &mut records[row];
            rec.adversarial = labels[a];
            if labels[a] != rec.original {
                rec.flipped = true;
                continue;
            }
            if rec.iterations == config.max_iter {
                continue;
            }
            let t = rec.original;
            let mut best: Option<(f64, f64, usize)> = None; // (ratio, |f|, class)
            for k in 0..logits.ncols() {
                if k == t {
                    continue;
                }
                let f = logits[[a, k]] - logits[[a, t]];
                let w_norm = jac[k]
                    .row(a)
                    .iter()
                    .zip(jac[t].row(a))
                    .map(|(gk, gt)| (gk - gt).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if w_norm == 0.0 {
                    continue;
                }
                let ratio = f.abs() / w_norm;
                if best.is_none_or(|b| ratio < b.0) {
                    best = Some((ratio, w_norm, k));
                }
            }
            let Some((ratio, w_norm, l)) = best else {
                continue;
            };
            let scale = ratio / w_norm;
            let mut r = r_tot.row_mut(row);
            for ((ri, gl), gt) in r.iter_mut().zip(jac[l].row(a)).zip(jac[t].row(a)) {
                *ri += scale * (gl - gt);
            }
            rec.iterations += 1;
            still.push(row);
        }
        active = still;
    }
    for (row, rec) in records.iter_mut().enumerate() {
        rec.delta_l2 = r_tot.row(row).iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok((overshot(x, &r_tot).mapv(|v| v.clamp(0.0, 1.0)), records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub fgs_eps: Vec<f64>,
    pub tgs_eps: Vec<f64>,
    pub deepfool: DeepFoolConfig,
    /// DeepFool runs on the first `n` evaluation rows; `None` means all.
    pub deepfool_samples: Option<usize>,
    pub chunk: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            fgs_eps: vec![0.05, 0.10, 0.15],
            tgs_eps: vec![0.1, 0.2, 0.3],
            deepfool: DeepFoolConfig::default(),
            deepfool_samples: None,
            chunk: 1000,
        }
    }
}

/// One model's results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAttackResult {
    /// Rows evaluated for clean, FGS and TGS accuracy.
    pub samples: usize,
    pub clean_accuracy: f64,
    pub fgs: Vec<(f64, f64)>,
    pub tgs: Vec<(f64, f64)>,
    pub deepfool_mean_l2: f64,
    pub deepfool_sum_l2: f64,
    pub deepfool_flagged: usize,
    pub deepfool_samples: usize,
}

fn accuracy(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, t)| p == t).count()
}

/// Clean, FGS, TGS and DeepFool evaluation of one model on `(x, labels)`.
pub fn attack_model(model: &Model, x: &Matrix, labels: &[usize], config: &AttackConfig) -> Result<ModelAttackResult> {
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape(format!("{n} inputs but {} labels", labels.len())));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("attack inputs must lie in [0, 1]".into()));
    }
    let k = model.spec.n_classes();
    let chunk = config.chunk.max(1);
    let mut clean = 0;
    let mut fgs_hits = vec![0usize; config.fgs_eps.len()];
    let mut tgs_hits = vec![0usize; config.tgs_eps.len()];
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let xb = x.slice(ndarray::s![start..end, ..]).to_owned();
        let yb = &labels[start..end];
        clean += accuracy(&model.predict(&xb)?, yb);
        for (i, &eps) in config.fgs_eps.iter().enumerate() {
            fgs_hits[i] += accuracy(&model.predict(&fgs(model, &xb, yb, eps)?)?, yb);
        }
        let targets = target_labels(yb, k);
        for (i, &eps) in config.tgs_eps.iter().enumerate() {
            tgs_hits[i] += accuracy(&model.predict(&tgs(model, &xb, &targets, eps)?)?, yb);
        }
    }
    let n_df = config.deepfool_samples.unwrap_or(n).min(n);
    let mut norms = Vec::with_capacity(n_df);
    let mut flagged = 0;
    for start in (0..n_df).step_by(chunk) {
        let end = (start + chunk).min(n_df);
        let xb = x.slice(ndarray::s![start..end, ..]).to_owned();
        let (_, recs) = deepfool(model, &xb, &config.deepfool)?;
        for r in recs {
            flagged += usize::from(!r.flipped);
            norms.push(r.delta_l2);
        }
    }
    let frac = |h: usize| h as f64 / n as f64;
    let sum_l2: f64 = norms.iter().sum();
    Ok(ModelAttackResult {
        clean_accuracy: frac(clean),
        fgs: config.fgs_eps.iter().zip(&fgs_hits).map(|(&e, &h)| (e, frac(h))).collect(),
        tgs: config.tgs_eps.iter().zip(&tgs_hits).map(|(&e, &h)| (e, frac(h))).collect(),
        deepfool_mean_l2: if n_df > 0 { sum_l2 / n_df as f64 } else { 0.0 },
        deepfool_sum_l2: sum_l2,
        deepfool_flagged: flagged,
        deepfool_samples: n_df,
        samples: n,
    })
}

/// A CSV row of an attack report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub model_id: String,
    pub objective: String,
    pub beta: Option<f64>,
    pub seed: u64,
    pub attack: String,
    pub epsilon: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_l2: Option<f64>,
    pub flagged_count: Option<usize>,
    pub samples: usize,
}

/// Results for one trained model, tagged for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedResult {
    pub model_id: String,
    /// Row label in the tables, e.g. `AIB` or `Normal`.
    pub method: String,
    pub objective: String,
    pub beta: Option<f64>,
    pub seed: u64,
    pub result: ModelAttackResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub results: Vec<TaggedResult>,
}

/// Table label of an objective name, e.g. `aib` → `AIB`.
pub fn objective_label(name: &str) -> String {
    match name {
        "normal" => "Normal".into(),
        "dropout" => "Dropout".into(),
        other => other.to_uppercase(),
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl AttackReport {
    pub fn rows(&self) -> Vec<AttackRow> {
        let mut rows = Vec::new();
        for t in &self.results {
            let base = |attack: &str, epsilon: Option<f64>, accuracy: Option<f64>| AttackRow {
                samples: t.result.samples,
                model_id: t.model_id.clone(),
                objective: t.objective.clone(),
                beta: t.beta,
                seed: t.seed,
                attack: attack.into(),
                epsilon,
                accuracy,
                mean_l2: None,
                flagged_count: None,
            };
            rows.push(base("clean", Some(0.0), Some(t.result.clean_accuracy)));
            for &(e, a) in &t.result.fgs {
                rows.push(base("fgs", Some(e), Some(a)));
            }
            for &(e, a) in &t.result.tgs {
                rows.push(base("tgs", Some(e), Some(a)));
            }
            if t.result.deepfool_samples > 0 {
                rows.push(AttackRow {
                    mean_l2: Some(t.result.deepfool_mean_l2),
                    flagged_count: Some(t.result.deepfool_flagged),
                    samples: t.result.deepfool_samples,
                    ..base("deepfool", None, None)
                });
            }
        }
        rows
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::write_csv(path, crate::persist::ATTACK_SCHEMA, &self.rows())
    }

    /// Inverse of [`AttackReport::rows`]; the method label comes from the
    /// objective name.
    pub fn from_rows(rows: &[AttackRow]) -> Result<Self> {
        let mut results: Vec<TaggedResult> = Vec::new();
        for r in rows {
            let pos = match results.iter().position(|t| t.model_id == r.model_id) {
                Some(p) => p,
                None => {
                    results.push(TaggedResult {
                        model_id: r.model_id.clone(),
                        method: objective_label(&r.objective),
                        objective: r.objective.clone(),
                        beta: r.beta,
                        seed: r.seed,
                        result: ModelAttackResult {
                            samples: 0,
                            clean_accuracy: f64::NAN,
                            fgs: Vec::new(),
                            tgs: Vec::new(),
                            deepfool_mean_l2: 0.0,
                            deepfool_sum_l2: 0.0,
                            deepfool_flagged: 0,
                            deepfool_samples: 0,
                        },
                    });
                    results.len() - 1
                }
            };
            let res = &mut results[pos].result;
            let missing = |what: &str| Error::Data(format!("{} row of {} lacks {what}", r.attack, r.model_id));
            match r.attack.as_str() {
                "clean" => {
                    res.clean_accuracy = r.accuracy.ok_or_else(|| missing("accuracy"))?;
                    res.samples = r.samples;
                }
                "fgs" | "tgs" => {
                    let pair = (r.epsilon.ok_or_else(|| missing("ε"))?, r.accuracy.ok_or_else(|| missing("accuracy"))?);
                    if r.attack == "fgs" { res.fgs.push(pair) } else { res.tgs.push(pair) }
                }
                "deepfool" => {
                    res.deepfool_mean_l2 = r.mean_l2.ok_or_else(|| missing("mean_l2"))?;
                    res.deepfool_flagged = r.flagged_count.ok_or_else(|| missing("flagged_count"))?;
                    res.deepfool_samples = r.samples;
                    res.deepfool_sum_l2 = res.deepfool_mean_l2 * r.samples as f64;
                }
                other => return Err(Error::Data(format!("unknown attack `{other}` in report"))),
            }
        }
        Ok(Self { results })
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        Self::from_rows(&crate::persist::read_csv(path, crate::persist::ATTACK_SCHEMA)?)
    }

    fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.results {
            if !out.contains(&t.method) {
                out.push(t.method.clone());
            }
        }
        out
    }

    fn of(&self, method: &str) -> Vec<&ModelAttackResult> {
        self.results.iter().filter(|t| t.method == method).map(|t| &t.result).collect()
    }

    /// Mean over seeds of a method's accuracy at an FGS ε.
    pub fn fgs_mean(&self, method: &str, eps: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .of(method)
            .iter()
            .filter_map(|r| r.fgs.iter().find(|(e, _)| (e - eps).abs() < 1e-12).map(|(_, a)| *a))
            .collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }

    pub fn deepfool_mean(&self, method: &str) -> Option<f64> {
        let v: Vec<f64> = self.of(method).iter().filter(|r| r.deepfool_samples > 0).map(|r| r.deepfool_mean_l2).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }

    pub fn clean_mean(&self, method: &str) -> Option<f64> {
        let v: Vec<f64> = self.of(method).iter().map(|r| r.clean_accuracy).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }

    /// Accuracy table: clean, FGS and TGS columns, mean ± std over seeds.
    pub fn accuracy_table(&self) -> String {
        let Some(first) = self.results.first() else {
            return String::new();
        };
        let mut out = String::new();
        let mut header = format!("{:<10} {:>13}", "Method", "Clean");
        for (e, _) in &first.result.fgs {
            header += &format!(" {:>13}", format!("FGS {e:.2}"));
        }
        for (e, _) in &first.result.tgs {
            header += &format!(" {:>13}", format!("TGS {e:.2}"));
        }
        let _ = writeln!(out, "{header}");
        for method in self.methods() {
            let rs = self.of(&method);
            let cell = |v: Vec<f64>| {
                let (m, s) = mean_std(&v);
                format!(" {:>13}", format!("{m:.3}±{s:.3}"))
            };
            let mut line = format!("{method:<10}");
            line += &cell(rs.iter().map(|r| r.clean_accuracy).collect());
            for i in 0..first.result.fgs.len() {
                line += &cell(rs.iter().map(|r| r.fgs[i].1).collect());
            }
            for i in 0..first.result.tgs.len() {
                line += &cell(rs.iter().map(|r| r.tgs[i].1).collect());
            }
            let _ = writeln!(out, "{line}  (n={})", rs.len());
        }
        out
    }

    /// DeepFool table: mean ‖δ‖₂ (per sample) and the sum, over seeds.
    pub fn deepfool_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>15} {:>15} {:>8}", "Method", "mean ‖δ‖₂", "sum ‖δ‖₂", "flagged");
        for method in self.methods() {
            let rs: Vec<_> = self.of(&method).into_iter().filter(|r| r.deepfool_samples > 0).collect();
            if rs.is_empty() {
                continue;
            }
            let (m, s) = mean_std(&rs.iter().map(|r| r.deepfool_mean_l2).collect::<Vec<_>>());
            let (sm, ss) = mean_std(&rs.iter().map(|r| r.deepfool_sum_l2).collect::<Vec<_>>());
            let flagged: usize = rs.iter().map(|r| r.deepfool_flagged).sum();
            let _ = writeln!(
                out,
                "{method:<10} {:>15} {:>15} {flagged:>8}  (n={})",
                format!("{m:.3}±{s:.3}"),
                format!("{sm:.1}±{ss:.1}"),
                rs.len()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Activation, ModelSpec, Objective};
    use ndarray::Array2;

    fn linear_model(d: usize, classes: usize, seed: u64) -> Model {
        let spec = ModelSpec {
            widths: vec![d, classes, classes],
            bottleneck: 1,
            bottleneck_activation: Activation::Linear,
        };
        Model::new(spec, Objective::Normal, seed).unwrap()
    }

    fn inputs(n: usize, d: usize) -> Matrix {
        Array2::from_shape_fn((n, d), |(i, j)| (((i * 31 + j * 17) % 97) as f64 / 96.0).clamp(0.05, 0.95))
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = linear_model(6, 3, 0);
        let x = inputs(5, 6);
        let y = vec![0, 1, 2, 0, 1];
        assert_eq!(fgs(&m, &x, &y, 0.0).unwrap(), x);
        assert_eq!(tgs(&m, &x, &target_labels(&y, 3), 0.0).unwrap(), x);
    }

    #[test]
    fn unclipped_coordinates_move_by_epsilon() {
        let m = linear_model(6, 3, 1);
        let x = inputs(5, 6);
        let y = vec![0, 1, 2, 0, 1];
        let adv = fgs(&m, &x, &y, 0.03).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            assert!(((a - b).abs() - 0.03).abs() < 1e-15 || *a == 0.0 || *a == 1.0);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn fgs_first_order_increase() {
        // linear softmax model: loss increase ≈ ε‖∇L‖₁ for small ε
        let m = linear_model(8, 3, 2);
        let x = inputs(1, 8);
        let y = vec![1];
        let (l0, g) = input_gradient(&m, &x, &y).unwrap();
        let adv = fgs(&m, &x, &y, 0.01).unwrap();
        let (l1, _) = input_gradient(&m, &adv, &y).unwrap();
        let predicted = 0.01 * g.iter().map(|v| v.abs()).sum::<f64>();
        assert!(l1 >= l0);
        assert!(((l1 - l0) - predicted).abs() <= 0.1 * predicted, "{} vs {predicted}", l1 - l0);
    }

    #[test]
    fn tgs_does_not_increase_target_loss_to_first_order() {
        let m = linear_model(8, 4, 3);
        let x = inputs(4, 8);
        let t = target_labels(&[0, 1, 2, 3], 4);
        let (_, g) = input_gradient(&m, &x, &t).unwrap();
        let adv = tgs(&m, &x, &t, 0.02).unwrap();
        let directional: f64 = (&adv - &x).iter().zip(&g).map(|(d, gi)| d * gi).sum();
        assert!(directional <= 0.0);
        assert_eq!(target_labels(&[9], 10), vec![0]);
    }

    #[test]
    fn deepfool_on_linear_binary_classifier_hits_the_hyperplane() {
        let m = linear_model(5, 2, 4);
        // effective g(x) = (l1 - l0) = x·w + b
        let w_enc = m.encoder.get("w0").unwrap();
        let b_enc = m.encoder.get("b0").unwrap();
        let w_dec = m.decoder.get("w0").unwrap();
        let b_dec = m.decoder.get("b0").unwrap();
        let w_full = w_enc.dot(w_dec);
        let b_full = b_enc.dot(w_dec) + b_dec;
        let w: Vec<f64> = (0..5).map(|j| w_full[[j, 1]] - w_full[[j, 0]]).collect();
        let b = b_full[[0, 1]] - b_full[[0, 0]];
        let x = Array2::from_elem((1, 5), 0.5);
        let g: f64 = w.iter().map(|wi| wi * 0.5).sum::<f64>() + b;
        let expected = g.abs() / w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (_, recs) = deepfool(&m, &x, &DeepFoolConfig::default()).unwrap();
        assert_eq!(recs[0].iterations, 1);
        assert!((recs[0].delta_l2 - expected).abs() <= 0.01 * expected);
        assert!(recs[0].flipped);
    }

    #[test]
    fn deepfool_is_invariant_to_logit_scale() {
        let mut m = linear_model(6, 3, 5);
        let x = inputs(6, 6);
        let (_, a) = deepfool(&m, &x, &DeepFoolConfig::default()).unwrap();
        for name in ["w0", "b0"] {
            m.decoder.get_mut(name).unwrap().mapv_inplace(|v| v * 3.0);
        }
        let (_, b) = deepfool(&m, &x, &DeepFoolConfig::default()).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!((ra.delta_l2 - rb.delta_l2).abs() <= 1e-9 * ra.delta_l2.max(1.0));
        }
    }

    #[test]
    fn report_table_layout() {
        let m = linear_model(6, 3, 6);
        let x = inputs(20, 6);
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let r = attack_model(&m, &x, &y, &AttackConfig::default()).unwrap();
        assert_eq!(r.clean_accuracy, r.clean_accuracy.clamp(0.0, 1.0));
        let report = AttackReport {
            results: vec![TaggedResult {
                model_id: "m".into(),
                method: "Normal".into(),
                objective: "normal".into(),
                beta: None,
                seed: 0,
                result: r,
            }],
        };
        let t = report.accuracy_table();
        assert!(t.contains("FGS 0.05") && t.contains("TGS 0.30"));
        assert_eq!(report.rows().len(), 1 + 3 + 3 + 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        report.write_csv(&p).unwrap();
        let back = AttackReport::read_csv(&p).unwrap();
        assert_eq!(back.rows(), report.rows());
        assert_eq!(back.accuracy_table(), report.accuracy_table());
    }
}

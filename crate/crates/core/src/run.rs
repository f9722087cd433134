//! Subcommand pipelines. Every run owns a directory named after the digest
//! of the configuration parts it depends on, holding the resolved config,
//! its artifacts and a `run.json` record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attacks::{attack_model, objective_label, AttackReport, TaggedResult};
use crate::ba::{ba_curve, write_curve_csv, BACurvePoint, DiscreteJoint};
use crate::config::{prepare_data, DatasetKind, ExperimentConfig, Prepared};
use crate::data::{calibrate_synthetic, gen_synthetic, LabeledDataset};
use crate::error::{Error, Result};
use crate::mi::{
    binning_mi, dv_train_estimate, kde_mi_xz, kde_mi_zy, label_entropy_bits, BinTarget, EstimateRow, MIEstimate,
    StatisticNet,
};
use crate::objectives::{evaluate, train, write_train_log, Objective, TrainedModel, STATISTIC_HIDDEN};
use crate::plot::{color, panels, write_svg, Chart, Series, Style};
use crate::sweep::{
    curve_aggregate, eval_subset, pca_project_2d, phase_report, sweep, AggregatedCurve, IBCurvePoint, PhaseReport,
    SweepInputs, SweepStore,
};
use crate::tensor::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BaCurve,
    Train,
    Sweep,
    Knee,
    Attack,
    MiEval,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BaCurve => "ba-curve",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Knee => "knee",
            Command::Attack => "attack",
            Command::MiEval => "mi-eval",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed { cause: String },
}

pub const RECORD_SCHEMA: &str = "iblab.run-record.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub command: Command,
    pub config_digest: String,
    /// Content hash of the dataset files (or generator parameters).
    pub inputs_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub status: RunStatus,
    pub summary: BTreeMap<String, Value>,
    #[serde(skip)]
    pub dir: PathBuf,
    /// True when the record was found complete and nothing was rerun.
    #[serde(skip)]
    pub cached: bool,
}

impl RunRecord {
    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join("run.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut rec: Self = serde_json::from_str(&text)?;
        if rec.schema != RECORD_SCHEMA {
            return Err(Error::Schema {
                path,
                found: rec.schema,
                expected: RECORD_SCHEMA.into(),
            });
        }
        rec.dir = dir.to_path_buf();
        Ok(Some(rec))
    }

    fn save(&self) -> Result<()> {
        let path = self.dir.join("run.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn add(&mut self, artifact: &str) {
        if !self.artifacts.iter().any(|a| a == artifact) {
            self.artifacts.push(artifact.to_string());
        }
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// The part of the configuration a command's results depend on.
fn view(cfg: &ExperimentConfig, cmd: Command) -> Value {
    let d = &cfg.dataset;
    let dataset = json!({
        "kind": d.kind,
        "split": d.split,
        "split_seed": d.split_seed,
        "train_limit": d.train_limit,
        "synthetic": [d.synthetic_mi_bits, d.synthetic_balance, d.synthetic_seed],
    });
    let trained = json!({
        "dataset": dataset,
        "model": cfg.spec(),
        "objective": cfg.objective,
        "train": cfg.train,
    });
    let swept = json!({
        "dataset": dataset,
        "model": cfg.spec(),
        "template": cfg.objective.with_strength(0.0),
        "train": cfg.train,
        "sweep": cfg.sweep,
    });
    match cmd {
        Command::BaCurve => json!({
            "synthetic": [d.synthetic_mi_bits, d.synthetic_balance, d.synthetic_seed],
            "ba": cfg.ba,
            "seed": cfg.seed,
        }),
        Command::Train => trained,
        Command::Sweep | Command::Knee => swept,
        Command::Attack => json!({
            "trained": trained,
            "attack": cfg.attack,
            "knee": cfg.attack.beta_from_knee.then_some(swept),
        }),
        Command::MiEval => json!({ "trained": trained, "mi": cfg.mi }),
        Command::Report => Value::Null,
    }
}

pub fn command_digest(cfg: &ExperimentConfig, cmd: Command) -> Result<String> {
    let text = serde_json::to_string(&json!({ "command": cmd.name(), "view": view(cfg, cmd) }))?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn run_dir(cfg: &ExperimentConfig, cmd: Command) -> Result<PathBuf> {
    if cmd == Command::Report {
        return Ok(cfg.output_dir.join("report"));
    }
    Ok(cfg.output_dir.join(format!("{}-{}", cmd.name(), &command_digest(cfg, cmd)?[..12])))
}

// recorded paths must survive a change of working directory
fn abs_display(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// Runs a subcommand, or returns its completed record when one with the
/// same digest exists and `force` is off. `force` reruns only `cmd`;
/// upstream runs are reused when complete. On failure the record is kept
/// with its cause and the error is returned.
pub fn run_subcommand(cmd: Command, cfg: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let errs = cfg.violations();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let dir = run_dir(cfg, cmd)?;
    if cmd != Command::Report && !force {
        if let Some(mut rec) = RunRecord::load(&dir)? {
            if rec.status == RunStatus::Completed {
                log::info!("{} is cached in {}; skipping (use --force to rerun)", cmd.name(), dir.display());
                rec.cached = true;
                return Ok(rec);
            }
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    let mut rec = RunRecord {
        schema: RECORD_SCHEMA.into(),
        command: cmd,
        config_digest: command_digest(cfg, cmd)?,
        inputs_hash: String::new(),
        started_unix: now_unix(),
        finished_unix: None,
        artifacts: vec!["config.toml".into()],
        status: RunStatus::Running,
        summary: BTreeMap::new(),
        dir: dir.clone(),
        cached: false,
    };
    rec.save()?;
    let result = match cmd {
        Command::BaCurve => ba_curve_run(cfg, &mut rec),
        Command::Train => train_run(cfg, &mut rec),
        Command::Sweep => sweep_run(cfg, &mut rec, force),
        Command::Knee => knee_run(cfg, &mut rec),
        Command::Attack => attack_run(cfg, &mut rec),
        Command::MiEval => mi_eval_run(cfg, &mut rec),
        Command::Report => report_run(cfg, &mut rec),
    };
    rec.finished_unix = Some(now_unix());
    rec.status = match &result {
        Ok(()) => RunStatus::Completed,
        Err(e) => RunStatus::Failed { cause: e.to_string() },
    };
    // keep only artifacts that were actually written
    rec.artifacts.retain(|a| dir.join(a).exists());
    rec.save()?;
    result.map(|()| rec)
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>` per file.
fn hash_files(paths: &[PathBuf]) -> Result<String> {
    let mut acc = String::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let mut blob = format!("blob {}\0", bytes.len()).into_bytes();
        blob.extend_from_slice(&bytes);
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(acc, "{} {name}", sha256_hex(&blob));
    }
    Ok(sha256_hex(acc.as_bytes()))
}

fn inputs_hash(cfg: &ExperimentConfig) -> Result<String> {
    match cfg.dataset.kind {
        DatasetKind::Mnist => {
            let dir = cfg.dataset.dir.clone().unwrap_or_else(|| crate::data::data_dir().join("mnist"));
            hash_files(
                &["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
                    .map(|f| dir.join(f)),
            )
        }
        DatasetKind::Synthetic => {
            let d = &cfg.dataset;
            Ok(sha256_hex(
                serde_json::to_string(&("synthetic", d.synthetic_mi_bits, d.synthetic_balance, d.synthetic_seed))?.as_bytes(),
            ))
        }
    }
}

fn write_text(rec: &mut RunRecord, name: &str, text: &str) -> Result<()> {
    let p = rec.path(name);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    rec.add(name);
    Ok(())
}

fn write_json(rec: &mut RunRecord, name: &str, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(rec, name, &text)
}

fn svg(rec: &mut RunRecord, name: &str, content: &str) -> Result<()> {
    write_svg(&rec.path(name), content)?;
    rec.add(name);
    Ok(())
}

/// Exact joint of the configured synthetic task.
pub fn synthetic_joint(cfg: &ExperimentConfig) -> Result<(LabeledDataset, DiscreteJoint)> {
    let d = &cfg.dataset;
    let mut spec = calibrate_synthetic(d.synthetic_mi_bits, d.synthetic_balance)?;
    spec.seed = d.synthetic_seed;
    let data = gen_synthetic(&spec)?;
    let joint = DiscreteJoint::new(data.exact_joint.clone().expect("synthetic joint is exact"))?;
    Ok((data, joint))
}

fn reference_curve(cfg: &ExperimentConfig) -> Result<Vec<BACurvePoint>> {
    let (_, joint) = synthetic_joint(cfg)?;
    ba_curve(&joint, &cfg.ba.grid(), &cfg.ba.options(cfg.seed))
}

fn ba_curve_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    let (_, joint) = synthetic_joint(cfg)?;
    rec.inputs_hash = inputs_hash(&ExperimentConfig {
        dataset: crate::config::DatasetConfig {
            kind: DatasetKind::Synthetic,
            ..cfg.dataset.clone()
        },
        ..cfg.clone()
    })?;
    let curve = ba_curve(&joint, &cfg.ba.grid(), &cfg.ba.options(cfg.seed))?;
    write_curve_csv(&rec.path("ba_curve.csv"), &curve)?;
    rec.add("ba_curve.csv");
    let end = curve.last().expect("nonempty grid");
    rec.note("mi_xy_bits", joint.mi_bits());
    rec.note("h_y_bits", joint.h_y_bits());
    rec.note("endpoint_mi_xz_bits", end.mi_xz_bits);
    rec.note("endpoint_mi_zy_bits", end.mi_zy_bits);
    rec.note("endpoint_fraction", end.mi_zy_bits / joint.mi_bits());
    rec.note("unconverged", curve.iter().filter(|p| !p.converged).count());
    let chart = Chart::new("Optimal IB curve (synthetic)", "I(X;Z) [bits]", "I(Z;Y) [bits]")
        .with(Series::new(
            "Blahut-Arimoto",
            curve.iter().map(|p| (p.mi_xz_bits, p.mi_zy_bits)).collect(),
            Style::Reference,
            color(0),
        ))
        .with(Series::new(
            "I(X;Y)",
            vec![(0.0, joint.mi_bits()), (end.mi_xz_bits, joint.mi_bits())],
            Style::Line,
            color(7),
        ));
    svg(rec, "ba_curve.svg", &chart.to_svg())?;
    let text = format!(
        "I(X;Y) = {:.4} bits, H(Y) = {:.4} bits\nendpoint β_BA = {:.3}: I(X;Z) = {:.4}, I(Z;Y) = {:.4} ({:.1}% of I(X;Y))\n",
        joint.mi_bits(),
        joint.h_y_bits(),
        end.beta_ba,
        end.mi_xz_bits,
        end.mi_zy_bits,
        100.0 * end.mi_zy_bits / joint.mi_bits()
    );
    rec.note("text_artifact", "summary.txt");
    write_text(rec, "summary.txt", &text)
}

/// KDE estimates of a trained model on the fixed evaluation subset.
fn kde_estimates(cfg: &ExperimentConfig, trained: &TrainedModel, test: &LabeledDataset) -> Result<(MIEstimate, MIEstimate)> {
    let rows = eval_subset(test, cfg.mi.eval_samples, cfg.mi.eval_seed);
    let (x, y) = test.gather(&rows);
    let z = trained.codes(&x)?;
    Ok((kde_mi_xz(&z, &cfg.mi.kde)?, kde_mi_zy(&z, &y, &cfg.mi.kde)?))
}

fn train_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    rec.inputs_hash = inputs_hash(cfg)?;
    let Prepared { train: data, split, test } = prepare_data(cfg)?;
    let trained = train(&data, &split, &cfg.spec(), cfg.objective, &cfg.train)?;
    trained.save(&rec.path("model.ckpt"))?;
    rec.add("model.ckpt");
    write_train_log(&rec.path("train_log.csv"), &trained.log)?;
    rec.add("train_log.csv");
    let all: Vec<usize> = (0..test.len()).collect();
    let acc = evaluate(&trained.model, &test, &all)?;
    let (xz, zy) = kde_estimates(cfg, &trained, &test)?;
    let id = format!("{}-s{}", cfg.objective.name(), cfg.seed);
    crate::mi::write_estimates_csv(
        &rec.path("estimates.csv"),
        &[EstimateRow::new(&data.name, &id, "z:I(X;Z)", &xz), EstimateRow::new(&data.name, &id, "z:I(Z;Y)", &zy)],
    )?;
    rec.add("estimates.csv");
    rec.note("model_id", &id);
    rec.note("test_accuracy", acc);
    rec.note("best_epoch", trained.best_epoch);
    rec.note("epochs_run", trained.log.len());
    rec.note("best_val_accuracy", trained.best_val_acc());
    rec.note("mi_xz_bits", xz.value_bits);
    rec.note("mi_zy_bits", zy.value_bits);
    log::info!(
        "{id}: test accuracy {acc:.4}, I(X;Z) {:.3} bits, I(Z;Y) {:.3} bits",
        xz.value_bits,
        zy.value_bits
    );
    Ok(())
}

/// The checkpoint of a `train` run for `cfg`, training it if needed.
pub fn trained_model(cfg: &ExperimentConfig, force: bool) -> Result<(TrainedModel, RunRecord)> {
    let rec = run_subcommand(Command::Train, cfg, force)?;
    Ok((TrainedModel::load(&rec.path("model.ckpt"))?, rec))
}

fn information_plane(title: &str, points: &[IBCurvePoint], curve: &AggregatedCurve, reference: Option<&[BACurvePoint]>, knee: Option<(f64, f64)>) -> Chart {
    let mut chart = Chart::new(title, "I(X;Z) [bits]", "I(Z;Y) [bits]")
        .with(Series::new(
            "models",
            points.iter().map(|p| (p.mi_xz_bits, p.mi_zy_bits)).collect(),
            Style::Markers,
            color(0),
        ))
        .with(Series::new("envelope", curve.envelope.clone(), Style::Line, color(2)));
    if let Some(r) = reference {
        chart = chart.with(Series::new(
            "BA reference",
            r.iter().map(|p| (p.mi_xz_bits, p.mi_zy_bits)).collect(),
            Style::Reference,
            color(7),
        ));
    }
    if let Some(k) = knee {
        chart = chart.with(Series::new("knee", vec![k], Style::Markers, color(1)));
    }
    chart
}

fn beta_panels(points: &[IBCurvePoint], curve: &AggregatedCurve, beta_star: Option<f64>) -> String {
    let panel = |name: &str, f: fn(&IBCurvePoint) -> f64, g: fn(&crate::sweep::BetaMean) -> f64| {
        let mut c = Chart::new(format!("{name} vs β"), "β", format!("{name} [bits]"))
            .log_x()
            .with(Series::new("models", points.iter().map(|p| (p.beta, f(p))).collect(), Style::Markers, color(0)))
            .with(Series::new("mean", curve.means.iter().map(|m| (m.beta, g(m))).collect(), Style::Line, color(2)));
        if let Some(b) = beta_star {
            c = c.marker(b, "β*");
        }
        c
    };
    let mut acc = Chart::new("clean accuracy vs β", "β", "accuracy")
        .log_x()
        .with(Series::new(
            "models",
            points.iter().map(|p| (p.beta, p.clean_accuracy)).collect(),
            Style::Markers,
            color(0),
        ));
    if let Some(b) = beta_star {
        acc = acc.marker(b, "β*");
    }
    panels(&[
        panel("I(X;Z)", |p| p.mi_xz_bits, |m| m.mi_xz_bits),
        panel("I(Z;Y)", |p| p.mi_zy_bits, |m| m.mi_zy_bits),
        acc,
    ])
}

fn sweep_figures(cfg: &ExperimentConfig, rec: &mut RunRecord, points: &[IBCurvePoint], report: Option<&PhaseReport>) -> Result<()> {
    let curve = curve_aggregate(points);
    let reference = match cfg.dataset.kind {
        DatasetKind::Synthetic => Some(reference_curve(cfg)?),
        DatasetKind::Mnist => None,
    };
    let knee = report.map(|r| (r.knee.mi_xz_bits, r.knee.mi_zy_bits));
    let title = format!("IB curve of {}", objective_label(cfg.objective.name()));
    svg(rec, "information_plane.svg", &information_plane(&title, points, &curve, reference.as_deref(), knee).to_svg())?;
    svg(rec, "mi_vs_beta.svg", &beta_panels(points, &curve, report.map(|r| r.knee.beta_star)))
}

fn sweep_run(cfg: &ExperimentConfig, rec: &mut RunRecord, force: bool) -> Result<()> {
    if cfg.objective.strength().is_none() {
        return Err(Error::Config(vec!["sweep needs an objective with a strength parameter".into()]));
    }
    rec.inputs_hash = inputs_hash(cfg)?;
    let data = prepare_data(cfg)?;
    let inputs = SweepInputs {
        train: &data.train,
        split: &data.split,
        test: &data.test,
    };
    let store = SweepStore::new(&rec.dir);
    let out = sweep(&inputs, &cfg.spec(), cfg.objective, &cfg.train, &cfg.sweep, &store, force)?;
    for a in ["points.csv", "manifest.json"] {
        rec.add(a);
    }
    for p in &out.points {
        rec.add(&format!("models/{}.ckpt", p.model_id));
    }
    rec.note("points", out.points.len());
    rec.note("reused", out.reused);
    rec.note("failures", out.failures.len());
    let report = if curve_aggregate(&out.points).means.len() >= 3 {
        let r = phase_report(&out.points)?;
        write_json(rec, "knee.json", &r)?;
        rec.note("beta_star", r.knee.beta_star);
        rec.note("spearman_beta_mi_xz", r.spearman_beta_mi_xz);
        Some(r)
    } else {
        None
    };
    sweep_figures(cfg, rec, &out.points, report.as_ref())?;
    if !out.failures.is_empty() {
        return Err(Error::Numerical(format!(
            "{} of {} sweep cells failed (first: {}: {})",
            out.failures.len(),
            cfg.sweep.betas.len() * cfg.sweep.seeds.len(),
            out.failures[0].model_id,
            out.failures[0].error
        )));
    }
    Ok(())
}

/// The completed sweep of `cfg`, running it first if needed.
pub fn sweep_points(cfg: &ExperimentConfig, force: bool) -> Result<(Vec<IBCurvePoint>, RunRecord)> {
    let rec = run_subcommand(Command::Sweep, cfg, force)?;
    Ok((SweepStore::new(&rec.dir).points()?, rec))
}

fn knee_text(r: &PhaseReport, curve: &AggregatedCurve) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:>11} {:>9} {:>9} {:>8} {:>9}", "beta", "I(X;Z)", "I(Z;Y)", "acc", "distance");
    for (m, (_, d)) in curve.means.iter().zip(&r.knee.profile) {
        let _ = writeln!(
            t,
            "{:>11.4e} {:>9.4} {:>9.4} {:>8.4} {:>9.4}{}",
            m.beta,
            m.mi_xz_bits,
            m.mi_zy_bits,
            m.clean_accuracy,
            d,
            if m.beta == r.knee.beta_star { "  <- knee" } else { "" }
        );
    }
    let _ = writeln!(
        t,
        "β* = {:.4e}{}; Spearman(β, I(X;Z)) = {:.3} on per-β means, {:.3} on all points; largest I(Z;Y) step below β* = {:.4} bits",
        r.knee.beta_star,
        if r.knee.low_confidence { " (low confidence)" } else { "" },
        r.spearman_beta_mi_xz,
        r.spearman_all_points,
        r.max_step_beyond_knee
    );
    t
}

fn knee_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    let (points, sweep_rec) = sweep_points(cfg, false)?;
    rec.inputs_hash = sweep_rec.inputs_hash.clone();
    let curve = curve_aggregate(&points);
    let r = phase_report(&points)?;
    write_json(rec, "knee.json", &r)?;
    rec.note("beta_star", r.knee.beta_star);
    rec.note("low_confidence", r.knee.low_confidence);
    rec.note("spearman_beta_mi_xz", r.spearman_beta_mi_xz);
    rec.note("spearman_all_points", r.spearman_all_points);
    rec.note("max_step_beyond_knee", r.max_step_beyond_knee);
    rec.note("sweep_dir", abs_display(&sweep_rec.dir));
    write_text(rec, "knee.txt", &knee_text(&r, &curve))?;
    rec.note("text_artifact", "knee.txt");
    sweep_figures(cfg, rec, &points, Some(&r))?;

    // bottleneck geometry below, at and above the knee
    let data = prepare_data(cfg)?;
    let rows = eval_subset(&data.test, cfg.mi.eval_samples.min(1000), cfg.mi.eval_seed);
    let (x, y) = data.test.gather(&rows);
    let k = curve.means.iter().position(|m| m.beta == r.knee.beta_star).expect("knee is a swept β");
    let picks = [0, k, curve.means.len() - 1];
    let seed = cfg.sweep.seeds[0];
    let store = SweepStore::new(&sweep_rec.dir);
    let mut charts = Vec::new();
    for &i in &picks {
        let beta = curve.means[i].beta;
        let id = crate::sweep::model_id(&cfg.objective.with_strength(beta), beta, seed);
        let model = TrainedModel::load(&store.checkpoint_path(&id))?;
        let proj = pca_project_2d(&model.codes(&x)?)?;
        let mut chart = Chart::new(format!("β = {beta:.3e}"), "PC 1", "PC 2");
        for c in 0..data.test.n_classes {
            let pts: Vec<(f64, f64)> = (0..proj.nrows()).filter(|&j| y[j] == c).map(|j| (proj[[j, 0]], proj[[j, 1]])).collect();
            chart = chart.with(Series::new(format!("{c}"), pts, Style::Markers, color(c)));
        }
        charts.push(chart);
    }
    svg(rec, "pca.svg", &panels(&charts))
}

/// β of the configured objective after applying `beta_from_knee`.
pub fn attack_objective(cfg: &ExperimentConfig, force: bool) -> Result<Objective> {
    if cfg.attack.beta_from_knee {
        let knee = run_subcommand(Command::Knee, cfg, force)?;
        let beta = knee
            .summary_f64("beta_star")
            .ok_or_else(|| Error::Integrity("knee record lacks beta_star".into()))?;
        Ok(cfg.objective.with_strength(beta))
    } else {
        Ok(cfg.objective)
    }
}

fn attack_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    rec.inputs_hash = inputs_hash(cfg)?;
    let objective = attack_objective(cfg, false)?;
    let test = prepare_data(cfg)?.test;
    let mut objectives = vec![Objective::Normal];
    if objective != Objective::Normal {
        objectives.push(objective);
    }
    let mut report = AttackReport::default();
    let mut models = Vec::new();
    for &seed in &cfg.attack.seeds {
        for &obj in &objectives {
            let mut c = cfg.clone();
            c.seed = seed;
            c.train.seed = seed;
            c.objective = obj;
            let (trained, train_rec) = trained_model(&c, false)?;
            models.push(abs_display(&train_rec.dir));
            let start = std::time::Instant::now();
            let result = attack_model(&trained.model, &test.features, &test.labels, &cfg.attack.attack)?;
            log::info!(
                "attacked {} seed {seed} in {:.1?}: clean {:.4}",
                obj.name(),
                start.elapsed(),
                result.clean_accuracy
            );
            report.results.push(TaggedResult {
                model_id: format!("{}-s{seed}", obj.name()),
                method: objective_label(obj.name()),
                objective: obj.name().into(),
                beta: obj.strength(),
                seed,
                result,
            });
        }
    }
    report.write_csv(&rec.path("attack.csv"))?;
    rec.add("attack.csv");
    rec.note("models", &models);
    rec.note("seeds", cfg.attack.seeds.len());
    if let Some(b) = objective.strength() {
        rec.note("beta", b);
    }
    for obj in &objectives {
        let label = objective_label(obj.name());
        let key = obj.name();
        if let Some(v) = report.clean_mean(&label) {
            rec.note(&format!("{key}_clean"), v);
        }
        for &e in &cfg.attack.attack.fgs_eps {
            if let Some(v) = report.fgs_mean(&label, e) {
                rec.note(&format!("{key}_fgs_{e}"), v);
            }
        }
        if let Some(v) = report.deepfool_mean(&label) {
            rec.note(&format!("{key}_deepfool_l2"), v);
        }
    }
    let text = format!(
        "Accuracy under attack ({} seeds)\n{}\nDeepFool perturbation size\n{}",
        cfg.attack.seeds.len(),
        report.accuracy_table(),
        report.deepfool_table()
    );
    rec.note("text_artifact", "tables.txt");
    write_text(rec, "tables.txt", &text)
}

/// Estimates of every method for one model, with the DPI audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiAudit {
    pub h_y_bits: f64,
    pub kde_xz: f64,
    pub kde_zy: f64,
    pub binning_xz: f64,
    pub binning_zy: f64,
    pub dv_xz: f64,
    pub zy_within_h_y: bool,
    pub zy_within_xz: bool,
}

fn mi_eval_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    rec.inputs_hash = inputs_hash(cfg)?;
    let (trained, train_rec) = trained_model(cfg, false)?;
    rec.note("model", abs_display(&train_rec.dir));
    let data = prepare_data(cfg)?;
    let rows = eval_subset(&data.test, cfg.mi.eval_samples, cfg.mi.eval_seed);
    let (x, y) = data.test.gather(&rows);
    let z = trained.codes(&x)?;
    let kxz = kde_mi_xz(&z, &cfg.mi.kde)?;
    let kzy = kde_mi_zy(&z, &y, &cfg.mi.kde)?;
    let bxz = binning_mi(&z, BinTarget::Values(&x), cfg.mi.bins)?;
    let bzy = binning_mi(&z, BinTarget::Labels(&y), cfg.mi.bins)?;
    let mut net = StatisticNet::new(x.ncols(), z.ncols(), &STATISTIC_HIDDEN, crate::derive_seed(cfg.mi.dv.seed, 3))?;
    let dxz = dv_train_estimate(&x, &z, &mut net, &cfg.mi.dv)?;
    let h_y = label_entropy_bits(&y);
    let audit = MiAudit {
        h_y_bits: h_y,
        kde_xz: kxz.value_bits,
        kde_zy: kzy.value_bits,
        binning_xz: bxz.value_bits,
        binning_zy: bzy.value_bits,
        dv_xz: dxz.value_bits,
        zy_within_h_y: kzy.value_bits <= h_y,
        zy_within_xz: kzy.value_bits <= kxz.value_bits + 0.1,
    };
    if !(audit.zy_within_h_y && audit.zy_within_xz) {
        log::warn!("data processing audit failed: {audit:?}");
    }
    let id = format!("{}-s{}", cfg.objective.name(), cfg.seed);
    let name = data.train.name.clone();
    let mut rows_out = vec![
        EstimateRow::new(&name, &id, "z:I(X;Z)", &kxz),
        EstimateRow::new(&name, &id, "z:I(Z;Y)", &kzy),
        EstimateRow::new(&name, &id, "z:I(X;Z)", &bxz),
        EstimateRow::new(&name, &id, "z:I(Z;Y)", &bzy),
        EstimateRow::new(&name, &id, "z:I(X;Z)", &dxz),
    ];
    if let Some(exact) = data.train.exact_mi_bits() {
        rows_out.push(EstimateRow::new(&name, "dataset", "x:I(X;Y)", &MIEstimate::new(crate::mi::Method::Exact, exact)));
    }
    crate::mi::write_estimates_csv(&rec.path("estimates.csv"), &rows_out)?;
    rec.add("estimates.csv");
    write_json(rec, "audit.json", &audit)?;
    for (k, v) in [
        ("kde_xz", audit.kde_xz),
        ("kde_zy", audit.kde_zy),
        ("binning_xz", audit.binning_xz),
        ("binning_zy", audit.binning_zy),
        ("dv_xz", audit.dv_xz),
        ("h_y", h_y),
    ] {
        rec.note(k, v);
    }
    rec.note("dpi_ok", audit.zy_within_h_y && audit.zy_within_xz);
    let proj = pca_project_2d(&z)?;
    let mut chart = Chart::new(format!("bottleneck of {id}"), "PC 1", "PC 2");
    for c in 0..data.test.n_classes {
        let pts: Vec<(f64, f64)> = (0..proj.nrows()).filter(|&j| y[j] == c).map(|j| (proj[[j, 0]], proj[[j, 1]])).collect();
        chart = chart.with(Series::new(format!("{c}"), pts, Style::Markers, color(c)));
    }
    svg(rec, "pca.svg", &chart.to_svg())?;
    let text = format!(
        "{:<10} {:>9} {:>9}\n{:<10} {:>9.4} {:>9.4}\n{:<10} {:>9.4} {:>9.4}\n{:<10} {:>9.4} {:>9}\nH(Y) = {h_y:.4} bits; DPI audit {}\n",
        "method", "I(X;Z)", "I(Z;Y)",
        "kde", audit.kde_xz, audit.kde_zy,
        "binning", audit.binning_xz, audit.binning_zy,
        "dv", audit.dv_xz, "-",
        if audit.zy_within_h_y && audit.zy_within_xz { "passed" } else { "FAILED" }
    );
    rec.note("text_artifact", "estimates.txt");
    write_text(rec, "estimates.txt", &text)
}

fn report_run(cfg: &ExperimentConfig, rec: &mut RunRecord) -> Result<()> {
    let mut dirs: Vec<PathBuf> = match std::fs::read_dir(&cfg.output_dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("run.json").exists()).collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    let mut text = String::new();
    let mut found = 0;
    for dir in dirs {
        let Some(run) = RunRecord::load(&dir)? else { continue };
        if run.status != RunStatus::Completed || run.command == Command::Report {
            continue;
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match run.command {
            Command::Attack => {
                let report = AttackReport::read_csv(&run.path("attack.csv"))?;
                let _ = writeln!(text, "== {name}\n{}\n{}", report.accuracy_table(), report.deepfool_table());
            }
            Command::Sweep => {
                let points = SweepStore::new(&dir).points()?;
                let run_cfg = ExperimentConfig::load(&run.path("config.toml"))?;
                let curve = curve_aggregate(&points);
                let r = if curve.means.len() >= 3 { Some(phase_report(&points)?) } else { None };
                let title = format!("IB curve of {}", objective_label(run_cfg.objective.name()));
                let knee = r.as_ref().map(|r| (r.knee.mi_xz_bits, r.knee.mi_zy_bits));
                let reference = match run_cfg.dataset.kind {
                    DatasetKind::Synthetic => Some(reference_curve(&run_cfg)?),
                    DatasetKind::Mnist => None,
                };
                svg(rec, &format!("{name}-information_plane.svg"), &information_plane(&title, &points, &curve, reference.as_deref(), knee).to_svg())?;
                svg(rec, &format!("{name}-mi_vs_beta.svg"), &beta_panels(&points, &curve, r.as_ref().map(|r| r.knee.beta_star)))?;
                match &r {
                    Some(r) => {
                        let _ = writeln!(text, "== {name}\n{}", knee_text(r, &curve));
                    }
                    None => {
                        let _ = writeln!(text, "== {name}: {} points, too few β values for a knee\n", points.len());
                    }
                }
            }
            _ => {
                let body = run
                    .summary
                    .get("text_artifact")
                    .and_then(Value::as_str)
                    .and_then(|a| std::fs::read_to_string(run.path(a)).ok());
                let _ = match body {
                    Some(b) => writeln!(text, "== {name}\n{b}"),
                    None => writeln!(text, "== {name}\n{}\n", serde_json::to_string_pretty(&run.summary)?),
                };
            }
        }
        found += 1;
    }
    if found == 0 {
        text = "no results\n".into();
    }
    rec.note("runs", found);
    rec.note("text_artifact", "report.txt");
    write_text(rec, "report.txt", &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn synthetic_cfg(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_toml("[dataset]\nkind = \"synthetic\"\n[train]\nmax_epochs = 2\nlearning_rate = 0.01\nbatch_size = 64\n")
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        cfg.output_dir = out.to_path_buf();
        cfg.mi.eval_samples = 300;
        cfg
    }

    #[test]
    fn report_on_empty_store_says_no_results() {
        let dir = tempfile::tempdir().unwrap();
        let rec = run_subcommand(Command::Report, &synthetic_cfg(dir.path()), false).unwrap();
        let text = std::fs::read_to_string(rec.path("report.txt")).unwrap();
        assert_eq!(text, "no results\n");
    }

    #[test]
    fn completed_train_is_cached_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_cfg(dir.path());
        let first = run_subcommand(Command::Train, &cfg, false).unwrap();
        assert!(!first.cached);
        assert_eq!(first.status, RunStatus::Completed);
        for a in &first.artifacts {
            assert!(first.path(a).exists(), "{a}");
        }
        let again = run_subcommand(Command::Train, &cfg, false).unwrap();
        assert!(again.cached);
        let forced = run_subcommand(Command::Train, &cfg, true).unwrap();
        assert!(!forced.cached);
        assert_eq!(
            std::fs::read(first.path("model.ckpt")).unwrap(),
            std::fs::read(forced.path("model.ckpt")).unwrap()
        );
    }

    #[test]
    fn digest_ignores_unrelated_sections() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_cfg(dir.path());
        let mut other = cfg.clone();
        other.attack.seeds = vec![7];
        other.output_dir = PathBuf::from("elsewhere");
        assert_eq!(command_digest(&cfg, Command::Train).unwrap(), command_digest(&other, Command::Train).unwrap());
        assert_ne!(command_digest(&cfg, Command::Attack).unwrap(), command_digest(&other, Command::Attack).unwrap());
    }

    #[test]
    fn failed_run_keeps_record_with_cause() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synthetic_cfg(dir.path());
        cfg.dataset.kind = DatasetKind::Mnist;
        cfg.model = Some(crate::objectives::ModelSpec::mnist());
        cfg.dataset.dir = Some(dir.path().join("missing"));
        let err = run_subcommand(Command::Train, &cfg, false).unwrap_err();
        assert_eq!(err.exit_code(), 5);
        let rec = RunRecord::load(&run_dir(&cfg, Command::Train).unwrap()).unwrap().unwrap();
        assert!(matches!(rec.status, RunStatus::Failed { .. }));
        assert_eq!(rec.artifacts, vec!["config.toml".to_string()]);
    }
}

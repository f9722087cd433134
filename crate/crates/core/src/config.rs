//! Experiment configuration: a TOML file plus command-line overrides,
//! resolved to explicit values and validated in one pass.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::ba::{geometric_grid, CurveOptions};
use crate::data::{calibrate_synthetic, data_dir, gen_synthetic, load_idx_pair, split, LabeledDataset, SplitIndices};
use crate::error::{Error, Result};
use crate::mi::{DvConfig, KdeConfig};
use crate::objectives::{ModelSpec, Objective, TrainConfig};
use crate::sweep::SweepConfig;
use crate::tensor::sha256_hex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Mnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// IDX directory; defaults to `$IBLAB_DATA_DIR/mnist`.
    pub dir: Option<PathBuf>,
    /// Train:validation ratio.
    pub split: [usize; 2],
    pub split_seed: u64,
    /// Keep only the first `n` training rows (validation scaled to match).
    pub train_limit: Option<usize>,
    pub synthetic_mi_bits: f64,
    pub synthetic_balance: f64,
    pub synthetic_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            dir: None,
            split: [4, 1],
            split_seed: 0,
            train_limit: None,
            synthetic_mi_bits: 0.99,
            synthetic_balance: 0.5,
            synthetic_seed: 0,
        }
    }
}

/// Reference curve settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaSection {
    pub cardinality: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub points: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaSection {
    fn default() -> Self {
        Self {
            cardinality: 10,
            beta_lo: 0.5,
            beta_hi: 200.0,
            points: 40,
            tol: 1e-9,
            max_iter: 5000,
        }
    }
}

impl BaSection {
    pub fn grid(&self) -> Vec<f64> {
        geometric_grid(self.beta_lo, self.beta_hi, self.points)
    }

    pub fn options(&self, seed: u64) -> CurveOptions {
        CurveOptions {
            cardinality: self.cardinality,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
            ..CurveOptions::default()
        }
    }
}

/// Settings of `mi-eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiSection {
    pub eval_samples: usize,
    pub eval_seed: u64,
    pub kde: KdeConfig,
    pub bins: usize,
    pub dv: DvConfig,
}

impl Default for MiSection {
    fn default() -> Self {
        Self {
            eval_samples: 2000,
            eval_seed: 0,
            kde: KdeConfig::default(),
            bins: 30,
            dv: DvConfig::default(),
        }
    }
}

/// Settings of `attack` beyond the per-model attack parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    #[serde(flatten)]
    pub attack: AttackConfig,
    /// One model per seed for the baseline and for the configured objective.
    pub seeds: Vec<u64>,
    /// Take β of the configured objective from the knee of this
    /// configuration's completed sweep.
    pub beta_from_knee: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            attack: AttackConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            beta_from_knee: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// Defaults to the dataset's standard network.
    pub model: Option<ModelSpec>,
    pub objective: Objective,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub attack: AttackSection,
    pub ba: BaSection,
    pub mi: MiSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            model: None,
            objective: Objective::Normal,
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            attack: AttackSection::default(),
            ba: BaSection::default(),
            mi: MiSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<DatasetKind>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub objective: Option<String>,
    pub beta: Option<f64>,
    pub max_epochs: Option<usize>,
    pub train_limit: Option<usize>,
}

fn errors_of(r: Result<()>) -> Vec<String> {
    match r {
        Err(Error::Config(e)) => e,
        Err(other) => vec![other.to_string()],
        Ok(()) => Vec::new(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Every unknown key and every invalid value is
    /// reported together.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let cfg: Self = serde_ignored::deserialize(de, |path| unknown.push(format!("unknown key `{path}`")))
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut errs = unknown;
        errs.extend(cfg.violations());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(vec![format!("config does not serialize: {e}")]))
    }

    /// Applies overrides and fills every defaulted field, then validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(k) = o.dataset {
            if k != self.dataset.kind {
                self.model = None;
            }
            self.dataset.kind = k;
        }
        if let Some(d) = &o.data_dir {
            self.dataset.dir = Some(d.clone());
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.max_epochs {
            self.train.max_epochs = n;
        }
        if let Some(n) = o.train_limit {
            self.dataset.train_limit = Some(n);
        }
        let spec = self.model.clone().unwrap_or_else(|| match self.dataset.kind {
            DatasetKind::Mnist => ModelSpec::mnist(),
            DatasetKind::Synthetic => ModelSpec::synthetic(),
        });
        if let Some(name) = &o.objective {
            let beta = o.beta.or(self.objective.strength()).unwrap_or(0.0);
            self.objective = match name.as_str() {
                "normal" => Objective::Normal,
                "dropout" => Objective::Dropout { rate: beta },
                "vib" => Objective::Vib { beta },
                "nib" => Objective::Nib { beta, noise_sigma: 0.5 },
                "aib" => Objective::aib(beta, spec.input_dim()),
                other => return Err(Error::Config(vec![format!("unknown objective `{other}`")])),
            };
        } else if let Some(b) = o.beta {
            self.objective = self.objective.with_strength(b);
        }
        if self.dataset.kind == DatasetKind::Mnist && self.dataset.dir.is_none() {
            self.dataset.dir = Some(data_dir().join("mnist"));
        }
        self.model = Some(spec);
        self.train.seed = self.seed;
        let errs = self.violations();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn spec(&self) -> ModelSpec {
        self.model.clone().unwrap_or_else(|| match self.dataset.kind {
            DatasetKind::Mnist => ModelSpec::mnist(),
            DatasetKind::Synthetic => ModelSpec::synthetic(),
        })
    }

    /// All constraint violations across sections.
    pub fn violations(&self) -> Vec<String> {
        let spec = self.spec();
        let mut errs = errors_of(spec.validate());
        if errs.is_empty() {
            errs.extend(errors_of(self.objective.validate(spec.input_dim())));
            let (d_in, k) = match self.dataset.kind {
                DatasetKind::Mnist => (784, 10),
                DatasetKind::Synthetic => (12, 2),
            };
            if spec.input_dim() != d_in || spec.n_classes() != k {
                errs.push(format!(
                    "model {:?} does not fit the dataset ({d_in} inputs, {k} classes)",
                    spec.widths
                ));
            }
        }
        errs.extend(errors_of(self.train.validate()));
        errs.extend(self.sweep.violations());
        let d = &self.dataset;
        if d.split.contains(&0) {
            errs.push(format!("split ratio parts must be positive, got {:?}", d.split));
        }
        if d.train_limit == Some(0) {
            errs.push("train_limit must be positive".into());
        }
        if !(d.synthetic_mi_bits > 0.0 && d.synthetic_mi_bits <= 1.0) {
            errs.push(format!("synthetic_mi_bits must lie in (0, 1], got {}", d.synthetic_mi_bits));
        }
        if !(d.synthetic_balance > 0.0 && d.synthetic_balance < 1.0) {
            errs.push(format!("synthetic_balance must lie in (0, 1), got {}", d.synthetic_balance));
        }
        let a = &self.attack;
        if a.seeds.is_empty() {
            errs.push("attack needs at least one seed".into());
        }
        for &e in a.attack.fgs_eps.iter().chain(&a.attack.tgs_eps) {
            if !(0.0..=1.0).contains(&e) {
                errs.push(format!("attack ε must lie in [0, 1], got {e}"));
            }
        }
        if a.attack.deepfool.max_iter == 0 {
            errs.push("DeepFool max_iter must be ≥ 1".into());
        }
        if !(a.attack.deepfool.overshoot >= 0.0) {
            errs.push(format!("DeepFool overshoot must be ≥ 0, got {}", a.attack.deepfool.overshoot));
        }
        if a.attack.chunk == 0 {
            errs.push("attack chunk must be ≥ 1".into());
        }
        let b = &self.ba;
        if b.cardinality < 2 {
            errs.push(format!("BA cardinality must be ≥ 2, got {}", b.cardinality));
        }
        if !(b.beta_lo > 0.0 && b.beta_hi > b.beta_lo) {
            errs.push(format!("BA grid needs 0 < beta_lo < beta_hi, got {} and {}", b.beta_lo, b.beta_hi));
        }
        if b.points < 2 {
            errs.push(format!("BA grid needs ≥ 2 points, got {}", b.points));
        }
        if !(b.tol > 0.0) || b.max_iter == 0 {
            errs.push("BA tol must be positive and max_iter ≥ 1".into());
        }
        if self.mi.eval_samples < 2 {
            errs.push(format!("mi.eval_samples must be ≥ 2, got {}", self.mi.eval_samples));
        }
        if self.mi.bins < 2 {
            errs.push(format!("mi.bins must be ≥ 2, got {}", self.mi.bins));
        }
        errs.extend(errors_of(self.mi.kde.validate()));
        errs
    }

    /// Digest of everything that influences results (the output location
    /// does not).
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }
}

/// Loaded data for one configuration.
pub struct Prepared {
    pub train: LabeledDataset,
    pub split: SplitIndices,
    /// Held-out evaluation set: the MNIST test file, or the synthetic
    /// validation rows.
    pub test: LabeledDataset,
}

/// Loads (or generates) the configured dataset and its split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let d = &cfg.dataset;
    let ratio = (d.split[0], d.split[1]);
    match d.kind {
        DatasetKind::Mnist => {
            let dir = d.dir.clone().unwrap_or_else(|| data_dir().join("mnist"));
            let (train, test) = load_idx_pair(&dir, "mnist")?;
            let mut s = split(train.len(), ratio, d.split_seed)?;
            limit(&mut s, d.train_limit);
            Ok(Prepared { train, split: s, test })
        }
        DatasetKind::Synthetic => {
            let mut spec = calibrate_synthetic(d.synthetic_mi_bits, d.synthetic_balance)?;
            spec.seed = d.synthetic_seed;
            let train = gen_synthetic(&spec)?;
            let mut s = split(train.len(), ratio, d.split_seed)?;
            limit(&mut s, d.train_limit);
            let test = train.subset(&s.validation);
            Ok(Prepared { train, split: s, test })
        }
    }
}

fn limit(s: &mut SplitIndices, n: Option<usize>) {
    if let Some(n) = n {
        let keep_val = (n * s.ratio.1 / s.ratio.0).max(1);
        s.train.truncate(n);
        s.validation.truncate(keep_val);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg = ExperimentConfig::from_toml("")
            .unwrap()
            .resolve(&Overrides {
                dataset: Some(DatasetKind::Synthetic),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(cfg.model, Some(ModelSpec::synthetic()));
        assert_eq!(cfg.train.learning_rate, 2e-4);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.sweep.betas.len(), 16);
        assert_eq!(cfg.attack.attack.fgs_eps, vec![0.05, 0.10, 0.15]);
    }

    #[test]
    fn negative_beta_and_unknown_keys_reported_together() {
        let text = r#"
            colour = "red"
            [objective]
            kind = "vib"
            beta = -1.0
            [train]
            learning_rate = -0.1
            bogus = 3
        "#;
        let Err(Error::Config(errs)) = ExperimentConfig::from_toml(text) else {
            panic!("expected a config error");
        };
        assert_eq!(errs.len(), 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("colour")));
        assert!(errs.iter().any(|e| e.contains("train.bogus")));
        assert!(errs.iter().any(|e| e.contains('β')));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml("[objective]\nkind = \"aib\"\nbeta = 0.3\ninner_steps = 2\npixels = 100\n")
            .unwrap()
            .resolve(&Overrides::default())
            .unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.digest().unwrap(), cfg.digest().unwrap());
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[objective]\nkind = \"vib\"\nbeta = 0.1\n")
            .unwrap()
            .resolve(&Overrides {
                seed: Some(9),
                beta: Some(0.5),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.objective, Objective::Vib { beta: 0.5 });
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let text = "[dataset]\nkind = \"synthetic\"\n[model]\nwidths = [784, 10, 10]\nbottleneck = 1\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aib_update, noise_rng, train_step, AibBatch, Model, ModelSpec, Objective};
use crate::data::{minibatches, partner_batches, LabeledDataset, SplitIndices};
use crate::error::{Error, Result};
use crate::mi::StatisticNet;
use crate::tensor::{Checkpoint, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Adam rate for the statistic network; defaults to `learning_rate`.
    pub statistic_learning_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 256,
            patience: 20,
            max_epochs: 200,
            seed: 0,
            statistic_learning_rate: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.learning_rate > 0.0) {
            errs.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if let Some(lr) = self.statistic_learning_rate {
            if !(lr > 0.0) {
                errs.push(format!("statistic learning rate must be positive, got {lr}"));
            }
        }
        if self.batch_size < 2 {
            errs.push(format!("batch size must be ≥ 2, got {}", self.batch_size));
        }
        if self.patience == 0 {
            errs.push("patience must be ≥ 1".into());
        }
        if self.max_epochs == 0 {
            errs.push("max epochs must be ≥ 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    /// Mean DV bound (nats) over the epoch's outer steps, AIB only.
    pub dv_bound: Option<f64>,
}

/// Best-validation model plus the full per-epoch log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub config: TrainConfig,
}

/// Argmax accuracy on `indices`, evaluated in fixed chunks.
pub fn evaluate(model: &Model, dataset: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty index set".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(1024) {
        let (x, y) = dataset.gather(chunk);
        let pred = model.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Epoch loop with early stopping on validation accuracy. Returns the
/// parameters of the best epoch.
pub fn train(
    dataset: &LabeledDataset,
    split: &SplitIndices,
    spec: &ModelSpec,
    objective: Objective,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.dim() != spec.input_dim() || dataset.n_classes != spec.n_classes() {
        return Err(Error::Shape(format!(
            "dataset has {} features and {} classes, model expects {} and {}",
            dataset.dim(),
            dataset.n_classes,
            spec.input_dim(),
            spec.n_classes()
        )));
    }
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Data("training and validation splits must be nonempty".into()));
    }
    let mut model = Model::new(spec.clone(), objective, config.seed)?;
    let mut rng = noise_rng(config.seed);
    let stat_lr = config.statistic_learning_rate.unwrap_or(config.learning_rate);

    let mut log = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        let batches = minibatches(&split.train, config.batch_size, config.seed, epoch as u64)?;
        let partners = match objective {
            Objective::Aib { .. } => Some(partner_batches(&split.train, &batches, config.seed, epoch as u64)),
            _ => None,
        };
        let (mut loss_sum, mut dv_sum, mut clipped) = (0.0, 0.0, 0usize);
        for (i, rows) in batches.iter().enumerate() {
            let (x, y) = dataset.gather(rows);
            let stats = match &partners {
                Some(p) => {
                    let batch = AibBatch {
                        x,
                        labels: y,
                        x_hat: dataset.features.select(ndarray::Axis(0), &p[i]),
                    };
                    aib_update(&mut model, &batch, config.learning_rate, stat_lr)
                }
                None => train_step(&mut model, &x, &y, config.learning_rate, &mut rng),
            }
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "{} run (seed {}) diverged at epoch {epoch}, batch {i}: {msg}",
                    objective.name(),
                    config.seed
                )),
                other => other,
            })?;
            loss_sum += stats.loss;
            dv_sum += stats.dv_bound.unwrap_or(0.0);
            clipped += usize::from(stats.clipped);
        }
        if clipped > 0 {
            log::warn!("epoch {epoch}: DV term saturated in {clipped} of {} steps; its gradient was skipped there", batches.len());
        }
        let val_acc = evaluate(&model, dataset, &split.validation)?;
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            val_acc,
            dv_bound: partners.as_ref().map(|_| dv_sum / n),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4}, val acc {:.4}{}",
            objective.name(),
            record.train_loss,
            val_acc,
            record.dv_bound.map(|d| format!(", dv {d:.3}")).unwrap_or_default()
        );
        log.push(record);
        if val_acc > best.2 {
            best = (model.clone(), epoch, val_acc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok(TrainedModel {
        model: best.0,
        log,
        best_epoch: best.1,
        config: *config,
    })
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    crate::persist::write_csv(path, crate::persist::TRAIN_LOG_SCHEMA, log)
}

impl TrainedModel {
    pub fn best_val_acc(&self) -> f64 {
        self.log[self.best_epoch].val_acc
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.config.seed);
        ck.metadata.insert("spec".into(), serde_json::to_value(&self.model.spec)?);
        ck.metadata.insert("objective".into(), serde_json::to_value(self.model.objective)?);
        ck.metadata.insert("train_config".into(), serde_json::to_value(self.config)?);
        ck.metadata.insert("best_epoch".into(), self.best_epoch.into());
        ck.metadata.insert("log".into(), serde_json::to_value(&self.log)?);
        ck.stores.push(("encoder".into(), self.model.encoder.clone()));
        ck.stores.push(("decoder".into(), self.model.decoder.clone()));
        if let Some(net) = &self.model.statistic {
            ck.stores.push(("statistic".into(), net.store.clone()));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |key: &str| {
            ck.metadata
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Integrity(format!("checkpoint metadata lacks `{key}`")))
        };
        let spec: ModelSpec = serde_json::from_value(field("spec")?)?;
        let objective: Objective = serde_json::from_value(field("objective")?)?;
        let config: TrainConfig = serde_json::from_value(field("train_config")?)?;
        let best_epoch: usize = serde_json::from_value(field("best_epoch")?)?;
        let log: Vec<EpochRecord> = serde_json::from_value(field("log")?)?;
        let store = |name: &str| {
            ck.store(name)
                .cloned()
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks the `{name}` store")))
        };
        let statistic = match objective {
            Objective::Aib { .. } => {
                let mut widths = vec![spec.input_dim() + spec.bottleneck_dim()];
                widths.extend_from_slice(&super::STATISTIC_HIDDEN);
                widths.push(1);
                Some(StatisticNet {
                    widths,
                    store: store("statistic")?,
                })
            }
            _ => None,
        };
        if best_epoch >= log.len() {
            return Err(Error::Integrity(format!("best epoch {best_epoch} outside a {}-epoch log", log.len())));
        }
        Ok(Self {
            model: Model {
                spec,
                objective,
                encoder: store("encoder")?,
                decoder: store("decoder")?,
                statistic,
            },
            log,
            best_epoch,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Deterministic bottleneck codes for a batch of inputs.
    pub fn codes(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.model.forward_bottleneck(x)?.0)
    }
}

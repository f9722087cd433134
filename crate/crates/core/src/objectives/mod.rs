//! Bottleneck classifiers `x → G_θ → z → D_φ → logits` and the objectives
//! they are trained under.

mod aib;
mod train;

pub use aib::{
    aib_update, build_aib_outer, dv_clip_limit, mask_rows, saliency, saliency_masks, statistic_step,
    AibBatch, AibOuter,
};
pub use train::{evaluate, train, write_train_log, EpochRecord, TrainConfig, TrainedModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::mi::StatisticNet;
use crate::tensor::{init_layers, init_params, linear_forward, Bound, Graph, Init, LayerShape, Matrix, NodeId, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    #[default]
    Relu,
}

/// Dense layer widths with `widths[bottleneck]` as the representation `z`.
/// Hidden layers use ReLU, the bottleneck uses `bottleneck_activation`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub bottleneck: usize,
    #[serde(default)]
    pub bottleneck_activation: Activation,
}

impl ModelSpec {
    pub fn mnist() -> Self {
        Self {
            widths: vec![784, 128, 128, 10, 128, 10],
            bottleneck: 3,
            bottleneck_activation: Activation::Relu,
        }
    }

    pub fn synthetic() -> Self {
        Self {
            widths: vec![12, 10, 10, 2, 10, 2],
            bottleneck: 3,
            bottleneck_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.widths.len() < 3 {
            errs.push(format!("need input, bottleneck and output widths, got {:?}", self.widths));
        }
        if self.widths.contains(&0) {
            errs.push("layer widths must be positive".into());
        }
        if self.bottleneck == 0 || self.bottleneck + 1 >= self.widths.len() {
            errs.push(format!(
                "bottleneck index {} must name a hidden layer of {:?}",
                self.bottleneck, self.widths
            ));
        }
        if self.widths.last() == Some(&1) {
            errs.push("need at least two output classes".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.widths[self.bottleneck]
    }

    pub fn n_classes(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    fn encoder_depth(&self) -> usize {
        self.bottleneck
    }

    fn decoder_depth(&self) -> usize {
        self.widths.len() - 1 - self.bottleneck
    }
}

/// Training objective and its regularization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    Normal,
    Dropout { rate: f64 },
    /// Gaussian encoder `N(μ, diag σ²)` with a KL penalty to `N(0, I)`.
    Vib { beta: f64 },
    /// Additive noise on `z` plus the pairwise-distance entropy penalty.
    Nib { beta: f64, noise_sigma: f64 },
    /// Cross-entropy plus `β` times a trained DV bound on `I(X_S; Z)`.
    Aib { beta: f64, inner_steps: usize, pixels: usize },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Normal => "normal",
            Objective::Dropout { .. } => "dropout",
            Objective::Vib { .. } => "vib",
            Objective::Nib { .. } => "nib",
            Objective::Aib { .. } => "aib",
        }
    }

    /// The regularization strength (`rate` for dropout).
    pub fn strength(&self) -> Option<f64> {
        match *self {
            Objective::Normal => None,
            Objective::Dropout { rate } => Some(rate),
            Objective::Vib { beta } | Objective::Nib { beta, .. } | Objective::Aib { beta, .. } => Some(beta),
        }
    }

    /// Copy with the regularization strength replaced.
    pub fn with_strength(self, value: f64) -> Self {
        match self {
            Objective::Normal => Objective::Normal,
            Objective::Dropout { .. } => Objective::Dropout { rate: value },
            Objective::Vib { .. } => Objective::Vib { beta: value },
            Objective::Nib { noise_sigma, .. } => Objective::Nib { beta: value, noise_sigma },
            Objective::Aib { inner_steps, pixels, .. } => Objective::Aib {
                beta: value,
                inner_steps,
                pixels,
            },
        }
    }

    /// AIB with one inner step and a quarter of the input pixels.
    pub fn aib(beta: f64, input_dim: usize) -> Self {
        Objective::Aib {
            beta,
            inner_steps: 1,
            pixels: (input_dim / 4).max(1),
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut errs = Vec::new();
        let check_beta = |beta: f64, errs: &mut Vec<String>| {
            if !(beta >= 0.0) || !beta.is_finite() {
                errs.push(format!("β must be a finite value ≥ 0, got {beta}"));
            }
        };
        match *self {
            Objective::Normal => {}
            Objective::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    errs.push(format!("dropout rate must lie in [0, 1), got {rate}"));
                }
            }
            Objective::Vib { beta } => check_beta(beta, &mut errs),
            Objective::Nib { beta, noise_sigma } => {
                check_beta(beta, &mut errs);
                if !(noise_sigma > 0.0) {
                    errs.push(format!("NIB noise σ must be positive, got {noise_sigma}"));
                }
            }
            Objective::Aib { beta, inner_steps, pixels } => {
                check_beta(beta, &mut errs);
                if inner_steps == 0 {
                    errs.push("AIB inner steps k must be ≥ 1".into());
                }
                if pixels == 0 || pixels > input_dim {
                    errs.push(format!("AIB pixel count p must lie in [1, {input_dim}], got {pixels}"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Encoder, decoder and (for AIB) the statistic network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub objective: Objective,
    pub encoder: ParamStore,
    pub decoder: ParamStore,
    pub statistic: Option<StatisticNet>,
}

/// Hidden widths of the AIB statistic network.
pub const STATISTIC_HIDDEN: [usize; 2] = [128, 64];

impl Model {
    pub fn new(spec: ModelSpec, objective: Objective, seed: u64) -> Result<Self> {
        spec.validate()?;
        objective.validate(spec.input_dim())?;
        let b = spec.bottleneck;
        let mut layers: Vec<LayerShape> = (0..b)
            .map(|i| LayerShape {
                fan_in: spec.widths[i],
                fan_out: spec.widths[i + 1],
                init: Init::HeUniform,
            })
            .collect();
        let last = layers.last_mut().expect("bottleneck ≥ 1");
        if matches!(objective, Objective::Vib { .. }) {
            last.fan_out *= 2;
        }
        if matches!(objective, Objective::Vib { .. }) || spec.bottleneck_activation == Activation::Linear {
            last.init = Init::GlorotUniform;
        }
        let encoder = init_layers(&layers, derive_seed(seed, 1))?;
        let decoder = init_params(&spec.widths[b..], derive_seed(seed, 2))?;
        let statistic = match objective {
            Objective::Aib { .. } => Some(StatisticNet::new(
                spec.input_dim(),
                spec.bottleneck_dim(),
                &STATISTIC_HIDDEN,
                derive_seed(seed, 3),
            )?),
            _ => None,
        };
        Ok(Self {
            spec,
            objective,
            encoder,
            decoder,
            statistic,
        })
    }

    /// Deterministic evaluation path: `(z, logits)`. Stochastic encoders use
    /// their mean, noise-injected ones the noise-free code.
    pub fn forward_bottleneck(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.spec.input_dim(),
                x.ncols()
            )));
        }
        let mut g = Graph::new();
        let be = self.encoder.bind_frozen(&mut g);
        let bd = self.decoder.bind_frozen(&mut g);
        let xi = g.constant(x.clone());
        let enc = encode(&mut g, self, &be, xi, None)?;
        let logits = decode(&mut g, self, &bd, enc.z, None)?;
        Ok((g.value(enc.code).clone(), g.value(logits).clone()))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let (_, logits) = self.forward_bottleneck(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Inverted-dropout mask: entries are `1/(1−rate)` with probability
/// `1−rate`, else 0.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() >= rate { keep } else { 0.0 })
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Applies dropout to a hidden activation in training passes.
fn maybe_dropout(g: &mut Graph, model: &Model, h: NodeId, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
    match (model.objective, rng) {
        (Objective::Dropout { rate }, Some(rng)) if rate > 0.0 => {
            let (r, c) = g.value(h).dim();
            let mask = g.constant(dropout_mask(r, c, rate, rng));
            g.mul(h, mask)
        }
        _ => Ok(h),
    }
}

/// Encoder output nodes.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// What the decoder consumes (a sample in stochastic training passes).
    pub z: NodeId,
    /// The deterministic representation: `z` itself, the mean for VIB, the
    /// noise-free code for NIB.
    pub code: NodeId,
    /// VIB only: batch-mean `KL(N(μ,σ²) ‖ N(0,I))` in nats.
    pub kl: Option<NodeId>,
}

/// Runs `G_θ`. `rng` is `Some` for training passes (dropout masks, VIB
/// samples, NIB noise) and `None` for the deterministic path.
pub fn encode(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    x: NodeId,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let depth = model.spec.encoder_depth();
    let mut h = x;
    for layer in 0..depth {
        h = linear_forward(g, h, bound.node(2 * layer), bound.node(2 * layer + 1))?;
        if layer + 1 < depth {
            h = g.relu(h);
            h = maybe_dropout(g, model, h, rng.as_deref_mut())?;
        }
    }
    let dz = model.spec.bottleneck_dim();
    match model.objective {
        Objective::Vib { .. } => {
            let mu = g.slice_cols(h, 0, dz)?;
            let log_var = g.slice_cols(h, dz, 2 * dz)?;
            let var = g.exp(log_var);
            let mu2 = g.square(mu);
            let a = g.add(mu2, var)?;
            let a = g.sub(a, log_var)?;
            let mean = g.mean_all(a);
            // 0.5 · Σ_j (μ² + σ² − log σ² − 1), averaged over rows
            let scaled = g.scale(mean, 0.5 * dz as f64);
            let offset = g.constant(Matrix::from_elem((1, 1), 0.5 * dz as f64));
            let kl = g.sub(scaled, offset)?;
            let z = match rng {
                Some(rng) => {
                    let half = g.scale(log_var, 0.5);
                    let std = g.exp(half);
                    let eps = g.constant(gaussian(g.value(mu).nrows(), dz, rng));
                    let noise = g.mul(std, eps)?;
                    g.add(mu, noise)?
                }
                None => mu,
            };
            Ok(Encoded { z, code: mu, kl: Some(kl) })
        }
        _ => {
            let code = match model.spec.bottleneck_activation {
                Activation::Linear => h,
                Activation::Relu => g.relu(h),
            };
            let z = match (model.objective, rng) {
                (Objective::Nib { noise_sigma, .. }, Some(rng)) => {
                    let eps = g.constant(gaussian(g.value(code).nrows(), dz, rng) * noise_sigma);
                    g.add(code, eps)?
                }
                (Objective::Dropout { .. }, rng) => maybe_dropout(g, model, code, rng)?,
                _ => code,
            };
            Ok(Encoded { z, code, kl: None })
        }
    }
}

/// Runs `D_φ` from the bottleneck to the logits.
pub fn decode(g: &mut Graph, model: &Model, bound: &Bound, z: NodeId, mut rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
    let depth = model.spec.decoder_depth();
    let mut h = z;
    for layer in 0..depth {
        h = linear_forward(g, h, bound.node(2 * layer), bound.node(2 * layer + 1))?;
        if layer + 1 < depth {
            h = g.relu(h);
            h = maybe_dropout(g, model, h, rng.as_deref_mut())?;
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: NodeId,
    pub cross_entropy: NodeId,
    /// Compression term in nats before weighting by `β`.
    pub regularizer: Option<NodeId>,
    pub code: NodeId,
    pub logits: NodeId,
}

/// Loss graph for Normal, Dropout, VIB and NIB. For AIB this is the
/// cross-entropy alone; its compression term needs a second minibatch and
/// lives in [`build_aib_outer`].
pub fn build_loss(
    g: &mut Graph,
    model: &Model,
    encoder: &Bound,
    decoder: &Bound,
    x: NodeId,
    labels: &[usize],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<LossParts> {
    let enc = encode(g, model, encoder, x, rng.as_deref_mut())?;
    let logits = decode(g, model, decoder, enc.z, rng)?;
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let (total, regularizer) = match model.objective {
        Objective::Vib { beta } => {
            let kl = enc.kl.expect("VIB encoder yields a KL term");
            let weighted = g.scale(kl, beta);
            (g.add(ce, weighted)?, Some(kl))
        }
        Objective::Nib { beta, noise_sigma } => {
            let h = g.pairwise_entropy(enc.code, noise_sigma)?;
            let weighted = g.scale(h, beta);
            (g.add(ce, weighted)?, Some(h))
        }
        _ => (ce, None),
    };
    Ok(LossParts {
        total,
        cross_entropy: ce,
        regularizer,
        code: enc.code,
        logits,
    })
}

/// Values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub cross_entropy: f64,
    pub dv_bound: Option<f64>,
    pub clipped: bool,
}

/// One Adam step on encoder and decoder for the non-adversarial objectives.
pub fn train_step(model: &mut Model, x: &Matrix, labels: &[usize], learning_rate: f64, rng: &mut ChaCha8Rng) -> Result<StepStats> {
    let mut g = Graph::new();
    let be = model.encoder.bind(&mut g);
    let bd = model.decoder.bind(&mut g);
    let xi = g.constant(x.clone());
    let parts = build_loss(&mut g, model, &be, &bd, xi, labels, Some(rng))?;
    let loss = g.scalar(parts.total);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("training loss became {loss}")));
    }
    let mut grads = g.backward(parts.total)?;
    model.encoder.collect_grads(&mut grads, &be);
    model.decoder.collect_grads(&mut grads, &bd);
    model.encoder.adam_step(learning_rate)?;
    model.decoder.adam_step(learning_rate)?;
    Ok(StepStats {
        loss,
        cross_entropy: g.scalar(parts.cross_entropy),
        dv_bound: None,
        clipped: false,
    })
}

/// Seeded generator for a run's stochastic layers.
pub fn noise_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny(objective: Objective) -> Model {
        let spec = ModelSpec {
            widths: vec![5, 4, 3, 4, 3],
            bottleneck: 2,
            bottleneck_activation: Activation::Linear,
        };
        Model::new(spec, objective, 7).unwrap()
    }

    fn batch() -> (Matrix, Vec<usize>) {
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin().abs());
        (x, vec![0, 1, 2, 0, 1, 2])
    }

    #[test]
    fn shapes_of_reference_architectures() {
        let x = Array2::from_elem((3, 784), 0.2);
        let m = Model::new(ModelSpec::mnist(), Objective::Normal, 0).unwrap();
        let (z, logits) = m.forward_bottleneck(&x).unwrap();
        assert_eq!((z.ncols(), logits.ncols()), (10, 10));
        let s = Model::new(ModelSpec::synthetic(), Objective::Normal, 0).unwrap();
        let (z, logits) = s.forward_bottleneck(&Array2::zeros((4, 12))).unwrap();
        assert_eq!((z.ncols(), logits.ncols()), (2, 2));
        assert!(m.forward_bottleneck(&Array2::zeros((1, 12))).is_err());
    }

    #[test]
    fn deterministic_objectives_repeat_exactly() {
        let (x, _) = batch();
        for obj in [Objective::Normal, Objective::Vib { beta: 0.1 }, Objective::Nib { beta: 0.1, noise_sigma: 0.5 }] {
            let m = tiny(obj);
            assert_eq!(m.forward_bottleneck(&x).unwrap(), m.forward_bottleneck(&x).unwrap());
        }
    }

    #[test]
    fn invalid_objectives_rejected() {
        let spec = ModelSpec::synthetic();
        assert!(Model::new(spec.clone(), Objective::Dropout { rate: 1.0 }, 0).is_err());
        assert!(Model::new(spec.clone(), Objective::Vib { beta: -1.0 }, 0).is_err());
        assert!(Model::new(spec.clone(), Objective::Aib { beta: 1.0, inner_steps: 0, pixels: 3 }, 0).is_err());
        assert!(Model::new(spec.clone(), Objective::Aib { beta: 1.0, inner_steps: 1, pixels: 13 }, 0).is_err());
        let bad = ModelSpec { bottleneck: 5, ..spec };
        assert!(Model::new(bad, Objective::Normal, 0).is_err());
    }

    #[test]
    fn normal_loss_is_cross_entropy() {
        let m = tiny(Objective::Normal);
        let (x, y) = batch();
        let mut g = Graph::new();
        let be = m.encoder.bind(&mut g);
        let bd = m.decoder.bind(&mut g);
        let xi = g.constant(x.clone());
        let parts = build_loss(&mut g, &m, &be, &bd, xi, &y, None).unwrap();
        let (_, logits) = m.forward_bottleneck(&x).unwrap();
        let mut g2 = Graph::new();
        let l = g2.constant(logits);
        let ce = g2.softmax_cross_entropy(l, &y).unwrap();
        assert_eq!(g.scalar(parts.total), g2.scalar(ce));
    }

    #[test]
    fn dropout_rate_zero_matches_normal() {
        let (x, y) = batch();
        let mut a = tiny(Objective::Normal);
        let mut b = tiny(Objective::Dropout { rate: 0.0 });
        let sa = train_step(&mut a, &x, &y, 1e-2, &mut noise_rng(0)).unwrap();
        let sb = train_step(&mut b, &x, &y, 1e-2, &mut noise_rng(0)).unwrap();
        assert_eq!(sa.loss, sb.loss);
        assert_eq!(a.encoder, b.encoder);
    }

    #[test]
    fn dropout_keep_fraction() {
        let mut rng = noise_rng(1);
        let m = dropout_mask(1000, 100, 0.3, &mut rng);
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / 1e5;
        assert!((kept - 0.7).abs() < 0.01, "{kept}");
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
    }

    #[test]
    fn vib_kl_reference_values() {
        // μ = 0, log σ² = 0 → 0; μ = e₁ → 0.5 nats
        let m = tiny(Objective::Vib { beta: 1.0 });
        for (mu0, expected) in [(0.0, 0.0), (1.0, 0.5)] {
            let mut g = Graph::new();
            let mut h = Matrix::zeros((4, 8));
            h.column_mut(0).fill(mu0);
            let hn = g.constant(h);
            let mu = g.slice_cols(hn, 0, 4).unwrap();
            let lv = g.slice_cols(hn, 4, 8).unwrap();
            let var = g.exp(lv);
            let mu2 = g.square(mu);
            let a = g.add(mu2, var).unwrap();
            let a = g.sub(a, lv).unwrap();
            let mean = g.mean_all(a);
            let scaled = g.scale(mean, 0.5 * 4.0);
            let off = g.constant(Matrix::from_elem((1, 1), 2.0));
            let kl = g.sub(scaled, off).unwrap();
            assert!((g.scalar(kl) - expected).abs() < 1e-15);
        }
        assert_eq!(m.encoder.get("w1").unwrap().ncols(), 6);
    }

    #[test]
    fn nib_compression_matches_kde_formula() {
        let m = tiny(Objective::Nib { beta: 1.0, noise_sigma: 0.5 });
        let (x, y) = batch();
        let mut g = Graph::new();
        let be = m.encoder.bind(&mut g);
        let bd = m.decoder.bind(&mut g);
        let xi = g.constant(x.clone());
        let parts = build_loss(&mut g, &m, &be, &bd, xi, &y, None).unwrap();
        let (z, _) = m.forward_bottleneck(&x).unwrap();
        let kde = crate::mi::kde_mi_xz(&z, &crate::mi::KdeConfig::fixed(0.5)).unwrap();
        assert!((g.scalar(parts.regularizer.unwrap()) - kde.nats()).abs() < 1e-12);
    }
}

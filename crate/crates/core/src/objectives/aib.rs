//! The min-max update: `k` ascent steps for the statistic network on
//! saliency-masked inputs, then one descent step for encoder and decoder.

use super::{decode, encode, Model, Objective, StepStats};
use crate::error::{Error, Result};
use crate::mi::{dv_bound_node, StatisticNet};
use crate::tensor::{Bound, Graph, Matrix, NodeId};

/// A minibatch and an independent partner batch of the same size.
#[derive(Clone, Debug)]
pub struct AibBatch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub x_hat: Matrix,
}

/// `log m + 2`: beyond this the DV term is saturated and its gradient is
/// dropped for the step.
pub fn dv_clip_limit(batch: usize) -> f64 {
    (batch as f64).ln() + 2.0
}

/// `|∂‖z_i‖²/∂x_i|` for every row.
pub fn saliency(model: &Model, x: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let be = model.encoder.bind_frozen(&mut g);
    let xi = g.variable(x.clone());
    let enc = encode(&mut g, model, &be, xi, None)?;
    let sq = g.square(enc.code);
    let total = g.sum_all(sq);
    let mut grads = g.backward(total)?;
    let gx = grads
        .take(xi)
        .unwrap_or_else(|| Matrix::zeros(x.dim()));
    Ok(gx.mapv(f64::abs))
}

/// 0/1 masks keeping the `pixels` most salient inputs of each row. Ties go
/// to the lower index.
pub fn saliency_masks(model: &Model, x: &Matrix, pixels: usize) -> Result<Matrix> {
    let d = x.ncols();
    if pixels == 0 || pixels > d {
        return Err(Error::Config(vec![format!("pixel count must lie in [1, {d}], got {pixels}")]));
    }
    if pixels == d {
        return Ok(Matrix::ones(x.dim()));
    }
    let s = saliency(model, x)?;
    let mut mask = Matrix::zeros(x.dim());
    let mut order: Vec<usize> = (0..d).collect();
    for (row, mut out) in s.rows().into_iter().zip(mask.rows_mut()) {
        order.sort_unstable_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..pixels] {
            out[j] = 1.0;
        }
    }
    Ok(mask)
}

pub fn mask_rows(x: &Matrix, mask: &Matrix) -> Matrix {
    x * mask
}

/// One ascent step of `T_ψ` on the DV bound; returns the bound before the
/// step, in nats.
pub fn statistic_step(
    net: &mut StatisticNet,
    x_joint: &Matrix,
    x_marginal: &Matrix,
    z: &Matrix,
    learning_rate: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let b = net.store.bind(&mut g);
    let xj = g.constant(x_joint.clone());
    let xm = g.constant(x_marginal.clone());
    let zc = g.constant(z.clone());
    let tj = net.forward(&mut g, &b, xj, zc)?;
    let tm = net.forward(&mut g, &b, xm, zc)?;
    let bound = dv_bound_node(&mut g, tj, tm)?;
    let value = g.scalar(bound);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("statistic network bound became {value}")));
    }
    let loss = g.scale(bound, -1.0);
    let mut grads = g.backward(loss)?;
    net.store.collect_grads(&mut grads, &b);
    net.store.adam_step(learning_rate)?;
    Ok(value)
}

#[derive(Clone, Copy, Debug)]
pub struct AibOuter {
    pub total: NodeId,
    pub cross_entropy: NodeId,
    pub dv: NodeId,
    pub code: NodeId,
    pub clipped: bool,
}

/// Outer objective `CE + β·[mean T(x̃, z) − log mean e^{T(x̂̃, z)}]` with
/// `z = G_θ(x)` shared by both terms. The decoder only sees the
/// cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn build_aib_outer(
    g: &mut Graph,
    model: &Model,
    encoder: &Bound,
    decoder: &Bound,
    statistic: &Bound,
    x: NodeId,
    labels: &[usize],
    x_masked: NodeId,
    x_hat_masked: NodeId,
    beta: f64,
) -> Result<AibOuter> {
    let net = model
        .statistic
        .as_ref()
        .ok_or_else(|| Error::Usage("AIB update needs a statistic network".into()))?;
    let enc = encode(g, model, encoder, x, None)?;
    let logits = decode(g, model, decoder, enc.z, None)?;
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let tj = net.forward(g, statistic, x_masked, enc.code)?;
    let tm = net.forward(g, statistic, x_hat_masked, enc.code)?;
    let dv = dv_bound_node(g, tj, tm)?;
    let clipped = g.scalar(dv) > dv_clip_limit(labels.len());
    let total = if clipped || beta == 0.0 {
        ce
    } else {
        let weighted = g.scale(dv, beta);
        g.add(ce, weighted)?
    };
    Ok(AibOuter {
        total,
        cross_entropy: ce,
        dv,
        code: enc.code,
        clipped,
    })
}

/// One min-max step: `k` statistic updates on one minibatch pair, then one
/// encoder/decoder update.
pub fn aib_update(model: &mut Model, batch: &AibBatch, learning_rate: f64, statistic_learning_rate: f64) -> Result<StepStats> {
    let Objective::Aib { beta, inner_steps, pixels } = model.objective else {
        return Err(Error::Usage(format!("aib_update called for a {} model", model.objective.name())));
    };
    if batch.x.dim() != batch.x_hat.dim() || batch.labels.len() != batch.x.nrows() {
        return Err(Error::Shape(format!(
            "AIB batch shapes {:?}, {:?} and {} labels disagree",
            batch.x.dim(),
            batch.x_hat.dim(),
            batch.labels.len()
        )));
    }
    let (z, _) = model.forward_bottleneck(&batch.x)?;
    let mask = saliency_masks(model, &batch.x, pixels)?;
    let x_masked = mask_rows(&batch.x, &mask);
    let x_hat_masked = mask_rows(&batch.x_hat, &mask);
    let net = model.statistic.as_mut().expect("AIB models own a statistic network");
    for _ in 0..inner_steps {
        statistic_step(net, &x_masked, &x_hat_masked, &z, statistic_learning_rate)?;
    }

    let mut g = Graph::new();
    let be = model.encoder.bind(&mut g);
    let bd = model.decoder.bind(&mut g);
    let bt = model
        .statistic
        .as_ref()
        .expect("checked above")
        .store
        .bind_frozen(&mut g);
    let xi = g.constant(batch.x.clone());
    let xm = g.constant(x_masked);
    let xh = g.constant(x_hat_masked);
    let outer = build_aib_outer(&mut g, model, &be, &bd, &bt, xi, &batch.labels, xm, xh, beta)?;
    let loss = g.scalar(outer.total);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("AIB loss became {loss}")));
    }
    let mut grads = g.backward(outer.total)?;
    model.encoder.collect_grads(&mut grads, &be);
    model.decoder.collect_grads(&mut grads, &bd);
    model.encoder.adam_step(learning_rate)?;
    model.decoder.adam_step(learning_rate)?;
    Ok(StepStats {
        loss,
        cross_entropy: g.scalar(outer.cross_entropy),
        dv_bound: Some(g.scalar(outer.dv)),
        clipped: outer.clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Activation, ModelSpec};
    use ndarray::Array2;

    fn model(pixels: usize) -> Model {
        let spec = ModelSpec {
            widths: vec![6, 5, 2, 4, 3],
            bottleneck: 2,
            bottleneck_activation: Activation::Linear,
        };
        Model::new(spec, Objective::Aib { beta: 0.5, inner_steps: 2, pixels }, 3).unwrap()
    }

    fn data() -> AibBatch {
        AibBatch {
            x: Array2::from_shape_fn((8, 6), |(i, j)| ((i * 7 + j * 3) as f64 * 0.41).cos().abs()),
            labels: vec![0, 1, 2, 0, 1, 2, 0, 1],
            x_hat: Array2::from_shape_fn((8, 6), |(i, j)| ((i * 5 + j) as f64 * 0.29).sin().abs()),
        }
    }

    #[test]
    fn full_pixel_set_is_identity_mask() {
        let m = model(6);
        let b = data();
        let mask = saliency_masks(&m, &b.x, 6).unwrap();
        assert_eq!(mask_rows(&b.x, &mask), b.x);
    }

    #[test]
    fn masks_keep_exactly_p_pixels_by_saliency() {
        let m = model(2);
        let b = data();
        let s = saliency(&m, &b.x).unwrap();
        let mask = saliency_masks(&m, &b.x, 2).unwrap();
        for (srow, mrow) in s.rows().into_iter().zip(mask.rows()) {
            assert_eq!(mrow.sum(), 2.0);
            let kept_min = srow.iter().zip(mrow).filter(|(_, &k)| k == 1.0).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
            let dropped_max = srow.iter().zip(mrow).filter(|(_, &k)| k == 0.0).map(|(v, _)| *v).fold(0.0, f64::max);
            assert!(kept_min >= dropped_max);
        }
    }

    #[test]
    fn zero_statistic_reduces_to_cross_entropy_gradient() {
        let mut m = model(3);
        let net = m.statistic.as_mut().unwrap();
        let last = net.n_layers() - 1;
        for name in [format!("w{last}"), format!("b{last}")] {
            net.store.get_mut(&name).unwrap().fill(0.0);
        }
        let b = data();
        let grads_for = |beta: f64| {
            let mut g = Graph::new();
            let be = m.encoder.bind(&mut g);
            let bd = m.decoder.bind(&mut g);
            let bt = m.statistic.as_ref().unwrap().store.bind_frozen(&mut g);
            let xi = g.constant(b.x.clone());
            let xm = g.constant(b.x.clone());
            let xh = g.constant(b.x_hat.clone());
            let o = build_aib_outer(&mut g, &m, &be, &bd, &bt, xi, &b.labels, xm, xh, beta).unwrap();
            let grads = g.backward(o.total).unwrap();
            (0..4).map(|s| grads.get(be.node(s)).unwrap().clone()).collect::<Vec<_>>()
        };
        for (a, b) in grads_for(0.0).iter().zip(grads_for(10.0)) {
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-15));
        }
    }

    #[test]
    fn update_changes_all_parameter_groups() {
        let mut m = model(3);
        let before = m.clone();
        let stats = aib_update(&mut m, &data(), 1e-2, 1e-2).unwrap();
        assert!(stats.dv_bound.is_some());
        assert_ne!(m.encoder, before.encoder);
        assert_ne!(m.decoder, before.decoder);
        assert_ne!(m.statistic, before.statistic);
        assert_eq!(m.statistic.as_ref().unwrap().store.step_count(), 2);
    }

    #[test]
    fn non_aib_model_is_usage_error() {
        let mut m = Model::new(ModelSpec::synthetic(), Objective::Normal, 0).unwrap();
        let b = AibBatch {
            x: Array2::zeros((2, 12)),
            labels: vec![0, 1],
            x_hat: Array2::zeros((2, 12)),
        };
        assert!(matches!(aib_update(&mut m, &b, 1e-3, 1e-3), Err(Error::Usage(_))));
    }
}

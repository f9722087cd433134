use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, Matrix, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Option<Matrix>,
    first_moment: Matrix,
    second_moment: Matrix,
}

/// Named parameter tensors plus Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
    pub adam: AdamConfig,
}

/// Graph nodes for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, slot: usize) -> NodeId {
        self.nodes[slot]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        let dim = value.dim();
        let slot = self.params.len();
        self.index.insert(name.clone(), slot);
        self.params.push(Param {
            name,
            value,
            grad: None,
            first_moment: Array2::zeros(dim),
            second_moment: Array2::zeros(dim),
        });
        slot
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.slot(name).map(|s| &self.params[s].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let slot = self.slot(name)?;
        Some(&mut self.params[slot].value)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter into `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            nodes: self
                .params
                .iter()
                .map(|p| graph.variable(p.value.clone()))
                .collect(),
        }
    }

    /// Copies every parameter into `graph` as a constant (no gradient flows).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        Bound {
            nodes: self
                .params
                .iter()
                .map(|p| graph.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Stores gradients for the bound parameters. Parameters the loss does
    /// not reach get an explicit zero gradient.
    pub fn collect_grads(&mut self, grads: &mut Gradients, bound: &Bound) {
        for (p, &node) in self.params.iter_mut().zip(&bound.nodes) {
            p.grad = Some(
                grads
                    .take(node)
                    .unwrap_or_else(|| Array2::zeros(p.value.dim())),
            );
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One Adam update over every parameter; consumes the stored gradients.
    pub fn adam_step(&mut self, learning_rate: f64) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!(
                "adam step without a gradient for parameter '{}'",
                p.name
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.first_moment)
                .and(&mut p.second_moment)
                .and(&g)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Adam moments, for checkpointing and invariant checks.
    pub fn moments(&self, slot: usize) -> (&Matrix, &Matrix) {
        let p = &self.params[slot];
        (&p.first_moment, &p.second_moment)
    }

    pub(crate) fn restore_moments(&mut self, slot: usize, m: Matrix, v: Matrix, step: u64) {
        let p = &mut self.params[slot];
        p.first_moment = m;
        p.second_moment = v;
        self.step = step;
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// How a dense layer's weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`, for layers followed by ReLU.
    HeUniform,
    /// `U(-√(6/(fan_in+fan_out)), +…)`, for linear outputs.
    GlorotUniform,
}

impl Init {
    pub fn limit(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }

    /// Variance of the uniform draw.
    pub fn target_variance(self, fan_in: usize, fan_out: usize) -> f64 {
        let a = self.limit(fan_in, fan_out);
        a * a / 3.0
    }
}

/// Weights `w{i}` (fan_in × fan_out) and zero biases `b{i}` for a chain of
/// dense layers. The last layer uses Glorot, all others He. Deterministic in
/// `seed`.
pub fn init_params(widths: &[usize], seed: u64) -> Result<ParamStore> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(vec![format!(
            "layer widths must be at least two positive values, got {widths:?}"
        )]));
    }
    let n = widths.len() - 1;
    let layers: Vec<LayerShape> = (0..n)
        .map(|i| LayerShape {
            fan_in: widths[i],
            fan_out: widths[i + 1],
            init: if i + 1 == n {
                Init::GlorotUniform
            } else {
                Init::HeUniform
            },
        })
        .collect();
    init_layers(&layers, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub init: Init,
}

/// Parameters `w{i}`, `b{i}` for an arbitrary list of dense layers.
pub fn init_layers(layers: &[LayerShape], seed: u64) -> Result<ParamStore> {
    if layers.is_empty() || layers.iter().any(|l| l.fan_in == 0 || l.fan_out == 0) {
        return Err(Error::Config(vec![format!(
            "dense layers must have positive widths, got {layers:?}"
        )]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, l) in layers.iter().enumerate() {
        let limit = l.init.limit(l.fan_in, l.fan_out);
        let w = Array2::from_shape_simple_fn((l.fan_in, l.fan_out), || {
            rng.random_range(-limit..limit)
        });
        store.insert(format!("w{i}"), w);
        store.insert(format!("b{i}"), Array2::zeros((1, l.fan_out)));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = init_params(&[3, 4, 2], 1).unwrap();
        let before = store.clone();
        for p in store.params_mut() {
            p.grad = Some(Array2::zeros(p.value.dim()));
        }
        store.adam_step(0.01).unwrap();
        for (a, b) in store.params().iter().zip(before.params()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn first_step_with_constant_gradient_moves_by_learning_rate() {
        // closed form: m̂ = g, v̂ = g², update = lr·g/(|g|+ε)
        for g in [0.3, -2.0, 1e-3] {
            let mut store = ParamStore::new();
            store.insert("w", Array2::from_elem((1, 1), 1.0));
            store.params_mut()[0].grad = Some(Array2::from_elem((1, 1), g));
            store.adam_step(0.05).unwrap();
            let expected = 1.0 - 0.05 * g / (g.abs() + 1e-8);
            assert!((store.get("w").unwrap()[[0, 0]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = ½ Σ (w - c)²; a scalar simulation shows < 1e-6 within 2000 steps at lr 0.01
        let target = [3.0, -1.5];
        let mut store = ParamStore::new();
        store.insert("w", Array2::zeros((1, 2)));
        for _ in 0..2000 {
            let w = store.get("w").unwrap().clone();
            let g = Array2::from_shape_fn((1, 2), |(_, j)| w[[0, j]] - target[j]);
            store.params_mut()[0].grad = Some(g);
            store.adam_step(0.01).unwrap();
        }
        let w = store.get("w").unwrap();
        let f: f64 = (0..2).map(|j| 0.5 * (w[[0, j]] - target[j]).powi(2)).sum();
        assert!(f < 1e-6, "f = {f}");
    }

    #[test]
    fn adam_without_gradients_is_a_usage_error() {
        let mut store = init_params(&[2, 2], 0).unwrap();
        assert!(matches!(store.adam_step(0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let store = init_params(&[5, 3, 2], 4).unwrap();
        for (slot, p) in store.params().iter().enumerate() {
            let (m, v) = store.moments(slot);
            assert_eq!(m.dim(), p.value.dim());
            assert_eq!(v.dim(), p.value.dim());
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_params(&[12, 10, 2], 7).unwrap();
        let b = init_params(&[12, 10, 2], 7).unwrap();
        let c = init_params(&[12, 10, 2], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.get("w0"), c.get("w0"));
    }

    #[test]
    fn he_variance_matches_target() {
        let store = init_params(&[100, 100, 10], 3).unwrap();
        let w = store.get("w0").unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / 100.0;
        assert!((var - target).abs() / target < 0.2, "{var} vs {target}");
    }

    #[test]
    fn invalid_widths_rejected() {
        assert!(init_params(&[3], 0).is_err());
        assert!(init_params(&[3, 0, 2], 0).is_err());
    }
}

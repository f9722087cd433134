//! Donsker–Varadhan lower bound `E_P[T] − log E_{P⊗P}[e^T]` with a trained
//! statistic network.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nats_to_bits, MIEstimate, Method};
use crate::error::{Error, Result};
use crate::tensor::{dense_chain, init_params, Graph, Matrix, NodeId, ParamStore};

/// MLP `T_ψ(x, z)` on the concatenated pair, ReLU hidden layers, scalar out.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticNet {
    pub widths: Vec<usize>,
    pub store: ParamStore,
}

impl StatisticNet {
    /// `hidden` excludes the input width `dx + dz` and the scalar output.
    pub fn new(dx: usize, dz: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![dx + dz];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let store = init_params(&widths, seed)?;
        Ok(Self { widths, store })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `T` on each row of `[x | z]`, shape N×1.
    pub fn forward(
        &self,
        graph: &mut Graph,
        bound: &crate::tensor::Bound,
        x: NodeId,
        z: NodeId,
    ) -> Result<NodeId> {
        let xz = graph.concat_cols(x, z)?;
        if graph.value(xz).ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "statistic network expects {} inputs, got {}",
                self.input_dim(),
                graph.value(xz).ncols()
            )));
        }
        dense_chain(graph, bound, 0, self.n_layers(), xz, false)
    }

    /// `T` values without recording gradients.
    pub fn eval(&self, x: &Matrix, z: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let b = self.store.bind_frozen(&mut g);
        let (xi, zi) = (g.constant(x.clone()), g.constant(z.clone()));
        let t = self.forward(&mut g, &b, xi, zi)?;
        Ok(g.value(t).clone())
    }
}

/// `mean(t_joint) − log mean exp(t_marginal)`, in nats.
pub fn dv_bound_node(graph: &mut Graph, t_joint: NodeId, t_marginal: NodeId) -> Result<NodeId> {
    let first = graph.mean_all(t_joint);
    let second = graph.log_mean_exp(t_marginal);
    graph.sub(first, second)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DvConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 512,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Trains `net` to maximize the bound on row-aligned `(x, z)` and returns
/// the bound averaged over the last 10% of steps.
pub fn dv_train_estimate(
    x: &Matrix,
    z: &Matrix,
    net: &mut StatisticNet,
    config: &DvConfig,
) -> Result<MIEstimate> {
    let n = x.nrows();
    if z.nrows() != n || n < 2 {
        return Err(Error::Shape(format!(
            "DV needs ≥ 2 row-aligned samples, got {n} and {}",
            z.nrows()
        )));
    }
    if config.steps == 0 || config.batch < 2 || !(config.learning_rate > 0.0) {
        return Err(Error::Config(vec![format!("invalid DV settings {config:?}")]));
    }
    let batch = config.batch.min(n);
    let divergence = (n as f64).ln() + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        let mut shuffled = rows.to_vec();
        shuffled.shuffle(&mut rng);

        let mut g = Graph::new();
        let b = net.store.bind(&mut g);
        let xb = g.constant(x.select(Axis(0), rows));
        let zb = g.constant(z.select(Axis(0), rows));
        let zm = g.constant(z.select(Axis(0), &shuffled));
        let tj = net.forward(&mut g, &b, xb, zb)?;
        let tm = net.forward(&mut g, &b, xb, zm)?;
        let bound = dv_bound_node(&mut g, tj, tm)?;
        let value = g.scalar(bound);
        if !value.is_finite() || value > divergence {
            return Err(Error::Numerical(format!(
                "DV bound diverged to {value:.3} nats at step {step} (limit {divergence:.3}); \
                 try a smaller learning rate than {}",
                config.learning_rate
            )));
        }
        trace.push(value);
        let loss = g.scale(bound, -1.0);
        let mut grads = g.backward(loss)?;
        net.store.collect_grads(&mut grads, &b);
        net.store.adam_step(config.learning_rate)?;
    }

    let tail = (config.steps / 10).max(1);
    let nats = trace[trace.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(MIEstimate::new(Method::Dv, nats_to_bits(nats))
        .with_param("steps", config.steps)
        .with_param("batch", batch)
        .with_param("lr", config.learning_rate)
        .with_param("seed", config.seed))
}

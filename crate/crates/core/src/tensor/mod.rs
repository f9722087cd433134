//! Dense matrices, a reverse-mode autodiff record, parameters with Adam, and
//! the checkpoint container.

mod checkpoint;
mod graph;
mod params;

pub use checkpoint::{sha256_hex, Checkpoint};
pub use graph::{softmax_rows, Gradients, Graph, Matrix, NodeId};
pub use params::{
    init_layers, init_params, AdamConfig, Bound, Init, LayerShape, Param, ParamStore,
};

pub(crate) use graph::pairwise_entropy_forward;

use crate::error::{Error, Result};

/// `input · weights + bias`.
pub fn linear_forward(
    graph: &mut Graph,
    input: NodeId,
    weights: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let xw = graph.matmul(input, weights)?;
    graph.add_row(xw, bias)
}

/// Runs dense layers `first..first+count` of a store laid out as
/// `w0,b0,w1,b1,…`, with ReLU after every layer except the last one when
/// `relu_last` is false.
pub fn dense_chain(
    graph: &mut Graph,
    bound: &Bound,
    first: usize,
    count: usize,
    input: NodeId,
    relu_last: bool,
) -> Result<NodeId> {
    let mut h = input;
    for layer in first..first + count {
        h = linear_forward(graph, h, bound.node(2 * layer), bound.node(2 * layer + 1))?;
        if relu_last || layer + 1 < first + count {
            h = graph.relu(h);
        }
    }
    Ok(h)
}

/// Errors if any entry is NaN or infinite.
pub fn ensure_finite(what: &str, m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} contains NaN or Inf")))
    }
}

/// Row-major matrix from nested rows; test and example convenience.
pub fn matrix(rows: &[&[f64]]) -> Matrix {
    let cols = rows.first().map_or(0, |r| r.len());
    Matrix::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` around `x`, h = 1e-4.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-4;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            g[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let num = (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        let den = a
            .iter()
            .chain(b.iter())
            .fold(1e-8f64, |m, &v| m.max(v.abs()));
        num / den
    }

    /// Checks d(op(x))/dx for a scalar-valued builder.
    fn check_op(x: Matrix, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let eval = |x: &Matrix| {
            let mut g = Graph::new();
            let xi = g.variable(x.clone());
            let out = build(&mut g, xi);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let xi = g.variable(x.clone());
        let out = build(&mut g, xi);
        let grads = g.backward(out).unwrap();
        let analytic = grads.get(xi).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        let numeric = numeric_grad(&x, eval);
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "relative error {err}\n{analytic}\n{numeric}");
    }

    /// Naive triple loop.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[[i, k]] * b[[k, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    #[test]
    fn linear_identity_and_bias_cases() {
        let mut g = Graph::new();
        let x = g.constant(matrix(&[&[1.0, 2.0]]));
        let w = g.constant(matrix(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(Array2::zeros((1, 2)));
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y), &matrix(&[&[1.0, 2.0]]));

        let x = g.constant(matrix(&[&[5.0, -7.0], &[0.3, 2.0]]));
        let w = g.constant(Array2::zeros((2, 1)));
        let b = g.constant(matrix(&[&[3.0]]));
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (xv, wv, bv) = (random(4, 3, &mut rng), random(3, 5, &mut rng), random(1, 5, &mut rng));
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(xv.clone()), g.constant(wv.clone()), g.constant(bv.clone()));
        let y = linear_forward(&mut g, x, w, b).unwrap();
        let expected = matmul_oracle(&xv, &wv) + &bv;
        assert!((g.value(y) - &expected).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn linear_shape_mismatch_is_error() {
        let mut g = Graph::new();
        let x = g.constant(Array2::zeros((2, 3)));
        let w = g.constant(Array2::zeros((4, 2)));
        let b = g.constant(Array2::zeros((1, 2)));
        assert!(matches!(linear_forward(&mut g, x, w, b), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_values_and_gradients() {
        let mut g = Graph::new();
        let x = g.variable(matrix(&[&[-1.0, 0.0, 2.0]]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &matrix(&[&[0.0, 0.0, 2.0]]));

        let x = g.variable(matrix(&[&[-1.0, -3.0, -0.5]]));
        let r = g.relu(x);
        let s = g.sum_all(r);
        assert!(g.value(r).iter().all(|&v| v == 0.0));
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = Array2::from_shape_simple_fn((3, 4), || rng.random_range(0.1..2.0));
        check_op(pos, |g, x| {
            let r = g.relu(x);
            g.sum_all(r)
        });
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::new();
        let logits = g.variable(Array2::zeros((3, 10)));
        let loss = g.softmax_cross_entropy(logits, &[0, 4, 9]).unwrap();
        assert!((g.scalar(loss) - 10f64.ln()).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 100.0] {
            let mut g = Graph::new();
            let l = g.variable(matrix(&[&[margin, 0.0, 0.0]]));
            let loss = g.softmax_cross_entropy(l, &[0]).unwrap();
            let v = g.scalar(loss);
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-40);

        let mut g = Graph::new();
        let logits = g.variable(Array2::zeros((1, 3)));
        assert!(matches!(
            g.softmax_cross_entropy(logits, &[3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = random(3, 5, &mut rng) * 3.0;
        check_op(logits, |g, x| g.softmax_cross_entropy(x, &[1, 4, 0]).unwrap());
    }

    #[test]
    fn sum_of_products_gradient_is_input() {
        let xv = matrix(&[&[1.5, -2.0, 0.25]]);
        let mut g = Graph::new();
        let w = g.variable(matrix(&[&[0.3, 0.1, -0.7]]));
        let x = g.constant(xv.clone());
        let p = g.mul(w, x).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &xv);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let mut g = Graph::new();
        let w = g.variable(matrix(&[&[1.0, 2.0]]));
        let c = g.constant(matrix(&[&[4.0]]));
        let grads = g.backward(c).unwrap();
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn backward_on_unknown_node_is_usage_error() {
        let mut other = Graph::new();
        let a = other.variable(Array2::zeros((1, 1)));
        let b = other.scale(a, 2.0);
        let g = Graph::new();
        assert!(matches!(g.backward(b), Err(Error::Usage(_))));
    }

    #[test]
    fn two_layer_network_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let store = init_params(&[4, 6, 3], 3).unwrap();
        let x = random(5, 4, &mut rng);
        let labels = [0usize, 2, 1, 1, 0];
        let loss_of = |store: &ParamStore| {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let xi = g.constant(x.clone());
            let out = dense_chain(&mut g, &b, 0, 2, xi, false).unwrap();
            let loss = g.softmax_cross_entropy(out, &labels).unwrap();
            (g, b, loss)
        };
        let (g, b, loss) = loss_of(&store);
        let mut grads = g.backward(loss).unwrap();
        let mut with_grads = store.clone();
        with_grads.collect_grads(&mut grads, &b);
        for (slot, p) in with_grads.params().iter().enumerate() {
            let numeric = numeric_grad(&p.value, |v| {
                let mut s = store.clone();
                s.params_mut()[slot].value = v.clone();
                let (g, _, loss) = loss_of(&s);
                g.scalar(loss)
            });
            let err = rel_err(p.grad.as_ref().unwrap(), &numeric);
            assert!(err < 1e-3, "{}: {err}", p.name);
        }
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random(3, 4, &mut rng);
        let other = random(3, 4, &mut rng);
        check_op(x.clone(), |g, x| {
            let e = g.exp(x);
            g.mean_all(e)
        });
        check_op(x.clone(), |g, x| {
            let s = g.square(x);
            let t = g.scale(s, -0.7);
            g.sum_all(t)
        });
        let o = other.clone();
        check_op(x.clone(), move |g, x| {
            let c = g.constant(o.clone());
            let m = g.mul(x, c).unwrap();
            let a = g.sub(m, x).unwrap();
            let b = g.add(a, m).unwrap();
            g.sum_all(b)
        });
        check_op(x.clone(), |g, x| {
            let l = g.slice_cols(x, 1, 3).unwrap();
            let r = g.slice_cols(x, 0, 2).unwrap();
            let cat = g.concat_cols(l, r).unwrap();
            let sq = g.square(cat);
            g.sum_all(sq)
        });
        check_op(x, |g, x| g.log_mean_exp(x));
    }

    #[test]
    fn add_row_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = random(4, 3, &mut rng);
        let row = random(1, 3, &mut rng);
        check_op(row, move |g, r| {
            let xi = g.constant(x.clone());
            let y = g.add_row(xi, r).unwrap();
            let sq = g.square(y);
            g.sum_all(sq)
        });
    }

    #[test]
    fn pairwise_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z = random(6, 3, &mut rng);
        check_op(z, |g, z| g.pairwise_entropy(z, 0.7).unwrap());
    }

    #[test]
    fn pairwise_entropy_limits() {
        let mut g = Graph::new();
        let same = g.constant(Array2::from_elem((5, 2), 0.3));
        let h = g.pairwise_entropy(same, 0.5).unwrap();
        assert!(g.scalar(h).abs() < 1e-15);

        let far = g.constant(matrix(&[&[0.0, 0.0], &[100.0, 0.0]]));
        let h = g.pairwise_entropy(far, 1.0).unwrap();
        assert!((g.scalar(h) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_finite_inputs_stay_finite() {
        let mut g = Graph::new();
        let x = g.variable(matrix(&[&[1e6, -1e6, 0.0], &[-1e6, 1e6, 3.0]]));
        let ce = g.softmax_cross_entropy(x, &[1, 0]).unwrap();
        let lme = g.log_mean_exp(x);
        let pe = g.pairwise_entropy(x, 1.0).unwrap();
        for n in [ce, lme, pe] {
            assert!(g.scalar(n).is_finite());
            let grads = g.backward(n).unwrap();
            ensure_finite("grad", grads.get(x).unwrap()).unwrap();
        }
    }
}

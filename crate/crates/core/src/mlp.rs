//! Dense multilayer perceptron with a hand-derived backward pass.
//!
//! Hidden layers use tanh, the output layer is linear. Everything is f64
//! and deterministic: initialization draws from an [`RngStream`] and the
//! optimizer is plain momentum SGD.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `out = W x + b` with `W` stored row-major, shape (rows = out, cols = in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn init(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let scale = (1.0 / cols as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.next_gaussian() * scale)
            .collect();
        DenseLayer {
            rows,
            cols,
            weights,
            biases: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.biases[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-layer pre- and post-activation values from a cached forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Post-activation output of each layer; last entry is the network output.
    outputs: Vec<Vec<f64>>,
}

/// Parameter gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGradients {
            d_weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_biases: mlp.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn accumulate(&mut self, other: &MlpGradients) {
        for (a, b) in self
            .d_weights
            .iter_mut()
            .zip(&other.d_weights)
            .chain(self.d_biases.iter_mut().zip(&other.d_biases))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. `[50, 128, 128, 128, 2]`.
    pub fn init(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("mlp needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("mlp layer widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(w[1], w[0], rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[1].cols != w[0].rows {
                return Err(Error::invalid("mlp layer shapes do not chain"));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).outputs.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Activations {
        let last = self.layers.len() - 1;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&cur, &mut out);
            if i != last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            outputs.push(out.clone());
            cur = out;
        }
        Activations { outputs }
    }

    pub fn output<'a>(&self, acts: &'a Activations) -> &'a [f64] {
        acts.outputs.last().unwrap()
    }

    /// Backpropagate `d_out = dL/d(output)` through the cached forward pass.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, x: &[f64], acts: &Activations, d_out: &[f64]) -> (MlpGradients, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            // tanh' in terms of the cached post-activation value.
            if i != last {
                for (d, &y) in delta.iter_mut().zip(&acts.outputs[i]) {
                    *d *= 1.0 - y * y;
                }
            }
            let input: &[f64] = if i == 0 { x } else { &acts.outputs[i - 1] };
            let dw = &mut grads.d_weights[i];
            for r in 0..layer.rows {
                let dr = delta[r];
                grads.d_biases[i][r] += dr;
                let row = &mut dw[r * layer.cols..(r + 1) * layer.cols];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += dr * v;
                }
            }
            let mut d_in = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let dr = delta[r];
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (di, w) in d_in.iter_mut().zip(row) {
                    *di += dr * w;
                }
            }
            delta = d_in;
        }
        (grads, delta)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }
}

/// Momentum SGD over an [`Mlp`] plus an optional extra parameter block
/// (used for condition-embedding tables).
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    vel_weights: Vec<Vec<f64>>,
    vel_biases: Vec<Vec<f64>>,
    vel_extra: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(mlp: &Mlp, extra_len: usize, learning_rate: f64, momentum: f64) -> Self {
        MomentumSgd {
            learning_rate,
            momentum,
            vel_weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            vel_biases: mlp.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            vel_extra: vec![0.0; extra_len],
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGradients) {
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            update(
                &mut layer.weights,
                &grads.d_weights[i],
                &mut self.vel_weights[i],
                self.learning_rate,
                self.momentum,
            );
            update(
                &mut layer.biases,
                &grads.d_biases[i],
                &mut self.vel_biases[i],
                self.learning_rate,
                self.momentum,
            );
        }
    }

    pub fn step_extra(&mut self, params: &mut [f64], grads: &[f64]) {
        update(
            params,
            grads,
            &mut self.vel_extra,
            self.learning_rate,
            self.momentum,
        );
    }
}

fn update(params: &mut [f64], grads: &[f64], vel: &mut [f64], lr: f64, momentum: f64) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(mlp: &Mlp, x: &[f64], target: &[f64]) -> f64 {
        let out = mlp.forward(x);
        out.iter()
            .zip(target)
            .map(|(o, t)| 0.5 * (o - t) * (o - t))
            .sum()
    }

    // Backward pass vs central finite differences of the loss, on random
    // small nets, to relative error <= 1e-4.
    #[test]
    fn gradient_check_against_finite_differences() {
        let mut rng = RngStream::new(99, 0);
        for trial in 0..3 {
            let dims = [3usize, 5, 4, 2];
            let mut mlp = Mlp::init(&dims, &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.next_gaussian()).collect();
            let target: Vec<f64> = (0..2).map(|_| rng.next_gaussian()).collect();

            let acts = mlp.forward_cached(&x);
            let d_out: Vec<f64> = mlp
                .output(&acts)
                .iter()
                .zip(&target)
                .map(|(o, t)| o - t)
                .collect();
            let (grads, d_input) = mlp.backward(&x, &acts, &d_out);

            let h = 1e-5;
            for li in 0..mlp.layers.len() {
                for wi in 0..mlp.layers[li].weights.len() {
                    let orig = mlp.layers[li].weights[wi];
                    mlp.layers[li].weights[wi] = orig + h;
                    let lp = loss(&mlp, &x, &target);
                    mlp.layers[li].weights[wi] = orig - h;
                    let lm = loss(&mlp, &x, &target);
                    mlp.layers[li].weights[wi] = orig;
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = grads.d_weights[li][wi];
                    let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        (numeric - analytic).abs() / denom <= 1e-4,
                        "trial {trial} layer {li} weight {wi}: {analytic} vs {numeric}"
                    );
                }
            }
            // Input gradient too (the embedding path depends on it).
            let mut xv = x.clone();
            for xi in 0..xv.len() {
                let orig = xv[xi];
                xv[xi] = orig + h;
                let lp = loss(&mlp, &xv, &target);
                xv[xi] = orig - h;
                let lm = loss(&mlp, &xv, &target);
                xv[xi] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let denom = numeric.abs().max(d_input[xi].abs()).max(1e-6);
                assert!((numeric - d_input[xi]).abs() / denom <= 1e-4);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = RngStream::new(3, 1);
        let mlp = Mlp::init(&[4, 8, 2], &mut rng).unwrap();
        let x = [0.1, -0.2, 0.3, 0.7];
        assert_eq!(mlp.forward(&x), mlp.forward(&x));
    }

    #[test]
    fn sgd_reduces_simple_loss() {
        let mut rng = RngStream::new(7, 0);
        let mut mlp = Mlp::init(&[2, 16, 1], &mut rng).unwrap();
        let mut opt = MomentumSgd::new(&mlp, 0, 0.05, 0.9);
        let x = [0.5, -1.0];
        let target = [0.75];
        let before = loss(&mlp, &x, &target);
        for _ in 0..50 {
            let acts = mlp.forward_cached(&x);
            let d_out: Vec<f64> = mlp
                .output(&acts)
                .iter()
                .zip(&target)
                .map(|(o, t)| o - t)
                .collect();
            let (grads, _) = mlp.backward(&x, &acts, &d_out);
            opt.step(&mut mlp, &grads);
        }
        assert!(loss(&mlp, &x, &target) < before * 0.01);
    }
}

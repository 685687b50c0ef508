//! A small dense feed-forward network trained with Adam, used to model the
//! residual structure a linear map leaves behind.

use faer::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MlpError {
    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("row {0} has wrong width: expected {1}, got {2}")]
    WidthMismatch(usize, usize, usize),

    #[error("input and target row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),

    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when validation loss has not improved for this many epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![256, 256],
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 500,
            patience: 60,
            seed: 0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    // numerically stable: ln(1+e^x) = max(x,0) + ln(1+e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_grad(x: f64) -> f64 {
    // sigmoid(x)
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    /// in_dim x out_dim
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Per-epoch record kept for inspection of the training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    pub config: MlpConfig,
    pub training_log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best validation loss).
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

impl Mlp {
    /// Trains on `(x_train, y_train)` with early stopping against the
    /// validation pair, keeping the parameters from the best validation
    /// epoch. The output layer starts at zero so the untrained network is
    /// the zero map.
    pub fn train(
        x_train: &Mat<f64>,
        y_train: &Mat<f64>,
        x_val: &Mat<f64>,
        y_val: &Mat<f64>,
        config: MlpConfig,
    ) -> Result<Mlp, MlpError> {
        let n = x_train.nrows();
        if n == 0 {
            return Err(MlpError::EmptyTrainingSet);
        }
        if y_train.nrows() != n {
            return Err(MlpError::RowMismatch(n, y_train.nrows()));
        }
        if x_val.nrows() != y_val.nrows() {
            return Err(MlpError::RowMismatch(x_val.nrows(), y_val.nrows()));
        }
        let d_in = x_train.ncols();
        let d_out = y_train.ncols();

        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut dims = vec![d_in];
        dims.extend_from_slice(&config.hidden);
        dims.push(d_out);
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let last = l == n_layers - 1;
            // He-style uniform init for hidden layers; zero for output layer
            let scale = if last { 0.0 } else { (6.0 / fi as f64).sqrt() };
            let weights = (0..fi * fo)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect();
            // hidden biases start spread out, not at zero: with every unit
            // pivoting at the origin the feature span is nearly even in the
            // input and odd targets stall for hundreds of epochs
            let bias = (0..fo)
                .map(|_| {
                    if last {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            layers.push(Layer {
                weights,
                bias,
                in_dim: fi,
                out_dim: fo,
            });
        }

        let shapes: Vec<usize> = layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        let mut adam = Adam::new(&shapes);

        let mut best = layers.clone();
        let mut best_val = f64::INFINITY;
        let mut best_epoch = 0usize;
        let mut stale = 0usize;
        let mut training_log = Vec::new();

        let mut order: Vec<usize> = (0..n).collect();
        // reusable per-layer activation buffers
        let mut acts: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut pre: Vec<Vec<f64>> = dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        let batch = config.batch_size.max(1);

        for epoch in 0..config.max_epochs {
            // fisher-yates via the rng so runs are reproducible
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut train_loss = 0.0;
            for chunk in order.chunks(batch) {
                let mut gw: Vec<Vec<f64>> =
                    layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
                let mut gb: Vec<Vec<f64>> =
                    layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
                for &row in chunk {
                    for j in 0..d_in {
                        acts[0][j] = x_train[(row, j)];
                    }
                    for (l, layer) in layers.iter().enumerate() {
                        let (head, tail) = acts.split_at_mut(l + 1);
                        layer.forward(&head[l], &mut pre[l]);
                        let last = l == n_layers - 1;
                        for (a, &z) in tail[0].iter_mut().zip(&pre[l]) {
                            *a = if last { z } else { softplus(z) };
                        }
                    }
                    // squared-error loss, gradient flows back through softplus
                    let mut delta: Vec<f64> = (0..d_out)
                        .map(|j| {
                            let e = acts[n_layers][j] - y_train[(row, j)];
                            train_loss += e * e;
                            2.0 * e / (chunk.len() * d_out) as f64
                        })
                        .collect();
                    for l in (0..n_layers).rev() {
                        let layer = &layers[l];
                        for i in 0..layer.in_dim {
                            let xi = acts[l][i];
                            if xi != 0.0 {
                                let g = &mut gw[l][i * layer.out_dim..(i + 1) * layer.out_dim];
                                for (gk, dk) in g.iter_mut().zip(&delta) {
                                    *gk += xi * dk;
                                }
                            }
                        }
                        for (gk, dk) in gb[l].iter_mut().zip(&delta) {
                            *gk += dk;
                        }
                        if l > 0 {
                            let mut prev = vec![0.0; layer.in_dim];
                            for i in 0..layer.in_dim {
                                let row_w =
                                    &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                                prev[i] = row_w
                                    .iter()
                                    .zip(&delta)
                                    .map(|(w, d)| w * d)
                                    .sum::<f64>()
                                    * softplus_grad(pre[l - 1][i]);
                            }
                            delta = prev;
                        }
                    }
                }
                let mut params: Vec<&mut [f64]> = Vec::with_capacity(2 * n_layers);
                for l in &mut layers {
                    params.push(&mut l.weights);
                    params.push(&mut l.bias);
                }
                let grads: Vec<&[f64]> = gw
                    .iter()
                    .zip(&gb)
                    .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
                    .collect();
                adam.step(&mut params, &grads, config.learning_rate);
            }
            train_loss /= (n * d_out) as f64;
            if !train_loss.is_finite() {
                return Err(MlpError::Diverged(epoch));
            }

            let val_loss = mse(&layers, &dims, x_val, y_val);
            training_log.push(EpochLog {
                epoch,
                train_loss,
                val_loss,
            });
            if val_loss < best_val {
                best_val = val_loss;
                best = layers.clone();
                best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }

        Ok(Mlp {
            layers: best,
            config,
            training_log,
            best_epoch,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.forward(&cur, &mut next);
            if l != n_layers - 1 {
                for z in &mut next {
                    *z = softplus(*z);
                }
            }
            cur = next;
        }
        cur
    }

    pub fn predict(&self, x: &Mat<f64>) -> Mat<f64> {
        let d_out = self.layers.last().map(|l| l.out_dim).unwrap_or(0);
        let mut out = Mat::<f64>::zeros(x.nrows(), d_out);
        let mut row = vec![0.0; x.ncols()];
        for r in 0..x.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(r, j)];
            }
            let y = self.predict_row(&row);
            for (j, v) in y.iter().enumerate() {
                out[(r, j)] = *v;
            }
        }
        out
    }

    pub fn best_val_loss(&self) -> f64 {
        self.training_log
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min)
    }
}

fn mse(layers: &[Layer], dims: &[usize], x: &Mat<f64>, y: &Mat<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let n_layers = layers.len();
    let mut total = 0.0;
    let mut cur = vec![0.0; dims[0]];
    for r in 0..x.nrows() {
        for (j, v) in cur.iter_mut().enumerate() {
            *v = x[(r, j)];
        }
        let mut a = cur.clone();
        for (l, layer) in layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.forward(&a, &mut next);
            if l != n_layers - 1 {
                for z in &mut next {
                    *z = softplus(*z);
                }
            }
            a = next;
        }
        for (j, &p) in a.iter().enumerate() {
            let e = p - y[(r, j)];
            total += e * e;
        }
    }
    total / (x.nrows() * y.ncols()) as f64
}

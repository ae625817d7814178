//! Feed-forward regression network: tanh hidden layers, linear scalar output,
//! trained by backpropagation with minibatch Adam or plain gradient descent.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::standardize::Standardizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        if input_dim == 0 || hidden_layers == 0 || hidden_width == 0 {
            return Err(Error::InvalidArgument(format!(
                "architecture needs positive sizes, got input {input_dim}, layers {hidden_layers}, width {hidden_width}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_layers,
            hidden_width,
        })
    }

    /// (fan_out, fan_in) of every affine map, output layer last.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = vec![(self.hidden_width, self.input_dim)];
        s.extend((1..self.hidden_layers).map(|_| (self.hidden_width, self.hidden_width)));
        s.push((1, self.hidden_width));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// fan_out × fan_in
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// The bare network, operating in whatever units its inputs arrive in.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .shapes()
            .into_iter()
            .map(|(o, i)| Layer {
                w: DMatrix::zeros(o, i),
                b: DVector::zeros(o),
            })
            .collect();
        Self { layers }
    }

    /// Uniform init scaled by fan-in, zero biases.
    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            let limit = (3.0 / layer.w.ncols() as f64).sqrt();
            for v in layer.w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights then biases, layer by layer (weights column-major).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(l.w.as_slice());
            p.extend_from_slice(l.b.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Activations of every layer for a batch stored column-wise (features × samples).
    fn activations(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &acts[k];
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if k < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.activations(x).pop().expect("at least one layer").as_slice().to_vec()
    }

    pub fn forward(&self, z: &[f64]) -> f64 {
        self.forward_batch(&DMatrix::from_column_slice(z.len(), 1, z))[0]
    }

    /// Mean squared error over the batch and its exact gradient (same shapes as `self`).
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &[f64]) -> (f64, Network) {
        let n = x.ncols();
        assert!(n > 0 && y.len() == n, "batch must be nonempty with one target per column");
        let acts = self.activations(x);
        let out = acts.last().expect("output layer");
        let mut delta = DMatrix::from_fn(1, n, |_, j| out[(0, j)] - y[j]);
        let loss = delta.iter().map(|d| d * d).sum::<f64>() / n as f64;
        delta *= 2.0 / n as f64;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let a_prev = &acts[k];
            let gw = &delta * a_prev.transpose();
            let gb = delta.column_sum();
            if k > 0 {
                let mut back = self.layers[k].w.transpose() * &delta;
                back.zip_apply(a_prev, |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, Network { layers: grads })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
    GradientDescent,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "gd" | "sgd" => Ok(Self::GradientDescent),
            other => Err(Error::Parse(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Stop once the training MSE (standardized units) falls below this.
    pub loss_tol: f64,
    /// Relative epoch-over-epoch loss increase tolerated before the epoch is undone
    /// and the step size halved.
    pub rise_tol: f64,
    /// Training ends when halving pushes the step size below this.
    pub min_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            loss_tol: 1e-8,
            rise_tol: 0.25,
            min_learning_rate: 1e-7,
        }
    }
}

/// Trained network plus the scalers that map raw features and targets to its units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: Architecture,
    pub net: Network,
    pub input_scaler: Standardizer,
    pub target_scaler: Standardizer,
    /// Final training MSE in standardized target units.
    pub final_loss: f64,
    pub epochs: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn columns(rows: &[Vec<f64>], idx: &[usize]) -> DMatrix<f64> {
    let r = rows[idx[0]].len();
    DMatrix::from_fn(r, idx.len(), |i, j| rows[idx[j]][i])
}

impl MlpModel {
    /// Standardizes the data, then trains from a seeded init.
    ///
    /// Sample order within an epoch is a seeded shuffle, so the result depends on the
    /// row order of `z` only through that permutation.
    pub fn train(arch: Architecture, z: &[Vec<f64>], y: &[f64], cfg: &TrainConfig) -> Result<Self> {
        if z.is_empty() || z.len() != y.len() {
            return Err(Error::InvalidArgument("training needs one target per nonempty input row".into()));
        }
        if z.iter().any(|row| row.len() != arch.input_dim) {
            return Err(Error::InvalidArgument(format!("inputs must have {} features", arch.input_dim)));
        }
        if cfg.max_epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("epochs, batch size and step size must be positive".into()));
        }
        let input_scaler = Standardizer::fit(z)?;
        let target_scaler = Standardizer::fit_scalar(y)?;
        let zs: Vec<Vec<f64>> = z.iter().map(|r| input_scaler.apply(r)).collect();
        let ys: Vec<f64> = y.iter().map(|v| target_scaler.apply_scalar(*v)).collect();
        let all: Vec<usize> = (0..zs.len()).collect();
        let full_x = columns(&zs, &all);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Network::random(&arch, &mut rng);
        let n_params = net.n_params();
        let mut adam = Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        };
        let mut params = net.params();
        let mut lr = cfg.learning_rate;
        let mut order = all.clone();
        let batch = cfg.batch_size.min(zs.len());
        let (mut loss, _) = net.loss_and_grad(&full_x, &ys);
        let mut epochs = 0;

        while epochs < cfg.max_epochs && loss > cfg.loss_tol {
            let saved = (params.clone(), adam.m.clone(), adam.v.clone(), adam.t);
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let xb = columns(&zs, chunk);
                let yb: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
                let (_, g) = net.loss_and_grad(&xb, &yb);
                let gp = g.params();
                match cfg.optimizer {
                    Optimizer::Adam => adam.step(&mut params, &gp, lr),
                    Optimizer::GradientDescent => {
                        for (p, gi) in params.iter_mut().zip(&gp) {
                            *p -= lr * gi;
                        }
                    }
                }
                net.set_params(&params);
            }
            epochs += 1;
            let (new_loss, _) = net.loss_and_grad(&full_x, &ys);
            if !new_loss.is_finite() || !net.all_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "loss became non-finite at epoch {epochs}; try a smaller learning rate (current {lr:e})"
                )));
            }
            if new_loss > loss * (1.0 + cfg.rise_tol) {
                (params, adam.m, adam.v, adam.t) = saved;
                net.set_params(&params);
                lr *= 0.5;
                log::debug!("epoch {epochs}: loss rose to {new_loss:e}, step size halved to {lr:e}");
                if lr < cfg.min_learning_rate {
                    break;
                }
            } else {
                loss = new_loss;
            }
        }
        Ok(Self {
            arch,
            net,
            input_scaler,
            target_scaler,
            final_loss: loss,
            epochs,
        })
    }

    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        if queries.iter().any(|q| q.len() != self.arch.input_dim) {
            return Err(Error::InvalidArgument(format!("queries must have {} features", self.arch.input_dim)));
        }
        let scaled: Vec<Vec<f64>> = queries.iter().map(|q| self.input_scaler.apply(q)).collect();
        let idx: Vec<usize> = (0..scaled.len()).collect();
        let out = self.net.forward_batch(&columns(&scaled, &idx));
        Ok(out.into_iter().map(|v| self.target_scaler.invert_scalar(v)).collect())
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "mplrom-mlp 1");
        let _ = writeln!(
            s,
            "arch {} {} {}",
            self.arch.input_dim, self.arch.hidden_layers, self.arch.hidden_width
        );
        let _ = writeln!(s, "input_mean {}", join(&self.input_scaler.mean));
        let _ = writeln!(s, "input_std {}", join(&self.input_scaler.std));
        let _ = writeln!(s, "target_mean {}", fmt_f64(self.target_scaler.mean[0]));
        let _ = writeln!(s, "target_std {}", fmt_f64(self.target_scaler.std[0]));
        let _ = writeln!(s, "final_loss {}", fmt_f64(self.final_loss));
        let _ = writeln!(s, "epochs {}", self.epochs);
        for l in &self.net.layers {
            let _ = writeln!(s, "layer {} {}", l.w.nrows(), l.w.ncols());
            for row in l.w.row_iter() {
                let r: Vec<f64> = row.iter().copied().collect();
                let _ = writeln!(s, "{}", join(&r));
            }
            let _ = writeln!(s, "{}", join(l.b.as_slice()));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parse(format!("MLP model file: {what}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("mplrom-mlp 1") {
            return Err(bad("missing 'mplrom-mlp 1' header"));
        }
        let mut next = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            if name.is_empty() {
                return Ok(line.trim().to_string());
            }
            line.strip_prefix(name)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {name}, found '{line}'")))
        };
        let nums = |v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        let ints = |v: &str| -> Result<Vec<usize>> {
            v.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        let a = ints(&next("arch")?)?;
        if a.len() != 3 {
            return Err(bad("arch needs three integers"));
        }
        let arch = Architecture::new(a[0], a[1], a[2])?;
        let input_scaler = Standardizer {
            mean: nums(&next("input_mean")?)?,
            std: nums(&next("input_std")?)?,
        };
        let target_scaler = Standardizer {
            mean: nums(&next("target_mean")?)?,
            std: nums(&next("target_std")?)?,
        };
        let final_loss = nums(&next("final_loss")?)?[0];
        let epochs = ints(&next("epochs")?)?.first().copied().ok_or_else(|| bad("epochs"))?;
        let mut net = Network::zeros(&arch);
        for l in &mut net.layers {
            let dims = ints(&next("layer")?)?;
            if dims != [l.w.nrows(), l.w.ncols()] {
                return Err(bad("layer shape does not match the architecture"));
            }
            for i in 0..l.w.nrows() {
                let row = nums(&next("")?)?;
                if row.len() != l.w.ncols() {
                    return Err(bad("weight row width"));
                }
                for (j, v) in row.into_iter().enumerate() {
                    l.w[(i, j)] = v;
                }
            }
            let b = nums(&next("")?)?;
            if b.len() != l.b.len() {
                return Err(bad("bias length"));
            }
            l.b = DVector::from_vec(b);
        }
        if input_scaler.dim() != arch.input_dim || !net.all_finite() {
            return Err(bad("inconsistent scaler or non-finite parameters"));
        }
        Ok(Self {
            arch,
            net,
            input_scaler,
            target_scaler,
            final_loss,
            epochs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loop_forward(net: &Network, z: &[f64]) -> f64 {
        let mut a = z.to_vec();
        let last = net.layers.len() - 1;
        for (k, l) in net.layers.iter().enumerate() {
            let mut next = vec![0.0; l.w.nrows()];
            for (j, out) in next.iter_mut().enumerate() {
                let mut s = l.b[j];
                for (i, ai) in a.iter().enumerate() {
                    s += l.w[(j, i)] * ai;
                }
                *out = if k < last { s.tanh() } else { s };
            }
            a = next;
        }
        a[0]
    }

    fn batch(n: usize, r: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.5..1.5));
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = Architecture::new(3, 2, 4).unwrap();
        let net = Network::zeros(&arch);
        assert_eq!(net.forward(&[1.0, -2.0, 5.0]), 0.0);
    }

    #[test]
    fn single_neuron_is_tanh() {
        let arch = Architecture::new(1, 1, 1).unwrap();
        let mut net = Network::zeros(&arch);
        net.layers[0].w[(0, 0)] = 1.0;
        net.layers[1].w[(0, 0)] = 1.0;
        for z in [-2.0, 0.3, 1.7] {
            assert!((net.forward(&[z]) - f64::tanh(z)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = Architecture::new(3, 4, 7).unwrap();
        let net = Network::random(&arch, &mut rng);
        let (x, _) = batch(9, 3, &mut rng);
        let out = net.forward_batch(&x);
        for j in 0..9 {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            assert!((out[j] - loop_forward(&net, &col)).abs() < 1e-12);
        }
    }

    fn gradient_check(arch: Architecture, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::random(&arch, &mut rng);
        let (x, y) = batch(5, arch.input_dim, &mut rng);
        let (_, g) = net.loss_and_grad(&x, &y);
        let g = g.params();
        let p0 = net.params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            net.set_params(&p);
            let fp = net.loss_and_grad(&x, &y).0;
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let fm = net.loss_and_grad(&x, &y).0;
            let fd = (fp - fm) / (2.0 * h);
            // Relative error with an absolute floor for near-zero components.
            worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-4));
        }
        assert!(worst < 1e-5, "{arch:?}: worst relative error {worst:e}");
    }

    #[test]
    fn backprop_matches_finite_differences() {
        gradient_check(Architecture::new(2, 2, 4).unwrap(), 3);
        gradient_check(Architecture::new(3, 6, 5).unwrap(), 4);
        gradient_check(Architecture::new(1, 1, 1).unwrap(), 5);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arch = Architecture::new(2, 3, 4).unwrap();
        let net = Network::random(&arch, &mut rng);
        let (x, _) = batch(6, 2, &mut rng);
        let y = net.forward_batch(&x);
        let (loss, g) = net.loss_and_grad(&x, &y);
        assert_eq!(loss, 0.0);
        assert!(g.params().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_is_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = Architecture::new(2, 2, 3).unwrap();
        let net = Network::random(&arch, &mut rng);
        let (x, y) = batch(4, 2, &mut rng);
        let x2 = DMatrix::from_fn(2, 8, |i, j| x[(i, j % 4)]);
        let y2: Vec<f64> = (0..8).map(|j| y[j % 4]).collect();
        let (l1, g1) = net.loss_and_grad(&x, &y);
        let (l2, g2) = net.loss_and_grad(&x2, &y2);
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.params().iter().zip(g2.params()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn quadratic_set() -> (Vec<Vec<f64>>, Vec<f64>) {
        let z: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0 + 2.0 * i as f64 / 19.0]).collect();
        let y = z.iter().map(|p| p[0] * p[0]).collect();
        (z, y)
    }

    #[test]
    fn overfits_small_quadratic() {
        let (z, y) = quadratic_set();
        let cfg = TrainConfig {
            max_epochs: 5000,
            batch_size: 20,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let m = MlpModel::train(Architecture::new(1, 2, 10).unwrap(), &z, &y, &cfg).unwrap();
        let pred = m.predict(&z).unwrap();
        let mse = pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 20.0;
        assert!(mse < 1e-4, "mse {mse:e}");
    }

    #[test]
    fn same_seed_same_weights_and_round_trip() {
        let (z, y) = quadratic_set();
        let cfg = TrainConfig {
            max_epochs: 50,
            seed: 11,
            ..TrainConfig::default()
        };
        let arch = Architecture::new(1, 3, 6).unwrap();
        let a = MlpModel::train(arch, &z, &y, &cfg).unwrap();
        let b = MlpModel::train(arch, &z, &y, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        let back = MlpModel::from_text(&a.to_text()).unwrap();
        assert_eq!(back.predict(&z).unwrap(), a.predict(&z).unwrap());
    }

    #[test]
    fn huge_step_size_diverges_with_an_error() {
        let (z, y) = quadratic_set();
        let cfg = TrainConfig {
            optimizer: Optimizer::GradientDescent,
            learning_rate: 1e6,
            rise_tol: f64::INFINITY,
            ..TrainConfig::default()
        };
        let r = MlpModel::train(Architecture::new(1, 2, 8).unwrap(), &z, &y, &cfg);
        assert!(matches!(r, Err(Error::TrainingDivergence(_))), "{r:?}");
    }

    #[test]
    fn hidden_activations_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let arch = Architecture::new(2, 3, 5).unwrap();
        let net = Network::random(&arch, &mut rng);
        let x = DMatrix::from_fn(2, 10, |_, _| rng.random_range(-100.0..100.0));
        let acts = net.activations(&x);
        for a in &acts[1..acts.len() - 1] {
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

//! Three-layer pixel classifier.
//!
//! Two hidden layers, each `linear → BatchNorm → ReLU → dropout`, followed by
//! a linear output layer producing unnormalized logits. All arithmetic is f64;
//! checkpoints store f32 (see [`Mlp::quantized`]).

pub mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl MlpArch {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: [256, 128],
            num_classes,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// All parameters of the classifier, learnable and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: MlpArch,
    pub hidden: [HiddenLayer; 2],
    /// `K × H2`.
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    /// BatchNorm output, before ReLU.
    normalized: Array2<f64>,
    /// Already scaled by `1 / (1 - p)`.
    dropout_mask: Option<Array2<f64>>,
}

/// Intermediates of a training-mode forward pass, consumed by
/// [`Mlp::backward`] and [`Mlp::update_running_stats`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hidden: [HiddenCache; 2],
    output_input: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output_input.nrows()
    }

    pub fn batch_mean(&self, layer: usize) -> &Array1<f64> {
        &self.hidden[layer].batch_mean
    }

    pub fn batch_var(&self, layer: usize) -> &Array1<f64> {
        &self.hidden[layer].batch_var
    }

    /// Normalized, scaled and shifted BatchNorm output of a hidden layer.
    pub fn normalized(&self, layer: usize) -> &Array2<f64> {
        &self.hidden[layer].normalized
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: [LayerGrads; 2],
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl Gradients {
    /// Views in [`Mlp::learnables_mut`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(10);
        for g in &self.hidden {
            out.push(g.weight.as_slice().unwrap());
            out.push(g.bias.as_slice().unwrap());
            out.push(g.gamma.as_slice().unwrap());
            out.push(g.beta.as_slice().unwrap());
        }
        out.push(self.out_weight.as_slice().unwrap());
        out.push(self.out_bias.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(10);
        for g in &mut self.hidden {
            out.push(g.weight.as_slice_mut().unwrap());
            out.push(g.bias.as_slice_mut().unwrap());
            out.push(g.gamma.as_slice_mut().unwrap());
            out.push(g.beta.as_slice_mut().unwrap());
        }
        out.push(self.out_weight.as_slice_mut().unwrap());
        out.push(self.out_bias.as_slice_mut().unwrap());
        out
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn hidden_layer(out: usize, inp: usize, rng: &mut StreamRng) -> HiddenLayer {
    HiddenLayer {
        weight: uniform_matrix(out, inp, (6.0 / inp as f64).sqrt(), rng),
        bias: Array1::zeros(out),
        gamma: Array1::ones(out),
        beta: Array1::zeros(out),
        running_mean: Array1::zeros(out),
        running_var: Array1::ones(out),
    }
}

impl Mlp {
    /// He-uniform weights, zero biases, identity BatchNorm.
    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, "init", 0);
        let [h1, h2] = arch.hidden;
        let first = hidden_layer(h1, arch.input_dim, &mut rng);
        let second = hidden_layer(h2, h1, &mut rng);
        let out_weight = uniform_matrix(arch.num_classes, h2, (6.0 / h2 as f64).sqrt(), &mut rng);
        Ok(Self {
            arch,
            hidden: [first, second],
            out_weight,
            out_bias: Array1::zeros(arch.num_classes),
        })
    }

    /// Learnable tensors: W1, b1, γ1, β1, W2, b2, γ2, β2, W3, b3.
    pub fn learnables_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(10);
        for l in &mut self.hidden {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
            out.push(l.gamma.as_slice_mut().unwrap());
            out.push(l.beta.as_slice_mut().unwrap());
        }
        out.push(self.out_weight.as_slice_mut().unwrap());
        out.push(self.out_bias.as_slice_mut().unwrap());
        out
    }

    /// Every tensor including running statistics, in checkpoint order:
    /// W1, b1, γ1, β1, μ1, v1, W2, b2, γ2, β2, μ2, v2, W3, b3.
    pub fn all_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(14);
        for l in &self.hidden {
            out.push(l.weight.as_slice().unwrap());
            out.push(l.bias.as_slice().unwrap());
            out.push(l.gamma.as_slice().unwrap());
            out.push(l.beta.as_slice().unwrap());
            out.push(l.running_mean.as_slice().unwrap());
            out.push(l.running_var.as_slice().unwrap());
        }
        out.push(self.out_weight.as_slice().unwrap());
        out.push(self.out_bias.as_slice().unwrap());
        out
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(14);
        for l in &mut self.hidden {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
            out.push(l.gamma.as_slice_mut().unwrap());
            out.push(l.beta.as_slice_mut().unwrap());
            out.push(l.running_mean.as_slice_mut().unwrap());
            out.push(l.running_var.as_slice_mut().unwrap());
        }
        out.push(self.out_weight.as_slice_mut().unwrap());
        out.push(self.out_bias.as_slice_mut().unwrap());
        out
    }

    /// Every value rounded to the nearest f32, as a checkpoint stores it.
    pub fn quantized(&self) -> Self {
        let mut q = self.clone();
        for t in q.all_tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
        q
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Logits using running BatchNorm statistics and no dropout. Each row
    /// depends only on the same row of `x`.
    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.hidden {
            let mut z = h.dot(&l.weight.t());
            let scale = (&l.running_var + BN_EPS).mapv(|v| 1.0 / v.sqrt());
            Zip::from(z.rows_mut()).for_each(|mut row| {
                Zip::from(&mut row)
                    .and(&l.bias)
                    .and(&l.running_mean)
                    .and(&scale)
                    .and(&l.gamma)
                    .and(&l.beta)
                    .for_each(|v, &b, &m, &s, &g, &be| {
                        let y = g * ((*v + b - m) * s) + be;
                        *v = y.max(0.0);
                    });
            });
            h = z;
        }
        let mut logits = h.dot(&self.out_weight.t());
        logits += &self.out_bias;
        Ok(logits)
    }

    /// Training-mode forward pass with batch statistics and dropout drawn
    /// from `dropout_rng`.
    pub fn forward_train(
        &self,
        x: ArrayView2<f64>,
        dropout_rng: &mut StreamRng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let batch = x.nrows();
        if batch < 2 {
            return Err(Error::Config(format!(
                "training-mode BatchNorm needs at least 2 rows, got {batch}"
            )));
        }
        let p = self.arch.dropout_p;
        let mut input = x.to_owned();
        let mut caches = Vec::with_capacity(2);
        for l in &self.hidden {
            let mut z = input.dot(&l.weight.t());
            z += &l.bias;
            let batch_mean = z.mean_axis(Axis(0)).unwrap();
            let centered = &z - &batch_mean;
            let batch_var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            let inv_std = batch_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = &centered * &inv_std;
            let normalized = &xhat * &l.gamma + &l.beta;
            let mut activated = normalized.mapv(|v| v.max(0.0));
            let dropout_mask = (p > 0.0).then(|| {
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_simple_fn(activated.raw_dim(), || {
                    if dropout_rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                })
            });
            if let Some(mask) = &dropout_mask {
                activated *= mask;
            }
            caches.push(HiddenCache {
                input: std::mem::replace(&mut input, activated),
                xhat,
                inv_std,
                batch_mean,
                batch_var,
                normalized,
                dropout_mask,
            });
        }
        let mut logits = input.dot(&self.out_weight.t());
        logits += &self.out_bias;
        let second = caches.pop().unwrap();
        let first = caches.pop().unwrap();
        Ok((
            logits,
            ForwardCache {
                hidden: [first, second],
                output_input: input,
            },
        ))
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        dropout_rng: &mut StreamRng,
    ) -> Result<(Array2<f64>, Option<ForwardCache>)> {
        match mode {
            Mode::Train => self
                .forward_train(x, dropout_rng)
                .map(|(l, c)| (l, Some(c))),
            Mode::Eval => self.forward_eval(x).map(|l| (l, None)),
        }
    }

    /// Exponential moving average of the batch statistics in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (l, c) in self.hidden.iter_mut().zip(&cache.hidden) {
            l.running_mean = &l.running_mean * (1.0 - BN_MOMENTUM) + &c.batch_mean * BN_MOMENTUM;
            l.running_var = &l.running_var * (1.0 - BN_MOMENTUM) + &c.batch_var * BN_MOMENTUM;
        }
    }

    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        let batch = cache.batch_size();
        if dlogits.dim() != (batch, self.arch.num_classes) {
            return Err(Error::Shape(format!(
                "dlogits is {:?}, cache expects ({batch}, {})",
                dlogits.dim(),
                self.arch.num_classes
            )));
        }
        let out_weight = dlogits.t().dot(&cache.output_input);
        let out_bias = dlogits.sum_axis(Axis(0));
        let mut upstream = dlogits.dot(&self.out_weight);

        let mut grads: Vec<LayerGrads> = Vec::with_capacity(2);
        for (l, c) in self.hidden.iter().zip(&cache.hidden).rev() {
            if c.xhat.ncols() != l.weight.nrows() {
                return Err(Error::Shape(
                    "forward cache does not match these parameters".into(),
                ));
            }
            let mut dy = upstream;
            if let Some(mask) = &c.dropout_mask {
                dy *= mask;
            }
            Zip::from(&mut dy).and(&c.normalized).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
            let gamma = (&dy * &c.xhat).sum_axis(Axis(0));
            let beta = dy.sum_axis(Axis(0));
            let dxhat = &dy * &l.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let n = batch as f64;
            let dz = (&dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * (&c.inv_std / n);
            let weight = dz.t().dot(&c.input);
            let bias = dz.sum_axis(Axis(0));
            upstream = dz.dot(&l.weight);
            grads.push(LayerGrads {
                weight,
                bias,
                gamma,
                beta,
            });
        }
        let first = grads.pop().unwrap();
        let second = grads.pop().unwrap();
        Ok(Gradients {
            hidden: [first, second],
            out_weight,
            out_bias,
        })
    }

    /// θ ← θ − lr·g for every learnable tensor.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in self.learnables_mut().into_iter().zip(grads.tensors()) {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        }
    }
}

/// Mean softmax cross-entropy and its gradient `(softmax − onehot) / B`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[u8]) -> Result<(f64, Array2<f64>)> {
    let (batch, k) = logits.dim();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for {batch} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let mut grad = Array2::zeros((batch, k));
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[usize::from(label)];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp();
        }
        g[usize::from(label)] -= 1.0;
    }
    let n = batch as f64;
    grad /= n;
    Ok((total / n, grad))
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<u8> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub const GRAD_CHECK_EPS: f64 = 1e-3;

/// Maximum relative error between analytic gradients and central finite
/// differences on a seeded random batch (dropout disabled).
pub fn grad_check(arch: MlpArch, seed: u64, batch: usize) -> Result<f64> {
    grad_check_with(arch, seed, batch, |_| {})
}

/// [`grad_check`] with a hook that may tamper with the analytic gradients
/// before comparison, for testing the checker itself.
pub fn grad_check_with(
    arch: MlpArch,
    seed: u64,
    batch: usize,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<f64> {
    let arch = MlpArch {
        dropout_p: 0.0,
        ..arch
    };
    let mut model = Mlp::init(arch, seed)?;
    let mut data_rng = rng::stream(seed, "gradcheck", 0);
    let x = Array2::from_shape_simple_fn((batch, arch.input_dim), || rng::gaussian(&mut data_rng));
    let labels: Vec<u8> = (0..batch)
        .map(|_| data_rng.random_range(0..arch.num_classes) as u8)
        .collect();

    let mut unused = rng::stream(seed, "gradcheck-dropout", 0);
    let loss = |m: &Mlp, r: &mut StreamRng| -> Result<f64> {
        let (logits, _) = m.forward_train(x.view(), r)?;
        Ok(cross_entropy(logits.view(), &labels)?.0)
    };

    let (logits, cache) = model.forward_train(x.view(), &mut unused)?;
    let (_, dlogits) = cross_entropy(logits.view(), &labels)?;
    let mut grads = model.backward(&cache, dlogits.view())?;
    tamper(&mut grads);
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut worst = 0.0f64;
    for (t, analytic_t) in analytic.iter().enumerate() {
        for (i, &a) in analytic_t.iter().enumerate() {
            let original = model.learnables_mut()[t][i];
            model.learnables_mut()[t][i] = original + GRAD_CHECK_EPS;
            let plus = loss(&model, &mut unused)?;
            model.learnables_mut()[t][i] = original - GRAD_CHECK_EPS;
            let minus = loss(&model, &mut unused)?;
            model.learnables_mut()[t][i] = original;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPS);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

//! Parameters, pointwise layers and the Adam optimizer.
//!
//! Layers do not own their weights. They hold slot numbers into a
//! [`ParamStore`], and a forward pass reads the weights through a [`Bound`]
//! view that wraps every slot in a [`Var`]. The same layer description can
//! therefore run in `f32` or `f64`, with or without gradient tracking.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
const BN_EPS: f64 = 1e-5;

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a tensor and return its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    /// Replace a named tensor with one of the same shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Argument(format!("no parameter named {name}")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Argument(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    /// Overwrite every slot from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (name, (dst, src)) in self.names.iter().zip(self.values.iter_mut().zip(&other.values)) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} in file, {:?} expected",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Wrap every slot in a [`Var`]; `trainable` selects gradient tracking.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { Var::param(v.clone()) } else { Var::constant(v.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// The parameters of one store as graph leaves, indexed by slot.
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    pub fn get(&self, slot: usize) -> &Var<T> {
        &self.vars[slot]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// Creates parameters with seeded initial values under a name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f64>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f64>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Run `f` with `name` appended to the prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> R) -> R {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        let mut inner = Builder { store: self.store, rng: self.rng, prefix };
        f(&mut inner)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> usize {
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        let name = self.full_name(name);
        self.store.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> usize {
        let name = self.full_name(name);
        self.store.add(name, Tensor::full(rows, cols, value))
    }
}

/// `x W + b` applied to every row.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: usize,
    bias: usize,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialisation, or all zeros when `zero_init`.
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, out_dim: usize, zero_init: bool) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "layer {name}: widths must be positive");
        b.scope(name, |b| {
            let bound = if zero_init { 0.0 } else { 1.0 / (in_dim as f64).sqrt() };
            let weight = b.uniform("weight", in_dim, out_dim, bound);
            let bias = b.uniform("bias", 1, out_dim, bound);
            Self { weight, bias, in_dim, out_dim }
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        debug_assert_eq!(x.cols(), self.in_dim);
        x.matmul(p.get(self.weight)).add_row(p.get(self.bias))
    }
}

/// Normalise each column by the statistics of the rows it is given.
///
/// There are no running averages: training and inference both normalise with
/// the statistics of the current patch, so one patch's output never depends
/// on another patch.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: usize,
    beta: usize,
}

impl BatchNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize) -> Self {
        b.scope(name, |b| Self { gamma: b.constant("gamma", 1, dim, 1.0), beta: b.constant("beta", 1, dim, 0.0) })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let r = x.rows();
        let inv_r = T::from_f64_lossy(1.0 / r as f64);
        let mean = x.sum_rows().scale(inv_r);
        let centered = x.sub(&mean.broadcast_rows(r));
        let var = centered.square().sum_rows().scale(inv_r);
        let inv_std = var.add_scalar(T::from_f64_lossy(BN_EPS)).sqrt().recip();
        centered.mul(&inv_std.mul(p.get(self.gamma)).broadcast_rows(r)).add_row(p.get(self.beta))
    }
}

/// Graph-convolution layer: pointwise linear, optional batch norm, leaky ReLU.
#[derive(Debug, Clone)]
pub struct Gcl {
    linear: Linear,
    norm: Option<BatchNorm>,
}

impl Gcl {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, out_dim: usize, batch_norm: bool) -> Self {
        b.scope(name, |b| Self {
            linear: Linear::new(b, "linear", in_dim, out_dim, false),
            norm: batch_norm.then(|| BatchNorm::new(b, "bn", out_dim)),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let y = self.linear.forward(p, x);
        let y = match &self.norm {
            Some(bn) => bn.forward(p, &y),
            None => y,
        };
        y.leaky_relu(T::from_f64_lossy(LEAKY_SLOPE))
    }
}

/// Linear layers with leaky ReLU between them and a plain final layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every size including input and output, e.g. `[18, 32, 32, 16]`.
    pub fn new(b: &mut Builder<'_>, name: &str, widths: &[usize], zero_init_last: bool) -> Self {
        assert!(widths.len() >= 2, "mlp {name} needs at least one layer");
        b.scope(name, |b| {
            let last = widths.len() - 2;
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(b, &i.to_string(), w[0], w[1], zero_init_last && i == last))
                .collect();
            Self { layers }
        })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, &h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(slope);
            }
        }
        h
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, betas: (f64, f64)) -> Self {
        let zeros = || store.values().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { lr, beta1: betas.0, beta2: betas.1, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (lr, eps) = (T::from_f64_lossy(self.lr / c1), T::from_f64_lossy(self.eps));
        let sqrt_c2 = T::from_f64_lossy(c2.sqrt());
        for ((p, g), (m, v)) in store.values_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= lr * *m / ((*v).sqrt() / sqrt_c2 + eps);
            }
        }
    }
}

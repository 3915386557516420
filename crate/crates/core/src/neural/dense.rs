//! Fully connected ReLU network with batched forward/backward passes.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// ReLU on hidden layers, identity on the output layer. Weights are stored
/// `(out, in)`; batches are rows.
#[derive(Debug)]
pub struct DenseNet {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    /// Identity of the current parameter values; changes on every update so
    /// caches from older parameters can be detected.
    version: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            version: fresh_id(),
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.weights == other.weights && self.biases == other.biases
    }
}

/// Activations saved by [`DenseNet::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer (the batch itself first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Signs of every hidden pre-activation, used to spot ReLU kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|p| p.iter().map(|v| *v > 0.0)).collect()
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Flattened in [`DenseNet::param`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl DenseNet {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(())
    }

    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            version: fresh_id(),
        })
    }

    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for w in &mut net.weights {
            let normal = Normal::new(0.0, (2.0 / w.ncols() as f64).sqrt()).expect("positive std");
            w.mapv_inplace(|_| normal.sample(rng));
        }
        Ok(net)
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::dim("weights and biases must pair up"));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *sizes.last().expect("nonempty") || b.len() != w.nrows() {
                return Err(Error::dim(format!("layer {i} shape mismatch")));
            }
            sizes.push(w.nrows());
        }
        Self::check_sizes(&sizes)?;
        if weights.iter().any(|w| w.iter().any(|v| !v.is_finite()))
            || biases.iter().any(|b| b.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self {
            sizes,
            weights,
            biases,
            version: fresh_id(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if i < w.len() {
                return (l, true, i);
            }
            i -= w.len();
            if i < b.len() {
                return (l, false, i);
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in flattened order (layer by layer, weights row-major
    /// then biases).
    pub fn param(&self, i: usize) -> f64 {
        match self.locate(i) {
            (l, true, k) => self.weights[l].as_slice().expect("standard layout")[k],
            (l, false, k) => self.biases[l][k],
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        match self.locate(i) {
            (l, true, k) => self.weights[l].as_slice_mut().expect("standard layout")[k] = v,
            (l, false, k) => self.biases[l][k] = v,
        }
        self.version = fresh_id();
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(&w.t()) + b;
            if l < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::dim(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len() - 1);
        let mut h = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = h.dot(&w.t()) + b;
            inputs.push(h);
            if l < last {
                h = z.mapv(|v| v.max(0.0));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((
            h,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse pass for upstream gradient `grad_out` (batch × output).
    /// Returns parameter gradients summed over the batch and the gradient
    /// with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.version != self.version {
            return Err(Error::invalid("forward cache is stale: parameters changed since"));
        }
        let batch = cache.inputs[0].nrows();
        if grad_out.dim() != (batch, self.output_dim()) {
            return Err(Error::dim(format!(
                "upstream gradient {:?}, expected ({batch}, {})",
                grad_out.dim(),
                self.output_dim()
            )));
        }
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out.to_owned();
        for l in (0..n).rev() {
            if l < n - 1 {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[l])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            gw.push(delta.t().dot(&cache.inputs[l]));
            gb.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.weights[l]);
        }
        gw.reverse();
        gb.reverse();
        Ok((
            Gradients {
                weights: gw,
                biases: gb,
            },
            delta,
        ))
    }

    /// Applies `update(param, grad)` in place and invalidates caches.
    pub(crate) fn update_with<F: FnMut(usize, &mut f64, f64)>(&mut self, grads: &Gradients, mut f: F) {
        let mut k = 0;
        for l in 0..self.weights.len() {
            for (p, g) in self.weights[l].iter_mut().zip(grads.weights[l].iter()) {
                f(k, p, *g);
                k += 1;
            }
            for (p, g) in self.biases[l].iter_mut().zip(grads.biases[l].iter()) {
                f(k, p, *g);
                k += 1;
            }
        }
        self.version = fresh_id();
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let n = net.num_params();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let (m, v) = (&mut self.m, &mut self.v);
        net.update_with(grads, |k, p, g| {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        });
    }
}

//! Dense layers over flat parameter vectors with hand-written backprop,
//! plus the Adam/AdamW optimizer and gradient-norm clipping.
//!
//! A network owns no storage: it records offsets into a shared `&[f64]`
//! parameter vector, and gradients use the same layout.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative in terms of the pre-activation `x` and output `y`.
    #[inline]
    fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Named slice of the parameter vector, used for checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

/// Sequential allocator of parameter ranges.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub len: usize,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn tensor(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let n: usize = shape.iter().product();
        let range = self.len..self.len + n;
        self.len += n;
        self.tensors.push(TensorSpec { name: name.into(), shape, range: range.clone() });
        range
    }

    pub fn mlp(&mut self, name: &str, sizes: &[usize], hidden: Activation, output: Activation) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let weight = self.tensor(format!("{name}.{i}.weight"), vec![w[1], w[0]]);
            let bias = self.tensor(format!("{name}.{i}.bias"), vec![w[1]]);
            layers.push(Dense { inputs: w[0], outputs: w[1], weight, bias });
        }
        Mlp { layers, hidden, output }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    weight: Range<usize>,
    bias: Range<usize>,
}

impl Dense {
    /// y (n × out) = x (n × in) · Wᵀ + b
    fn forward(&self, p: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let w = &p[self.weight.clone()];
        let b = &p[self.bias.clone()];
        let (ni, no) = (self.inputs, self.outputs);
        let mut y: Vec<f64> = b.iter().copied().cycle().take(n * no).collect();
        // SAFETY: every buffer is sized for the stated shapes and strides.
        unsafe {
            matrixmultiply::dgemm(
                n, ni, no, 1.0,
                x.as_ptr(), ni as isize, 1,
                w.as_ptr(), 1, ni as isize,
                1.0, y.as_mut_ptr(), no as isize, 1,
            );
        }
        y
    }

    /// Accumulates dW, db into `g` and returns dx (empty unless `need_dx`).
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], n: usize, g: &mut [f64], need_dx: bool) -> Vec<f64> {
        let (ni, no) = (self.inputs, self.outputs);
        let w = &p[self.weight.clone()];
        let gw = &mut g[self.weight.clone()];
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                no, n, ni, 1.0,
                dy.as_ptr(), 1, no as isize,
                x.as_ptr(), ni as isize, 1,
                1.0, gw.as_mut_ptr(), ni as isize, 1,
            );
        }
        let gb = &mut g[self.bias.clone()];
        for r in 0..n {
            for (gbo, d) in gb.iter_mut().zip(&dy[r * no..(r + 1) * no]) {
                *gbo += d;
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; n * ni];
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                n, no, ni, 1.0,
                dy.as_ptr(), no as isize, 1,
                w.as_ptr(), ni as isize, 1,
                0.0, dx.as_mut_ptr(), ni as isize, 1,
            );
        }
        dx
    }

    fn init(&self, p: &mut [f64], rng: &mut impl Rng) {
        let bound = 1.0 / (self.inputs as f64).sqrt();
        for v in &mut p[self.weight.clone()] {
            *v = rng.random_range(-bound..bound);
        }
        for v in &mut p[self.bias.clone()] {
            *v = rng.random_range(-bound..bound);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Intermediate values of one batched MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    n: usize,
    /// Input to each layer, then the final output.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the output")
    }
}

impl Mlp {
    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.inputs * l.outputs + l.outputs).sum()
    }

    fn act(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Fan-in scaled uniform initialization.
    pub fn init(&self, p: &mut [f64], rng: &mut impl Rng) {
        for l in &self.layers {
            l.init(p, rng);
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], n: usize) -> MlpCache {
        debug_assert_eq!(x.len(), n * self.inputs());
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(p, acts.last().unwrap(), n);
            let a = self.act(i);
            let y = z.iter().map(|&v| a.apply(v)).collect();
            pre.push(z);
            acts.push(y);
        }
        MlpCache { n, acts, pre }
    }

    /// Forward pass without keeping intermediates.
    pub fn eval(&self, p: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let a = self.act(i);
            cur = l.forward(p, &cur, n);
            for v in &mut cur {
                *v = a.apply(*v);
            }
        }
        cur
    }

    /// Accumulates parameter gradients into `g`; returns d(input).
    pub fn backward(&self, p: &[f64], cache: &MlpCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        self.backward_impl(p, cache, dy, g, true)
    }

    /// As `backward`, skipping the input gradient.
    pub fn backward_params(&self, p: &[f64], cache: &MlpCache, dy: &[f64], g: &mut [f64]) {
        self.backward_impl(p, cache, dy, g, false);
    }

    fn backward_impl(&self, p: &[f64], cache: &MlpCache, dy: &[f64], g: &mut [f64], need_dx: bool) -> Vec<f64> {
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let a = self.act(i);
            let z = &cache.pre[i];
            let y = &cache.acts[i + 1];
            for ((dv, &zv), &yv) in d.iter_mut().zip(z).zip(y) {
                *dv *= a.grad(zv, yv);
            }
            d = self.layers[i].backward(p, &cache.acts[i], &d, cache.n, g, need_dx || i > 0);
        }
        d
    }
}

/// Euclidean norm of a gradient vector.
pub fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `g` so its norm is at most `max_norm`; returns the norm before.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = grad_norm(g);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    n
}

/// Adam with optional decoupled weight decay (AdamW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One update with learning rate `lr` and decoupled decay `wd`.
    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            p[i] -= lr * (mh / (vh.sqrt() + self.eps) + wd * p[i]);
        }
    }
}

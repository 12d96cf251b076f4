//! Parameter layout and layers with hand-written reverse passes.
//!
//! Parameters live in one flat `Vec<f64>` so that optimizers, gradient
//! checks and serialization treat every model alike. Layers hold [`Block`]
//! descriptors and borrow views into the flat vector on each call.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in +-1/sqrt(fan_in).
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    entries: Vec<(String, Block, Init)>,
    len: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Block {
        let block = Block {
            offset: self.len,
            rows,
            cols,
        };
        self.len += block.len();
        self.entries.push((name.into(), block, init));
        block
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, Block)> {
        self.entries.iter().map(|(n, b, _)| (n.as_str(), *b))
    }

    /// Name of the block containing flat index `i`.
    pub fn block_name(&self, i: usize) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, b, _)| b.range().contains(&i))
            .map(|(n, _, _)| n.as_str())
    }

    /// First block holding a non-finite value, if any.
    pub fn first_non_finite(&self, values: &[f64]) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, b, _)| values[b.range()].iter().any(|v| !v.is_finite()))
            .map(|(n, _, _)| n.as_str())
    }

    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; self.len];
        for (_, block, init) in &self.entries {
            let dst = &mut out[block.range()];
            match *init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    for v in dst {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
            }
        }
        out
    }
}

pub fn mat(p: &[f64], b: Block) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((b.rows, b.cols), &p[b.range()]).expect("block shape")
}

pub fn mat_mut(g: &mut [f64], b: Block) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut g[b.range()]).expect("block shape")
}

pub fn row(p: &[f64], b: Block) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[b.range()])
}

pub fn row_mut(g: &mut [f64], b: Block) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut g[b.range()])
}

/// Training mode carries the dropout RNG; inference mode never drops.
pub enum Mode<'r> {
    Inference,
    Training(&'r mut ChaCha8Rng),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: Block,
    pub b: Block,
}

impl Dense {
    pub fn new(layout: &mut Layout, name: &str, input: usize, output: usize) -> Self {
        Self {
            w: layout.add(format!("{name}.w"), input, output, Init::FanIn(input)),
            b: layout.add(format!("{name}.b"), 1, output, Init::Zeros),
        }
    }

    pub fn input(&self) -> usize {
        self.w.rows
    }

    pub fn output(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&mat(p, self.w));
        y += &row(p, self.b);
        y
    }

    /// Accumulates parameter gradients; returns dL/dx when `want_input`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut mat_mut(g, self.w));
        row_mut(g, self.b).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        want_input.then(|| dy.dot(&mat(p, self.w).t()))
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: Block,
    pub beta: Block,
}

pub struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(layout: &mut Layout, name: &str, width: usize) -> Self {
        Self {
            gamma: layout.add(format!("{name}.gamma"), 1, width, Init::Ones),
            beta: layout.add(format!("{name}.beta"), 1, width, Init::Zeros),
        }
    }

    pub fn forward(&self, p: &[f64], z: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let n = z.ncols() as f64;
        let mean = z.mean_axis(Axis(1)).expect("non-empty rows");
        let mut xhat = z - &mean.insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let mut y = &xhat * &row(p, self.gamma);
        y += &row(p, self.beta);
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &NormCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let n = dy.ncols() as f64;
        row_mut(g, self.gamma).scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
        row_mut(g, self.beta).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dxhat = dy * &row(p, self.gamma);
        let sum = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let dot = (&dxhat * &cache.xhat)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let mut dz = dxhat * n - &sum - &(&cache.xhat * &dot);
        dz *= &(&cache.inv_std / n).insert_axis(Axis(1));
        dz
    }
}

/// dense -> ReLU -> dense -> dropout, plus a linear skip, then optional
/// layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub hidden: Dense,
    pub output: Dense,
    pub skip: Dense,
    pub norm: Option<LayerNorm>,
    pub dropout: f64,
}

pub struct ResidualCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    h: Array2<f64>,
    mask: Option<Array2<f64>>,
    norm: Option<NormCache>,
}

impl ResidualBlock {
    pub fn new(
        layout: &mut Layout,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        layer_norm: bool,
        dropout: f64,
    ) -> Self {
        Self {
            hidden: Dense::new(layout, &format!("{name}.hidden"), input, hidden),
            output: Dense::new(layout, &format!("{name}.output"), hidden, output),
            skip: Dense::new(layout, &format!("{name}.skip"), input, output),
            norm: layer_norm.then(|| LayerNorm::new(layout, &format!("{name}.norm"), output)),
            dropout,
        }
    }

    pub fn forward(
        &self,
        p: &[f64],
        x: Array2<f64>,
        mode: &mut Mode,
    ) -> (Array2<f64>, ResidualCache) {
        let pre = self.hidden.forward(p, x.view());
        let h = pre.mapv(|v| v.max(0.0));
        let mut out = self.output.forward(p, h.view());
        let mask = match mode {
            Mode::Training(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let m = Array2::from_shape_fn(out.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        out += &self.skip.forward(p, x.view());
        let (y, norm) = match &self.norm {
            Some(ln) => {
                let (y, c) = ln.forward(p, &out);
                (y, Some(c))
            }
            None => (out, None),
        };
        (
            y,
            ResidualCache {
                x,
                pre,
                h,
                mask,
                norm,
            },
        )
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ResidualCache,
        dy: Array2<f64>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let dz = match (&self.norm, &cache.norm) {
            (Some(ln), Some(c)) => ln.backward(p, g, c, &dy),
            _ => dy,
        };
        let dskip = self
            .skip
            .backward(p, g, cache.x.view(), dz.view(), want_input);
        let dout = match &cache.mask {
            Some(m) => &dz * m,
            None => dz,
        };
        let mut dh = self
            .output
            .backward(p, g, cache.h.view(), dout.view(), true)
            .expect("requested");
        dh.zip_mut_with(&cache.pre, |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        let dx = self
            .hidden
            .backward(p, g, cache.x.view(), dh.view(), want_input);
        match (dx, dskip) {
            (Some(mut a), Some(b)) => {
                a += &b;
                Some(a)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Mean of `mask * (pred - target)^2` over the unmasked entries, and its
/// gradient with respect to `pred`.
pub fn masked_mse(
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
    mask: ArrayView2<f64>,
) -> (f64, Array2<f64>) {
    let count = mask.sum().max(1.0);
    let diff = (&pred - &target) * &mask;
    let loss = diff.mapv(|d| d * d).sum() / count;
    (loss, diff * (2.0 / count))
}

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &[f64]) -> f64;
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that parameters whose true
/// gradient is ~0 are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Central finite differences over `samples` indices. Every block in
/// `layout` contributes at least one index when it has parameters.
pub fn gradient_check(
    objective: &impl Objective,
    params: &[f64],
    layout: Option<&Layout>,
    samples: usize,
    seed: u64,
) -> GradientReport {
    let (_, grad) = objective.loss_and_grad(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = Vec::with_capacity(samples);
    if let Some(layout) = layout {
        for (_, b) in layout.blocks() {
            if !b.is_empty() {
                indices.push(b.offset + rng.random_range(0..b.len()));
            }
        }
    }
    while indices.len() < samples.max(1) {
        indices.push(rng.random_range(0..params.len()));
    }
    let mut probe = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    for &i in &indices {
        let orig = probe[i];
        probe[i] = orig + GRAD_CHECK_STEP;
        let up = objective.loss(&probe);
        probe[i] = orig - GRAD_CHECK_STEP;
        let down = objective.loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = grad[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let err = (grad[i] - numeric).abs() / denom;
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    GradientReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
    }
}

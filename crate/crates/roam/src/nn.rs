//! Dense neural-network kernels: row-major matrices, multilayer perceptrons
//! with leaky-relu hidden layers and hand-written reverse mode, a stable
//! softmax, and Adam with bias correction. Everything is `f64` and all
//! randomness comes from caller-provided seeded generators.

use alloc::string::String;
use alloc::vec::Vec;

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fp;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dot product with four-way accumulators. Fixed summation order, so results
/// are reproducible run to run.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    /// Glorot-uniform init: entries drawn from ±sqrt(6/(fan_in+fan_out)),
    /// where fan_in = cols and fan_out = rows.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = fp::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// out = M x.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            out[r] = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// out += Mᵀ d. Walks rows so memory access stays contiguous.
    pub fn matvec_t_add(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let s = d[r];
            if s == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += s * w;
            }
        }
    }

    /// self += u vᵀ (gradient accumulation for W given dpre = u, input = v).
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let s = u[r];
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, x) in row.iter_mut().zip(v) {
                *w += s * x;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

/// Serialized as shape plus base64 of the little-endian f64 payload; keeps
/// multi-megabyte checkpoints compact while staying self-describing.
#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data_f64_le_b64: String,
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            data_f64_le_b64: base64::engine::general_purpose::STANDARD.encode(&bytes),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = MatrixRepr::deserialize(de)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&repr.data_f64_le_b64)
            .map_err(D::Error::custom)?;
        if bytes.len() != repr.rows * repr.cols * 8 {
            return Err(D::Error::custom("matrix payload length mismatch"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix { rows: repr.rows, cols: repr.cols, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Linear => z,
        }
    }

    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Layer {
    w: Matrix,
    b: Vec<f64>,
    act: Activation,
}

/// Multilayer perceptron: leaky-relu on hidden layers, linear output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer buffers recorded by a cached forward pass: the input fed to
/// each layer and its preactivation.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    xs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
}

/// Gradient accumulator with the same shapes as the network.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    ws: Vec<Matrix>,
    bs: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds from layer widths, e.g. `[26, 128, 128, 4]`. Weights are
    /// Glorot-uniform from the given generator, biases zero.
    pub fn glorot<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Layer {
                w: Matrix::glorot(d[1], d[0], rng),
                b: alloc::vec![0.0; d[1]],
                act: if i == last { Activation::Linear } else { Activation::LeakyRelu },
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = alloc::vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.rows()));
        dims
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.w.matvec(&cur);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi = layer.act.apply(*zi + bi);
            }
            cur = z;
        }
        cur
    }

    /// Forward pass that records per-layer inputs and preactivations for a
    /// later [`Mlp::backward`]. The cache is reused across calls.
    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.xs.resize(self.layers.len(), Vec::new());
        cache.zs.resize(self.layers.len(), Vec::new());
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&cur);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            cache.zs[l].clone_from(&z);
            cache.xs[l] = cur;
            for zi in z.iter_mut() {
                *zi = layer.act.apply(*zi);
            }
            cur = z;
        }
        cur
    }

    /// Reverse pass for the forward recorded in `cache`. Accumulates
    /// parameter gradients into `grads` and returns d(objective)/d(input).
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        debug_assert_eq!(dout.len(), self.out_dim());
        let mut d = dout.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (di, zi) in d.iter_mut().zip(&cache.zs[l]) {
                *di *= layer.act.grad(*zi);
            }
            grads.ws[l].add_outer(&d, &cache.xs[l]);
            for (gb, di) in grads.bs[l].iter_mut().zip(&d) {
                *gb += di;
            }
            let mut dx = alloc::vec![0.0; layer.w.cols()];
            layer.w.matvec_t_add(&d, &mut dx);
            d = dx;
        }
        d
    }

    /// Reverse pass that computes only d(objective)/d(input), skipping
    /// parameter-gradient accumulation. Used on frozen networks.
    pub fn backward_input(&self, cache: &MlpCache, dout: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dout.len(), self.out_dim());
        let mut d = dout.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (di, zi) in d.iter_mut().zip(&cache.zs[l]) {
                *di *= layer.act.grad(*zi);
            }
            let mut dx = alloc::vec![0.0; layer.w.cols()];
            layer.w.matvec_t_add(&d, &mut dx);
            d = dx;
        }
        d
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            ws: self.layers.iter().map(|l| Matrix::zeros(l.w.rows(), l.w.cols())).collect(),
            bs: self.layers.iter().map(|l| alloc::vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.data.len() + l.b.len()).sum()
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.data.as_mut_slice(), l.b.as_mut_slice()])
    }

    /// target ← τ·online + (1−τ)·target, element-wise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.param_slices_mut().zip(online.param_slices()) {
            for (ti, oi) in t.iter_mut().zip(o) {
                *ti = tau * oi + (1.0 - tau) * *ti;
            }
        }
    }
}

impl MlpGrads {
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.ws
            .iter()
            .zip(&self.bs)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn zero(&mut self) {
        for w in &mut self.ws {
            w.fill(0.0);
        }
        for b in &mut self.bs {
            b.fill(0.0);
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, s: f64) {
        for (a, b) in self.ws.iter_mut().zip(&other.ws) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += s * y;
            }
        }
        for (a, b) in self.bs.iter_mut().zip(&other.bs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }
}

/// In-place stable softmax (max subtraction). Empty slices are left empty.
pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = fp::exp(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Shannon entropy −Σ p ln p of a weight vector, with 0·ln 0 = 0.
pub fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * fp::ln(p);
        }
    }
    h
}

/// Adam over a fixed-size flattened parameter set, with bias correction.
/// Callers feed parameter/gradient slice pairs in a stable order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn param_count(&self) -> usize {
        self.m.len()
    }

    pub fn new(param_count: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: alloc::vec![0.0; param_count],
            v: alloc::vec![0.0; param_count],
        }
    }

    /// One update over the full parameter set. The iterator must cover
    /// exactly the parameter count given at construction, in the same order
    /// every call.
    pub fn step<'a>(&mut self, pairs: impl Iterator<Item = (&'a mut [f64], &'a [f64])>) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let mut off = 0;
        for (params, grads) in pairs {
            debug_assert_eq!(params.len(), grads.len());
            let m = &mut self.m[off..off + params.len()];
            let v = &mut self.v[off..off + params.len()];
            for i in 0..params.len() {
                let g = grads[i];
                assert!(g.is_finite(), "non-finite gradient at parameter offset {}", off + i);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                params[i] -= self.lr * mhat / (fp::sqrt(vhat) + self.eps);
            }
            off += params.len();
        }
        debug_assert_eq!(off, self.m.len(), "optimizer fed wrong parameter count");
    }
}

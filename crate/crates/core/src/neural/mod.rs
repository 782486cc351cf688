//! Minimal trainable-network toolkit with manual backpropagation.
//!
//! A [`NetworkModel`] is an ordered list of layers: dense (optionally
//! applied row-wise to a `[n][d]` matrix), 2-D convolution, a single-head
//! self-attention block with residual and feed-forward, and row pooling
//! (max or sum). Forward passes return a cache holding exactly what the
//! matching backward pass needs; backward returns analytic parameter
//! gradients plus the input gradient so models can be chained into larger
//! graphs by hand. Everything is f64 and deterministic; complex signals
//! enter as interleaved (re, im) feature pairs.

mod gradcheck;
mod io;
mod optimizer;

pub use gradcheck::{composite_gradient_check, gradient_check, GradCheckReport, FD_STEP};
pub use io::{load_model, save_model};
pub use optimizer::AdamState;

use num_complex::Complex64;
use rand::Rng;

use crate::{Error, Result};

/// Interleaves complex values as [re0, im0, re1, im1, ...].
pub fn interleave(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * 2);
    for c in values {
        out.push(c.re);
        out.push(c.im);
    }
    out
}

/// Inverse of [`interleave`].
pub fn deinterleave(values: &[f64]) -> Vec<Complex64> {
    debug_assert_eq!(values.len() % 2, 0);
    values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![0.0; len] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Pointwise activation applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative as a function of the pre-activation value. The ReLU
    /// subgradient at exactly 0 is taken as 0.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Row pooling flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// Column-wise max over rows; gradient routes to the argmax row, ties
    /// broken toward the lowest row index.
    Max,
    /// Column-wise sum over rows; gradient broadcasts to every row.
    Sum,
}

/// Fully connected layer, `w` stored `[out][in]` row-major.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// 2-D convolution over `[ch][h][w]`, `w` stored `[oc][ic][kh][kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv2d {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

/// Single-head self-attention block with residual connections and a ReLU
/// feed-forward: `h = x + attn(x)`, `out = h + ff(h)`. All projection
/// matrices are `[d][d]` (`w1` is `[d_ff][d]`, `w2` is `[d][d_ff]`).
#[derive(Debug, Clone)]
pub struct Attention {
    pub d_model: usize,
    pub d_ff: usize,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// One layer of a [`NetworkModel`].
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Attention(Attention),
    PoolRows(PoolKind),
}

impl Layer {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.w, &d.b],
            Layer::Conv2d(c) => vec![&c.w, &c.b],
            Layer::Attention(a) => vec![
                &a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo, &a.w1, &a.b1, &a.w2,
                &a.b2,
            ],
            Layer::PoolRows(_) => vec![],
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.w, &mut d.b],
            Layer::Conv2d(c) => vec![&mut c.w, &mut c.b],
            Layer::Attention(a) => vec![
                &mut a.wq, &mut a.bq, &mut a.wk, &mut a.bk, &mut a.wv, &mut a.bv, &mut a.wo,
                &mut a.bo, &mut a.w1, &mut a.b1, &mut a.w2, &mut a.b2,
            ],
            Layer::PoolRows(_) => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// Per-layer forward cache; holds what backward needs and nothing else.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense { input: Tensor, rows: usize, flattened: bool, pre: Vec<f64> },
    Conv2d { input: Tensor, pre: Tensor },
    Attention(Box<AttentionCache>),
    PoolRows { in_shape: Vec<usize>, argmax: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: Tensor,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub attn: Vec<f64>,
    pub ctx: Vec<f64>,
    pub h: Vec<f64>,
    pub f_pre: Vec<f64>,
    pub f: Vec<f64>,
}

/// Ordered feed-forward computation graph.
#[derive(Debug, Clone, Default)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
}

/// Parameter gradients mirroring a model's layer/tensor structure.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Grads {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Grads {
            layers: model
                .layers
                .iter()
                .map(|l| l.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (la, lb) in self.layers.iter_mut().zip(&other.layers) {
            for (ta, tb) in la.iter_mut().zip(lb) {
                for (a, b) in ta.iter_mut().zip(tb) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for t in l {
                for v in t {
                    *v *= s;
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|t| t.iter().all(|v| v.is_finite())))
    }
}

impl NetworkModel {
    pub fn new(layers: Vec<Layer>) -> Self {
        NetworkModel { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Forward pass returning the output and the caches backward needs.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer_forward(layer, &x)
                .map_err(|e| Error::ShapeMismatch(format!("layer {idx}: {e}")))?;
            caches.push(cache);
            x = out;
        }
        Ok((x, caches))
    }

    /// Forward pass without retaining caches.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (out, _) = layer_forward(layer, &x)
                .map_err(|e| Error::ShapeMismatch(format!("layer {idx}: {e}")))?;
            x = out;
        }
        Ok(x)
    }

    /// Backpropagates `grad_out` through the cached forward pass, returning
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, caches: &[LayerCache], grad_out: &Tensor) -> Result<(Grads, Tensor)> {
        let mut grads = Grads::zeros_like(self);
        let gin = self.backward_acc(caches, grad_out, &mut grads)?;
        Ok((grads, gin))
    }

    /// Like [`NetworkModel::backward`] but accumulates into an existing
    /// gradient buffer, so batch loops avoid per-sample allocation.
    pub fn backward_acc(
        &self,
        caches: &[LayerCache],
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        if caches.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache has {} layers, model has {}",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut g = grad_out.clone();
        for (idx, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            g = layer_backward(layer, cache, &g, &mut grads.layers[idx])
                .map_err(|e| Error::Contract(format!("layer {idx}: {e}")))?;
        }
        Ok(g)
    }
}

/// How a dense layer interprets its input.
fn dense_rows(d: &Dense, input: &Tensor) -> std::result::Result<(usize, bool), String> {
    if input.shape.len() == 2 && input.shape[1] == d.in_dim {
        Ok((input.shape[0], false))
    } else if input.len() == d.in_dim {
        Ok((1, input.shape != vec![d.in_dim]))
    } else {
        Err(format!(
            "dense({}, {}) cannot take input shape {:?}",
            d.in_dim, d.out_dim, input.shape
        ))
    }
}

fn layer_forward(layer: &Layer, input: &Tensor) -> std::result::Result<(Tensor, LayerCache), String> {
    match layer {
        Layer::Dense(d) => {
            let (rows, flattened) = dense_rows(d, input)?;
            let mut pre = vec![0.0; rows * d.out_dim];
            for r in 0..rows {
                let x = &input.data[r * d.in_dim..(r + 1) * d.in_dim];
                let out_row = &mut pre[r * d.out_dim..(r + 1) * d.out_dim];
                for (o, out) in out_row.iter_mut().enumerate() {
                    let wrow = &d.w[o * d.in_dim..(o + 1) * d.in_dim];
                    let mut acc = d.b[o];
                    for (wi, xi) in wrow.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *out = acc;
                }
            }
            let data: Vec<f64> = pre.iter().map(|&v| d.activation.apply(v)).collect();
            let out = if rows == 1 && input.shape.len() != 2 {
                Tensor::vector(data)
            } else {
                Tensor::matrix(rows, d.out_dim, data)
            };
            Ok((out, LayerCache::Dense { input: input.clone(), rows, flattened, pre }))
        }
        Layer::Conv2d(c) => {
            if input.shape.len() != 3 || input.shape[0] != c.in_ch {
                return Err(format!(
                    "conv2d expects [in_ch={}, h, w], got {:?}",
                    c.in_ch, input.shape
                ));
            }
            let (h, w) = (input.shape[1], input.shape[2]);
            if h + 2 * c.pad < c.kernel || w + 2 * c.pad < c.kernel {
                return Err(format!("conv2d kernel {} larger than padded input", c.kernel));
            }
            let (oh, ow) = c.out_hw(h, w);
            let mut pre = Tensor::zeros(vec![c.out_ch, oh, ow]);
            for oc in 0..c.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = c.b[oc];
                        for ic in 0..c.in_ch {
                            for ky in 0..c.kernel {
                                let iy = (oy * c.stride + ky) as isize - c.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..c.kernel {
                                    let ix = (ox * c.stride + kx) as isize - c.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = c.w[((oc * c.in_ch + ic) * c.kernel + ky)
                                        * c.kernel
                                        + kx];
                                    let xv =
                                        input.data[(ic * h + iy as usize) * w + ix as usize];
                                    acc += wv * xv;
                                }
                            }
                        }
                        pre.data[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            let data: Vec<f64> = pre.data.iter().map(|&v| c.activation.apply(v)).collect();
            let out = Tensor::new(vec![c.out_ch, oh, ow], data);
            Ok((out, LayerCache::Conv2d { input: input.clone(), pre }))
        }
        Layer::Attention(a) => {
            if input.shape.len() != 2 || input.shape[1] != a.d_model {
                return Err(format!(
                    "attention expects [tokens, d_model={}], got {:?}",
                    a.d_model, input.shape
                ));
            }
            let t = input.shape[0];
            let d = a.d_model;
            let affine = |w: &[f64], b: &[f64], out_dim: usize, x: &[f64], out: &mut [f64]| {
                for r in 0..t {
                    let xr = &x[r * d..(r + 1) * d];
                    for o in 0..out_dim {
                        let wrow = &w[o * d..(o + 1) * d];
                        let mut acc = b[o];
                        for (wi, xi) in wrow.iter().zip(xr) {
                            acc += wi * xi;
                        }
                        out[r * out_dim + o] = acc;
                    }
                }
            };
            let mut q = vec![0.0; t * d];
            let mut k = vec![0.0; t * d];
            let mut v = vec![0.0; t * d];
            affine(&a.wq, &a.bq, d, &input.data, &mut q);
            affine(&a.wk, &a.bk, d, &input.data, &mut k);
            affine(&a.wv, &a.bv, d, &input.data, &mut v);

            let scale = 1.0 / (d as f64).sqrt();
            let mut attn = vec![0.0; t * t];
            for i in 0..t {
                let qi = &q[i * d..(i + 1) * d];
                let row = &mut attn[i * t..(i + 1) * t];
                let mut max = f64::NEG_INFINITY;
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &k[j * d..(j + 1) * d];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    *slot = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max).exp();
                    sum += *slot;
                }
                for slot in row.iter_mut() {
                    *slot /= sum;
                }
            }

            let mut ctx = vec![0.0; t * d];
            for i in 0..t {
                for j in 0..t {
                    let aij = attn[i * t + j];
                    if aij != 0.0 {
                        let vj = &v[j * d..(j + 1) * d];
                        let ci = &mut ctx[i * d..(i + 1) * d];
                        for (c, vv) in ci.iter_mut().zip(vj) {
                            *c += aij * vv;
                        }
                    }
                }
            }

            let mut o = vec![0.0; t * d];
            affine(&a.wo, &a.bo, d, &ctx, &mut o);
            let mut h = vec![0.0; t * d];
            for i in 0..t * d {
                h[i] = input.data[i] + o[i];
            }

            let mut f_pre = vec![0.0; t * a.d_ff];
            for r in 0..t {
                let hr = &h[r * d..(r + 1) * d];
                for fo in 0..a.d_ff {
                    let wrow = &a.w1[fo * d..(fo + 1) * d];
                    let mut acc = a.b1[fo];
                    for (wi, xi) in wrow.iter().zip(hr) {
                        acc += wi * xi;
                    }
                    f_pre[r * a.d_ff + fo] = acc;
                }
            }
            let f: Vec<f64> = f_pre.iter().map(|&x| x.max(0.0)).collect();
            let mut out = vec![0.0; t * d];
            for r in 0..t {
                let fr = &f[r * a.d_ff..(r + 1) * a.d_ff];
                for o_i in 0..d {
                    let wrow = &a.w2[o_i * a.d_ff..(o_i + 1) * a.d_ff];
                    let mut acc = a.b2[o_i];
                    for (wi, xi) in wrow.iter().zip(fr) {
                        acc += wi * xi;
                    }
                    out[r * d + o_i] = h[r * d + o_i] + acc;
                }
            }
            let cache = AttentionCache { input: input.clone(), q, k, v, attn, ctx, h, f_pre, f };
            Ok((Tensor::matrix(t, d, out), LayerCache::Attention(Box::new(cache))))
        }
        Layer::PoolRows(kind) => {
            if input.shape.len() != 2 {
                return Err(format!("pool expects [rows, cols], got {:?}", input.shape));
            }
            let (n, d) = (input.shape[0], input.shape[1]);
            if n == 0 {
                return Err("pool over zero rows".into());
            }
            match kind {
                PoolKind::Max => {
                    let mut out = input.data[..d].to_vec();
                    let mut argmax = vec![0usize; d];
                    for r in 1..n {
                        for c in 0..d {
                            let v = input.data[r * d + c];
                            if v > out[c] {
                                out[c] = v;
                                argmax[c] = r;
                            }
                        }
                    }
                    Ok((
                        Tensor::vector(out),
                        LayerCache::PoolRows { in_shape: input.shape.clone(), argmax },
                    ))
                }
                PoolKind::Sum => {
                    let mut out = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            out[c] += input.data[r * d + c];
                        }
                    }
                    Ok((
                        Tensor::vector(out),
                        LayerCache::PoolRows { in_shape: input.shape.clone(), argmax: vec![] },
                    ))
                }
            }
        }
    }
}

/// Backpropagates one layer, accumulating parameter gradients into
/// `pgrads` (one buffer per parameter tensor) and returning the input
/// gradient.
fn layer_backward(
    layer: &Layer,
    cache: &LayerCache,
    grad_out: &Tensor,
    pgrads: &mut [Vec<f64>],
) -> std::result::Result<Tensor, String> {
    match (layer, cache) {
        (Layer::Dense(d), LayerCache::Dense { input, rows, flattened, pre }) => {
            if grad_out.len() != rows * d.out_dim {
                return Err(format!(
                    "dense backward: grad len {} vs {} outputs",
                    grad_out.len(),
                    rows * d.out_dim
                ));
            }
            let (dw, db) = match pgrads {
                [w, b] => (w, b),
                _ => return Err("dense gradient buffers".into()),
            };
            let mut din = vec![0.0; input.len()];
            for r in 0..*rows {
                let x = &input.data[r * d.in_dim..(r + 1) * d.in_dim];
                let dx = &mut din[r * d.in_dim..(r + 1) * d.in_dim];
                for o in 0..d.out_dim {
                    let g = grad_out.data[r * d.out_dim + o]
                        * d.activation.derivative(pre[r * d.out_dim + o]);
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    let wrow = &d.w[o * d.in_dim..(o + 1) * d.in_dim];
                    let dwrow = &mut dw[o * d.in_dim..(o + 1) * d.in_dim];
                    for i in 0..d.in_dim {
                        dwrow[i] += g * x[i];
                        dx[i] += g * wrow[i];
                    }
                }
            }
            let _ = flattened;
            Ok(Tensor::new(input.shape.clone(), din))
        }
        (Layer::Conv2d(c), LayerCache::Conv2d { input, pre }) => {
            let (h, w) = (input.shape[1], input.shape[2]);
            let (oh, ow) = c.out_hw(h, w);
            if grad_out.len() != c.out_ch * oh * ow {
                return Err("conv2d backward: grad shape mismatch".into());
            }
            let (dw, db) = match pgrads {
                [w, b] => (w, b),
                _ => return Err("conv2d gradient buffers".into()),
            };
            let mut din = vec![0.0; input.len()];
            for oc in 0..c.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = (oc * oh + oy) * ow + ox;
                        let g = grad_out.data[idx] * c.activation.derivative(pre.data[idx]);
                        if g == 0.0 {
                            continue;
                        }
                        db[oc] += g;
                        for ic in 0..c.in_ch {
                            for ky in 0..c.kernel {
                                let iy = (oy * c.stride + ky) as isize - c.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..c.kernel {
                                    let ix = (ox * c.stride + kx) as isize - c.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let widx =
                                        ((oc * c.in_ch + ic) * c.kernel + ky) * c.kernel + kx;
                                    let xidx = (ic * h + iy as usize) * w + ix as usize;
                                    dw[widx] += g * input.data[xidx];
                                    din[xidx] += g * c.w[widx];
                                }
                            }
                        }
                    }
                }
            }
            Ok(Tensor::new(input.shape.clone(), din))
        }
        (Layer::Attention(a), LayerCache::Attention(cache)) => {
            let t = cache.input.shape[0];
            let d = a.d_model;
            if grad_out.len() != t * d {
                return Err("attention backward: grad shape mismatch".into());
            }
            let [dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo, dw1, db1, dw2, db2] = pgrads else {
                return Err("attention gradient buffers".into());
            };
            let mut dx = vec![0.0; t * d];

            // out = h + W2 relu(W1 h + b1) + b2
            let mut dh = grad_out.data.clone();
            let mut df = vec![0.0; t * a.d_ff];
            for r in 0..t {
                let g = &grad_out.data[r * d..(r + 1) * d];
                let fr = &cache.f[r * a.d_ff..(r + 1) * a.d_ff];
                for o in 0..d {
                    db2[o] += g[o];
                    let wrow = &a.w2[o * a.d_ff..(o + 1) * a.d_ff];
                    let dwrow = &mut dw2[o * a.d_ff..(o + 1) * a.d_ff];
                    for i in 0..a.d_ff {
                        dwrow[i] += g[o] * fr[i];
                        df[r * a.d_ff + i] += g[o] * wrow[i];
                    }
                }
            }
            for r in 0..t {
                let hr = &cache.h[r * d..(r + 1) * d];
                for fo in 0..a.d_ff {
                    let idx = r * a.d_ff + fo;
                    let g = if cache.f_pre[idx] > 0.0 { df[idx] } else { 0.0 };
                    if g == 0.0 {
                        continue;
                    }
                    db1[fo] += g;
                    let wrow = &a.w1[fo * d..(fo + 1) * d];
                    let dwrow = &mut dw1[fo * d..(fo + 1) * d];
                    for i in 0..d {
                        dwrow[i] += g * hr[i];
                        dh[r * d + i] += g * wrow[i];
                    }
                }
            }

            // h = x + Wo ctx + bo
            let mut dctx = vec![0.0; t * d];
            for r in 0..t {
                let g = &dh[r * d..(r + 1) * d];
                let cr = &cache.ctx[r * d..(r + 1) * d];
                for o in 0..d {
                    dx[r * d + o] += g[o];
                    dbo[o] += g[o];
                    let wrow = &a.wo[o * d..(o + 1) * d];
                    let dwrow = &mut dwo[o * d..(o + 1) * d];
                    for i in 0..d {
                        dwrow[i] += g[o] * cr[i];
                        dctx[r * d + i] += g[o] * wrow[i];
                    }
                }
            }

            // ctx = attn * v
            let mut dattn = vec![0.0; t * t];
            let mut dv = vec![0.0; t * d];
            for i in 0..t {
                let dci = &dctx[i * d..(i + 1) * d];
                for j in 0..t {
                    let aij = cache.attn[i * t + j];
                    let vj = &cache.v[j * d..(j + 1) * d];
                    let mut acc = 0.0;
                    for (g, vv) in dci.iter().zip(vj) {
                        acc += g * vv;
                    }
                    dattn[i * t + j] = acc;
                    let dvj = &mut dv[j * d..(j + 1) * d];
                    for (dvv, g) in dvj.iter_mut().zip(dci) {
                        *dvv += aij * g;
                    }
                }
            }

            // softmax rows
            let scale = 1.0 / (d as f64).sqrt();
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            for i in 0..t {
                let arow = &cache.attn[i * t..(i + 1) * t];
                let grow = &dattn[i * t..(i + 1) * t];
                let dot: f64 = arow.iter().zip(grow).map(|(a, g)| a * g).sum();
                for j in 0..t {
                    let ds = arow[j] * (grow[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j * d..(j + 1) * d];
                    let qi = &cache.q[i * d..(i + 1) * d];
                    let dqi = &mut dq[i * d..(i + 1) * d];
                    for (dqv, kv) in dqi.iter_mut().zip(kj) {
                        *dqv += ds * kv;
                    }
                    let dkj = &mut dk[j * d..(j + 1) * d];
                    for (dkv, qv) in dkj.iter_mut().zip(qi) {
                        *dkv += ds * qv;
                    }
                }
            }

            // q/k/v projections
            let backproj = |dy: &[f64],
                                w: &[f64],
                                dw: &mut [f64],
                                db: &mut [f64],
                                dx: &mut [f64]| {
                for r in 0..t {
                    let xr = &cache.input.data[r * d..(r + 1) * d];
                    let gr = &dy[r * d..(r + 1) * d];
                    for o in 0..d {
                        let g = gr[o];
                        if g == 0.0 {
                            continue;
                        }
                        db[o] += g;
                        let wrow = &w[o * d..(o + 1) * d];
                        let dwrow = &mut dw[o * d..(o + 1) * d];
                        for i in 0..d {
                            dwrow[i] += g * xr[i];
                            dx[r * d + i] += g * wrow[i];
                        }
                    }
                }
            };
            backproj(&dq, &a.wq, dwq, dbq, &mut dx);
            backproj(&dk, &a.wk, dwk, dbk, &mut dx);
            backproj(&dv, &a.wv, dwv, dbv, &mut dx);

            Ok(Tensor::matrix(t, d, dx))
        }
        (Layer::PoolRows(kind), LayerCache::PoolRows { in_shape, argmax }) => {
            let (n, d) = (in_shape[0], in_shape[1]);
            if grad_out.len() != d {
                return Err("pool backward: grad shape mismatch".into());
            }
            let mut din = vec![0.0; n * d];
            match kind {
                PoolKind::Max => {
                    for c in 0..d {
                        din[argmax[c] * d + c] = grad_out.data[c];
                    }
                }
                PoolKind::Sum => {
                    for r in 0..n {
                        for c in 0..d {
                            din[r * d + c] = grad_out.data[c];
                        }
                    }
                }
            }
            Ok(Tensor::new(in_shape.clone(), din))
        }
        _ => Err("cache does not match layer".into()),
    }
}

// --- Initialization builders (He-style fan-in scaling, seeded) ---

fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| crate::gridsim::normal(rng) * std).collect()
}

fn fan_in_std(fan_in: usize, activation: Activation) -> f64 {
    let gain = match activation {
        Activation::Relu => 2.0,
        Activation::Linear => 1.0,
    };
    (gain / fan_in.max(1) as f64).sqrt()
}

pub fn dense(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Layer {
    Layer::Dense(Dense {
        in_dim,
        out_dim,
        activation,
        w: normal_vec(rng, in_dim * out_dim, fan_in_std(in_dim, activation)),
        b: vec![0.0; out_dim],
    })
}

/// Zero-initialized dense layer; used as the last layer of residual heads
/// so the network starts as the identity map.
pub fn dense_zero(in_dim: usize, out_dim: usize, activation: Activation) -> Layer {
    Layer::Dense(Dense {
        in_dim,
        out_dim,
        activation,
        w: vec![0.0; in_dim * out_dim],
        b: vec![0.0; out_dim],
    })
}

pub fn conv2d(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    activation: Activation,
    rng: &mut impl Rng,
) -> Layer {
    let fan_in = in_ch * kernel * kernel;
    Layer::Conv2d(Conv2d {
        in_ch,
        out_ch,
        kernel,
        stride,
        pad,
        activation,
        w: normal_vec(rng, out_ch * fan_in, fan_in_std(fan_in, activation)),
        b: vec![0.0; out_ch],
    })
}

pub fn attention(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Layer {
    let lin = fan_in_std(d_model, Activation::Linear);
    Layer::Attention(Attention {
        d_model,
        d_ff,
        wq: normal_vec(rng, d_model * d_model, lin),
        bq: vec![0.0; d_model],
        wk: normal_vec(rng, d_model * d_model, lin),
        bk: vec![0.0; d_model],
        wv: normal_vec(rng, d_model * d_model, lin),
        bv: vec![0.0; d_model],
        wo: normal_vec(rng, d_model * d_model, lin),
        bo: vec![0.0; d_model],
        w1: normal_vec(rng, d_ff * d_model, fan_in_std(d_model, Activation::Relu)),
        b1: vec![0.0; d_ff],
        w2: normal_vec(rng, d_model * d_ff, fan_in_std(d_ff, Activation::Linear)),
        b2: vec![0.0; d_model],
    })
}

//! Layer kinds used by the classifiers, with forward and backward passes.
//!
//! Activations are laid out channels-last: `[batch, height, width, channels]`
//! for spatial layers and `[batch, features]` for dense layers. Forward passes
//! take `&self` and return a [`Cache`]; running statistics of batch
//! normalization are committed separately through [`Layer::commit`], so an
//! eval-mode forward never mutates the layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Prng, Real, Result, Tensor};

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

impl Padding {
    fn amount(self) -> usize {
        match self {
            Padding::Same => 1,
            Padding::Valid => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture-level description of one layer. Convolutions are always
/// 3×3 with stride 1 and pooling is always 2×2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { filters: usize, padding: Padding },
    BatchNorm,
    Relu,
    Sigmoid,
    Dropout { rate: f64 },
    MaxPool2,
    Dense { units: usize },
    Flatten,
}

impl LayerSpec {
    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv2d {
            filters,
            padding: Padding::Same,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(Error::InvalidConfig(
                format!("dropout rate must lie in [0, 1), got {rate}"),
            )),
            LayerSpec::Conv2d { filters: 0, .. } | LayerSpec::Dense { units: 0 } => {
                Err(Error::InvalidConfig("layer width must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Output shape (without the batch axis) for an input of `input` shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d { filters, padding } => {
                let [h, w, _] = spatial(input)?;
                let p = padding.amount();
                if h + 2 * p < 3 || w + 2 * p < 3 {
                    return Err(Error::InvalidShape(input.to_vec()));
                }
                Ok(vec![h + 2 * p - 2, w + 2 * p - 2, filters])
            }
            LayerSpec::MaxPool2 => {
                let [h, w, c] = spatial(input)?;
                if h < 2 || w < 2 {
                    return Err(Error::InvalidShape(input.to_vec()));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::InvalidShape(input.to_vec()));
                }
                Ok(vec![units])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            _ => Ok(input.to_vec()),
        }
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::InvalidShape(shape.to_vec())),
    }
}

fn dims4<T: Real>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::InvalidShape(x.shape().to_vec())),
    }
}

fn dims2<T: Real>(x: &Tensor<T>) -> Result<[usize; 2]> {
    match *x.shape() {
        [n, d] => Ok([n, d]),
        _ => Err(Error::InvalidShape(x.shape().to_vec())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// False until the first train-mode batch has been committed.
    pub initialized: bool,
}

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d {
        /// `[3, 3, in_channels, filters]`
        weight: Tensor<T>,
        bias: Tensor<T>,
        padding: Padding,
    },
    BatchNorm(BatchNorm<T>),
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    MaxPool2,
    Dense {
        /// `[inputs, units]`
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Flatten,
}

/// State captured by a forward pass and consumed by the matching backward.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    /// Eval-mode forward; nothing to differentiate.
    Eval,
    Input(Tensor<T>),
    Output(Tensor<T>),
    Mask(Vec<T>),
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Norm {
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Shape(Vec<usize>),
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Prng) -> Tensor<T> {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| T::c(rng.uniform_range(-limit, limit)))
}

impl<T: Real> Layer<T> {
    /// Instantiates `spec` for inputs of shape `input` (without batch axis)
    /// using Glorot-uniform weights, zero biases and unit/zero batchnorm
    /// scale/shift.
    pub fn build(spec: &LayerSpec, input: &[usize], rng: &mut Prng) -> Result<(Self, Vec<usize>)> {
        spec.validate()?;
        let out = spec.output_shape(input)?;
        let layer = match *spec {
            LayerSpec::Conv2d { filters, padding } => {
                let cin = input[2];
                Layer::Conv2d {
                    weight: glorot(&[3, 3, cin, filters], 9 * cin, 9 * filters, rng),
                    bias: Tensor::zeros(&[filters]),
                    padding,
                }
            }
            LayerSpec::BatchNorm => {
                let c = *input.last().ok_or_else(|| Error::InvalidShape(input.to_vec()))?;
                Layer::BatchNorm(BatchNorm {
                    gamma: Tensor::full(&[c], T::one()),
                    beta: Tensor::zeros(&[c]),
                    running_mean: Tensor::zeros(&[c]),
                    running_var: Tensor::full(&[c], T::one()),
                    initialized: false,
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::Dense { units } => Layer::Dense {
                weight: glorot(&[input[0], units], input[0], units, rng),
                bias: Tensor::zeros(&[units]),
            },
            LayerSpec::Flatten => Layer::Flatten,
        };
        Ok((layer, out))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Prng) -> Result<(Tensor<T>, Cache<T>)> {
        let train = mode == Mode::Train;
        let keep = |c: Cache<T>| if train { c } else { Cache::Eval };
        match self {
            Layer::Conv2d {
                weight,
                bias,
                padding,
            } => {
                let y = conv_forward(x, weight, bias, padding.amount())?;
                Ok((y, keep(Cache::Input(x.clone()))))
            }
            Layer::Dense { weight, bias } => {
                let y = dense_forward(x, weight, bias)?;
                Ok((y, keep(Cache::Input(x.clone()))))
            }
            Layer::Relu => {
                let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
                Ok((y, keep(Cache::Input(x.clone()))))
            }
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                let c = keep(Cache::Output(y.clone()));
                Ok((y, c))
            }
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
                }
                if !train {
                    return Ok((x.clone(), Cache::Eval));
                }
                let scale = T::c(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..x.len())
                    .map(|_| if rng.uniform() >= *rate { scale } else { T::zero() })
                    .collect();
                let mut y = x.clone();
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= *m;
                }
                Ok((y, Cache::Mask(mask)))
            }
            Layer::MaxPool2 => {
                let (y, argmax) = maxpool_forward(x)?;
                Ok((
                    y,
                    keep(Cache::Pool {
                        argmax,
                        input_shape: x.shape().to_vec(),
                    }),
                ))
            }
            Layer::Flatten => {
                let n = x.batch();
                let y = x.clone().reshape(&[n, x.item_len()])?;
                Ok((y, keep(Cache::Shape(x.shape().to_vec()))))
            }
            Layer::BatchNorm(bn) => bn.forward(x, train),
        }
    }

    /// Returns the input gradient and the parameter gradients in
    /// [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        match (self, cache) {
            (_, Cache::Eval) => Err(Error::MissingCache),
            (Layer::Conv2d { weight, padding, .. }, Cache::Input(x)) => {
                let (dx, dw, db) = conv_backward(x, weight, grad, padding.amount(), true)?;
                Ok((dx.expect("requested"), vec![dw, db]))
            }
            (Layer::Dense { weight, .. }, Cache::Input(x)) => {
                let (dx, dw, db) = dense_backward(x, weight, grad)?;
                Ok((dx, vec![dw, db]))
            }
            (Layer::Relu, Cache::Input(x)) => {
                grad.expect_shape(x.shape())?;
                let mut dx = grad.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Sigmoid, Cache::Output(y)) => {
                grad.expect_shape(y.shape())?;
                let mut dx = grad.clone();
                for (g, &p) in dx.data_mut().iter_mut().zip(y.data()) {
                    *g *= p * (T::one() - p);
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Dropout { .. }, Cache::Mask(mask)) => {
                if mask.len() != grad.len() {
                    return Err(Error::ShapeMismatch {
                        expected: vec![mask.len()],
                        got: grad.shape().to_vec(),
                    });
                }
                let mut dx = grad.clone();
                for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *g *= m;
                }
                Ok((dx, Vec::new()))
            }
            (Layer::MaxPool2, Cache::Pool { argmax, input_shape }) => {
                if argmax.len() != grad.len() {
                    return Err(Error::ShapeMismatch {
                        expected: vec![argmax.len()],
                        got: grad.shape().to_vec(),
                    });
                }
                let mut dx = Tensor::zeros(input_shape);
                let d = dx.data_mut();
                for (&src, &g) in argmax.iter().zip(grad.data()) {
                    d[src] += g;
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Flatten, Cache::Shape(shape)) => Ok((grad.clone().reshape(shape)?, Vec::new())),
            (Layer::BatchNorm(bn), Cache::Norm { xhat, inv_std, .. }) => {
                let (dx, dg, db) = bn.backward(xhat, inv_std, grad)?;
                Ok((dx, vec![dg, db]))
            }
            _ => Err(Error::MissingCache),
        }
    }

    /// Parameter gradients only, skipping the input gradient where that
    /// saves work.
    pub fn param_backward(&self, cache: &Cache<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        match (self, cache) {
            (Layer::Conv2d { weight, padding, .. }, Cache::Input(x)) => {
                let (_, dw, db) = conv_backward(x, weight, grad, padding.amount(), false)?;
                Ok(vec![dw, db])
            }
            _ => Ok(self.backward(cache, grad)?.1),
        }
    }

    /// Folds batch statistics from a train-mode cache into the running
    /// statistics. No-op for other layers.
    pub fn commit(&mut self, cache: &Cache<T>) {
        if let (Layer::BatchNorm(bn), Cache::Norm { mean, var, .. }) = (self, cache) {
            let m = T::c(BN_MOMENTUM);
            let first = !bn.initialized;
            for (r, &b) in bn.running_mean.data_mut().iter_mut().zip(mean) {
                *r = if first { b } else { m * *r + (T::one() - m) * b };
            }
            for (r, &b) in bn.running_var.data_mut().iter_mut().zip(var) {
                *r = if first { b } else { m * *r + (T::one() - m) * b };
            }
            bn.initialized = true;
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Dropout { .. } => "dropout",
            Layer::MaxPool2 => "maxpool2x2",
            Layer::Dense { .. } => "dense",
            Layer::Flatten => "flatten",
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> BatchNorm<T> {
    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn forward(&self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, Cache<T>)> {
        let c = self.channels();
        if x.ndim() < 2 || *x.shape().last().unwrap() != c {
            return Err(Error::ShapeMismatch {
                expected: vec![c],
                got: x.shape().to_vec(),
            });
        }
        let rows = x.len() / c;
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let inv_rows = T::one() / T::c(rows as f64);
            mean.iter_mut().for_each(|m| *m *= inv_rows);
            for row in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_rows);
            (mean, var)
        } else {
            if !self.initialized {
                return Err(Error::UninitializedStats);
            }
            (self.running_mean.data().to_vec(), self.running_var.data().to_vec())
        };
        let eps = T::c(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for row in xhat.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = xhat.clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = *v * g + b;
            }
        }
        let cache = if train {
            Cache::Norm {
                xhat,
                inv_std,
                mean,
                var,
            }
        } else {
            Cache::Eval
        };
        Ok((y, cache))
    }

    fn backward(&self, xhat: &Tensor<T>, inv_std: &[T], grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        grad.expect_shape(xhat.shape())?;
        let c = self.channels();
        let rows = T::c((xhat.len() / c) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (g, xh) in grad.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for k in 0..c {
                dgamma[k] += g[k] * xh[k];
                dbeta[k] += g[k];
            }
        }
        let mut dx = grad.clone();
        for (d, xh) in dx.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
            for k in 0..c {
                let scale = self.gamma.data()[k] * inv_std[k] / rows;
                d[k] = scale * (rows * d[k] - dbeta[k] - xh[k] * dgamma[k]);
            }
        }
        Ok((dx, Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?))
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Geometry of a 3×3 convolution with symmetric zero padding.
struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    pad: usize,
}

impl ConvGeom {
    /// Copies the 3×3×c window feeding output `(oy, ox)` of image `bi` into
    /// `patch` (tap-major, zero outside the image). Returns false when the
    /// window is all zeros.
    fn gather<T: Real>(&self, xd: &[T], bi: usize, oy: usize, ox: usize, patch: &mut [T]) -> bool {
        let c = self.c;
        if let Some(at) = self.interior(bi, oy, ox) {
            for ky in 0..3 {
                let src = &xd[at + ky * self.w * c..][..3 * c];
                patch[ky * 3 * c..][..3 * c].copy_from_slice(src);
            }
        } else {
            for ky in 0..3 {
                for kx in 0..3 {
                    let dst = &mut patch[(ky * 3 + kx) * c..][..c];
                    match self.source(bi, oy + ky, ox + kx) {
                        Some(at) => dst.copy_from_slice(&xd[at..at + c]),
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
        patch.iter().any(|&v| v != T::zero())
    }

    /// Adds `dpatch` back onto the window of output `(oy, ox)`.
    fn scatter<T: Real>(&self, dx: &mut [T], bi: usize, oy: usize, ox: usize, dpatch: &[T]) {
        let c = self.c;
        if let Some(at) = self.interior(bi, oy, ox) {
            for ky in 0..3 {
                let dst = &mut dx[at + ky * self.w * c..][..3 * c];
                for (d, &v) in dst.iter_mut().zip(&dpatch[ky * 3 * c..][..3 * c]) {
                    *d += v;
                }
            }
            return;
        }
        for ky in 0..3 {
            for kx in 0..3 {
                if let Some(at) = self.source(bi, oy + ky, ox + kx) {
                    for (d, &v) in dx[at..at + c].iter_mut().zip(&dpatch[(ky * 3 + kx) * c..][..c]) {
                        *d += v;
                    }
                }
            }
        }
    }

    /// Offset of the window's top-left input pixel when the whole window
    /// lies inside the image.
    fn interior(&self, bi: usize, oy: usize, ox: usize) -> Option<usize> {
        let (iy, ix) = (oy.checked_sub(self.pad)?, ox.checked_sub(self.pad)?);
        (iy + 3 <= self.h && ix + 3 <= self.w).then(|| ((bi * self.h + iy) * self.w + ix) * self.c)
    }

    /// Offset of the input pixel under padded coordinates `(py, px)`.
    fn source(&self, bi: usize, py: usize, px: usize) -> Option<usize> {
        let iy = py.checked_sub(self.pad).filter(|&v| v < self.h)?;
        let ix = px.checked_sub(self.pad).filter(|&v| v < self.w)?;
        Some(((bi * self.h + iy) * self.w + ix) * self.c)
    }
}

/// `[3, 3, c, f]` to `[f, 9c]`, and back when `inverse`.
fn transpose_kernel<T: Real>(w: &[T], k: usize, f: usize, inverse: bool) -> Vec<T> {
    let mut out = vec![T::zero(); k * f];
    for i in 0..k {
        for j in 0..f {
            if inverse {
                out[i * f + j] = w[j * k + i];
            } else {
                out[j * k + i] = w[i * f + j];
            }
        }
    }
    out
}

pub(crate) fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let [n, h, wd, c] = dims4(x)?;
    let f = w.shape()[3];
    w.expect_shape(&[3, 3, c, f])?;
    if h + 2 * pad < 3 || wd + 2 * pad < 3 {
        return Err(Error::InvalidShape(x.shape().to_vec()));
    }
    let (oh, ow) = (h + 2 * pad - 2, wd + 2 * pad - 2);
    let geom = ConvGeom { h, w: wd, c, pad };
    let k = 9 * c;
    let wt = transpose_kernel(w.data(), k, f, false);
    let mut patch = vec![T::zero(); k];
    let mut out = vec![T::zero(); n * oh * ow * f];
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out[((bi * oh + oy) * ow + ox) * f..][..f];
                o.copy_from_slice(b.data());
                if !geom.gather(x.data(), bi, oy, ox, &mut patch) {
                    continue;
                }
                for (acc, row) in o.iter_mut().zip(wt.chunks_exact(k)) {
                    *acc += dot(&patch, row);
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, f], out)
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
#[allow(clippy::type_complexity)]
fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    pad: usize,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let [n, h, wd, c] = dims4(x)?;
    let f = w.shape()[3];
    let (oh, ow) = (h + 2 * pad - 2, wd + 2 * pad - 2);
    grad.expect_shape(&[n, oh, ow, f])?;
    let geom = ConvGeom { h, w: wd, c, pad };
    let k = 9 * c;
    let wt = transpose_kernel(w.data(), k, f, false);
    let gd = grad.data();
    let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut dwt = vec![T::zero(); k * f];
    let mut db = vec![T::zero(); f];
    let mut patch = vec![T::zero(); k];
    let mut dpatch = vec![T::zero(); k];
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = &gd[((bi * oh + oy) * ow + ox) * f..][..f];
                if g.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                for (acc, &gv) in db.iter_mut().zip(g) {
                    *acc += gv;
                }
                if geom.gather(x.data(), bi, oy, ox, &mut patch) {
                    for (&gv, row) in g.iter().zip(dwt.chunks_exact_mut(k)) {
                        if gv != T::zero() {
                            axpy(gv, &patch, row);
                        }
                    }
                }
                if need_dx {
                    dpatch.fill(T::zero());
                    for (&gv, row) in g.iter().zip(wt.chunks_exact(k)) {
                        if gv != T::zero() {
                            axpy(gv, row, &mut dpatch);
                        }
                    }
                    geom.scatter(&mut dx, bi, oy, ox, &dpatch);
                }
            }
        }
    }
    let dx = if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None };
    Ok((
        dx,
        Tensor::new(w.shape().to_vec(), transpose_kernel(&dwt, k, f, true))?,
        Tensor::new(vec![f], db)?,
    ))
}

fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, din] = dims2(x)?;
    let dout = b.len();
    w.expect_shape(&[din, dout])?;
    let wd = w.data();
    let mut out = vec![T::zero(); n * dout];
    for (row, o) in x.data().chunks_exact(din).zip(out.chunks_exact_mut(dout)) {
        o.copy_from_slice(b.data());
        for (i, &v) in row.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            for (acc, &wv) in o.iter_mut().zip(&wd[i * dout..(i + 1) * dout]) {
                *acc += v * wv;
            }
        }
    }
    Tensor::new(vec![n, dout], out)
}

fn dense_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, din] = dims2(x)?;
    let dout = w.shape()[1];
    grad.expect_shape(&[n, dout])?;
    let wd = w.data();
    let mut dx = vec![T::zero(); n * din];
    let mut dw = vec![T::zero(); din * dout];
    let mut db = vec![T::zero(); dout];
    for ((row, g), drow) in x.data().chunks_exact(din).zip(grad.data().chunks_exact(dout)).zip(dx.chunks_exact_mut(din)) {
        for (acc, &gv) in db.iter_mut().zip(g) {
            *acc += gv;
        }
        for i in 0..din {
            let wr = &wd[i * dout..(i + 1) * dout];
            let mut s = T::zero();
            for (&wv, &gv) in wr.iter().zip(g) {
                s += wv * gv;
            }
            drow[i] = s;
            let v = row[i];
            if v != T::zero() {
                for (acc, &gv) in dw[i * dout..(i + 1) * dout].iter_mut().zip(g) {
                    *acc += v * gv;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n, din], dx)?,
        Tensor::new(vec![din, dout], dw)?,
        Tensor::new(vec![dout], db)?,
    ))
}

fn maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, h, w, c] = dims4(x)?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape(x.shape().to_vec()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = ((bi * h + 2 * oy) * w + 2 * ox) * c + ci;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ci;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, argmax))
}

/// Concatenates `[batch, d_i]` tensors along the feature axis.
pub fn concat_features<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("concat"))?;
    let n = first.batch();
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, d] = dims2(p)?;
        if pn != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n, d],
                got: p.shape().to_vec(),
            });
        }
        widths.push(d);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::new(vec![n, total], data)
}

/// Backward of [`concat_features`]: splits the gradient into per-part blocks.
pub fn split_features<T: Real>(grad: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, total] = dims2(grad)?;
    if widths.iter().sum::<usize>() != total {
        return Err(Error::ShapeMismatch {
            expected: widths.to_vec(),
            got: grad.shape().to_vec(),
        });
    }
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(n * w)).collect();
    for row in grad.data().chunks_exact(total) {
        let mut off = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            p.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(vec![n, w], d))
        .collect()
}

/// A plain chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn build(specs: &[LayerSpec], input: &[usize], rng: &mut Prng) -> Result<(Self, Vec<usize>)> {
        let mut shape = input.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (layer, out) = Layer::build(spec, &shape, rng)?;
            layers.push(layer);
            shape = out;
        }
        Ok((Self { layers }, shape))
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Prng) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur, mode, rng)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Eval-mode forward. Pure: never touches layer state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = Prng::new(0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.0)
    }

    /// Returns the input gradient and the parameter gradients flattened in
    /// [`Sequential::params`] order.
    pub fn backward(&self, caches: &[Cache<T>], grad: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let (g, params) = self.backward_impl(caches, grad, true)?;
        Ok((g.expect("requested"), params))
    }

    /// Parameter gradients without the input gradient.
    pub fn param_backward(&self, caches: &[Cache<T>], grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.backward_impl(caches, grad, false)?.1)
    }

    fn backward_impl(&self, caches: &[Cache<T>], grad: &Tensor<T>, input_grad: bool) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            if i == 0 && !input_grad {
                per_layer.push(layer.param_backward(cache, &g)?);
                per_layer.reverse();
                return Ok((None, per_layer.into_iter().flatten().collect()));
            }
            let (dx, pg) = layer.backward(cache, &g)?;
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        Ok((Some(g), per_layer.into_iter().flatten().collect()))
    }

    pub fn commit(&mut self, caches: &[Cache<T>]) {
        for (layer, cache) in self.layers.iter_mut().zip(caches) {
            layer.commit(cache);
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn conv_layer(weight: Tensor<f64>) -> Layer<f64> {
        let f = weight.shape()[3];
        Layer::Conv2d {
            weight,
            bias: Tensor::zeros(&[f]),
            padding: Padding::Same,
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = Prng::new(1);
        let x = Tensor::<f64>::from_fn(&[2, 5, 4, 1], |_| rng.normal());
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        w.data_mut()[4] = 1.0;
        let (y, _) = conv_layer(w).forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_hand_convolution() {
        // Hand-computed zero-padded 3x3 box sums of [[1,2,3],[4,5,6],[7,8,9]].
        let expected = [12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0];
        let x = Tensor::<f64>::new(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::full(&[3, 3, 1, 1], 1.0);
        let (y, _) = conv_layer(w).forward(&x, Mode::Eval, &mut Prng::new(0)).unwrap();
        assert_eq!(y.data(), &expected);
        assert_eq!(y.data()[4], 45.0);
        assert_eq!(y.data()[0], 12.0);
    }

    #[test]
    fn valid_padding_shrinks() {
        let mut rng = Prng::new(2);
        let (layer, out) = Layer::<f64>::build(
            &LayerSpec::Conv2d {
                filters: 3,
                padding: Padding::Valid,
            },
            &[6, 5, 2],
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, vec![4, 3, 3]);
        let x = Tensor::full(&[1, 6, 5, 2], 1.0);
        let (y, _) = layer.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.shape(), &[1, 4, 3, 3]);
    }

    #[test]
    fn activation_fixed_points() {
        let mut rng = Prng::new(0);
        let x = Tensor::<f64>::new(vec![1, 2], vec![0.0, -2.0]).unwrap();
        let (s, _) = Layer::Sigmoid.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(s.data()[0], 0.5);
        let (r, cache) = Layer::Relu.forward(&x, Mode::Train, &mut rng).unwrap();
        assert_eq!(r.data()[1], 0.0);
        let g = Tensor::full(&[1, 2], 1.0);
        let (dx, _) = Layer::Relu.backward(&cache, &g).unwrap();
        assert_eq!(dx.data()[1], 0.0);
    }

    #[test]
    fn identity_dense_passes_gradient_through() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let layer = Layer::Dense {
            weight: w,
            bias: Tensor::zeros(&[3]),
        };
        let x = Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&x, Mode::Train, &mut Prng::new(0)).unwrap();
        assert_eq!(y, x);
        let g = Tensor::new(vec![1, 3], vec![1.5, -0.5, 0.25]).unwrap();
        let (dx, _) = layer.backward(&cache, &g).unwrap();
        assert_eq!(dx, g);
    }

    #[test]
    fn constant_input_batchnorm_is_zero() {
        let mut rng = Prng::new(0);
        let (bn, _) = Layer::<f64>::build(&LayerSpec::BatchNorm, &[3, 3, 2], &mut rng).unwrap();
        let x = Tensor::full(&[4, 3, 3, 2], 7.5);
        let (y, _) = bn.forward(&x, Mode::Train, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_eval_requires_running_stats() {
        let mut rng = Prng::new(0);
        let (mut bn, _) = Layer::<f64>::build(&LayerSpec::BatchNorm, &[2], &mut rng).unwrap();
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        assert_eq!(bn.forward(&x, Mode::Eval, &mut rng).unwrap_err(), Error::UninitializedStats);
        let (_, cache) = bn.forward(&x, Mode::Train, &mut rng).unwrap();
        bn.commit(&cache);
        let Layer::BatchNorm(state) = &bn else { unreachable!() };
        assert_relative_eq!(state.running_mean.data()[0], 3.0);
        assert_relative_eq!(state.running_var.data()[1], 26.0 / 3.0 * 1.0, epsilon = 1e-12);
        // Second batch follows the momentum rule.
        let x2 = Tensor::full(&[3, 2], 1.0);
        let (_, cache) = bn.forward(&x2, Mode::Train, &mut rng).unwrap();
        bn.commit(&cache);
        let Layer::BatchNorm(state) = &bn else { unreachable!() };
        assert_relative_eq!(state.running_mean.data()[0], 0.99 * 3.0 + 0.01 * 1.0, epsilon = 1e-12);
        assert!(bn.forward(&x, Mode::Eval, &mut rng).is_ok());
    }

    #[test]
    fn dropout_rate_validation() {
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        let layer = Layer::<f64>::Dropout { rate: 1.0 };
        let x = Tensor::full(&[1, 4], 1.0);
        assert!(layer.forward(&x, Mode::Train, &mut Prng::new(0)).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let layer = Layer::<f64>::Dropout { rate: 0.5 };
        let x = Tensor::full(&[1, 10_000], 1.0);
        let (y, _) = layer.forward(&x, Mode::Train, &mut Prng::new(9)).unwrap();
        let ratio = y.sum() / x.sum();
        assert!((ratio - 1.0).abs() <= 0.02, "ratio {ratio}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let (e, c) = layer.forward(&x, Mode::Eval, &mut Prng::new(9)).unwrap();
        assert_eq!(e, x);
        assert!(matches!(c, Cache::Eval));
    }

    #[test]
    fn maxpool_floors_odd_extent() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 5, 1], |i| i as f64);
        let (y, cache) = Layer::MaxPool2.forward(&x, Mode::Train, &mut Prng::new(0)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[6.0, 8.0, 16.0, 18.0]);
        let (dx, _) = Layer::MaxPool2.backward(&cache, &Tensor::full(&[1, 2, 2, 1], 1.0)).unwrap();
        assert_eq!(dx.sum(), 4.0);
        assert_eq!(dx.data()[6], 1.0);
    }

    #[test]
    fn backward_without_train_forward_fails() {
        let x = Tensor::<f64>::full(&[1, 2], 1.0);
        let (_, cache) = Layer::Relu.forward(&x, Mode::Eval, &mut Prng::new(0)).unwrap();
        assert_eq!(Layer::Relu.backward(&cache, &x).unwrap_err(), Error::MissingCache);
        assert_eq!(Layer::Sigmoid.backward(&Cache::Input(x.clone()), &x).unwrap_err(), Error::MissingCache);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 1], |i| -(i as f64));
        let ab = concat_features(&[&a, &b]).unwrap();
        assert_eq!(ab.data(), &[0.0, 1.0, 2.0, -0.0, 3.0, 4.0, 5.0, -1.0]);
        let parts = split_features(&ab, &[3, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = Prng::new(0);
        let (dense, _) = Layer::<f64>::build(&LayerSpec::Dense { units: 2 }, &[3], &mut rng).unwrap();
        let x = Tensor::full(&[1, 4], 1.0);
        assert!(matches!(dense.forward(&x, Mode::Eval, &mut rng), Err(Error::ShapeMismatch { .. })));
        let (conv, _) = Layer::<f64>::build(&LayerSpec::conv(2), &[4, 4, 3], &mut rng).unwrap();
        let x = Tensor::full(&[1, 4, 4, 2], 1.0);
        assert!(conv.forward(&x, Mode::Eval, &mut rng).is_err());
    }
}

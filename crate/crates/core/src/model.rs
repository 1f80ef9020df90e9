//! The three pair-classifier architectures.
//!
//! Every variant is siamese: each input stream has one trunk whose
//! parameters are shared by the left and the right image. Sharing is
//! structural, the trunk runs once over the left and right batches stacked
//! along the batch axis, so gradients from both sides accumulate into the
//! same tensors.
//!
//! * `fullface_pair`: trunk `conv-relu-conv-relu-batchnorm-dropout`,
//!   combined branch outputs, head `dense(512)-relu-dropout(0.5)-dense(1)-sigmoid`.
//! * `landmark_single`: trunk `2 × (conv-batchnorm-relu-dropout)`, 2×2
//!   max-pool, head `dense(1)-sigmoid`.
//! * `landmark_combined`: three landmark trunks, one per masked region,
//!   concatenated before the sigmoid head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layers::{concat_features, split_features, BatchNorm, Cache, LayerSpec, Mode, Padding, Sequential};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Prng, Real, Result, Tensor};

/// Stream tag for weight initialization draws.
const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FullfacePair,
    LandmarkSingle,
    LandmarkCombined,
}

/// How the left and right branch outputs are merged before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Concat,
    AbsDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Feature map `[height, width, channels]`.
    pub input_shape: [usize; 3],
    pub conv_width: usize,
    pub block_dropout: f64,
    /// Width of the hidden dense layer (fullface only).
    pub head_width: usize,
    /// Dropout after the hidden dense layer (fullface only).
    pub head_dropout: f64,
    pub combine: Combine,
    pub padding: Padding,
    /// Region name masked into each stream; empty for the fullface model.
    pub landmarks: Vec<String>,
}

impl ModelConfig {
    pub fn fullface(input_shape: [usize; 3]) -> Self {
        Self {
            variant: Variant::FullfacePair,
            input_shape,
            conv_width: 32,
            block_dropout: 0.25,
            head_width: 512,
            head_dropout: 0.5,
            combine: Combine::Concat,
            padding: Padding::Same,
            landmarks: Vec::new(),
        }
    }

    pub fn landmark_single(input_shape: [usize; 3], landmark: &str) -> Self {
        Self {
            variant: Variant::LandmarkSingle,
            conv_width: 64,
            head_width: 0,
            head_dropout: 0.0,
            landmarks: vec![landmark.into()],
            ..Self::fullface(input_shape)
        }
    }

    pub fn landmark_combined(input_shape: [usize; 3], landmarks: [&str; 3]) -> Self {
        Self {
            variant: Variant::LandmarkCombined,
            landmarks: landmarks.iter().map(|&s| s.into()).collect(),
            ..Self::landmark_single(input_shape, landmarks[0])
        }
    }

    pub fn with_widths(mut self, conv_width: usize, head_width: usize) -> Self {
        self.conv_width = conv_width;
        if self.variant == Variant::FullfacePair {
            self.head_width = head_width;
        }
        self
    }

    pub fn streams(&self) -> usize {
        match self.variant {
            Variant::FullfacePair | Variant::LandmarkSingle => 1,
            Variant::LandmarkCombined => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_shape.contains(&0) || self.conv_width == 0 {
            return bad(format!("input shape {:?} and conv width must be positive", self.input_shape));
        }
        for rate in [self.block_dropout, self.head_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("dropout rate {rate} outside [0, 1)"));
            }
        }
        let expected = match self.variant {
            Variant::FullfacePair => {
                if self.head_width == 0 {
                    return bad("fullface head width must be positive".into());
                }
                0
            }
            Variant::LandmarkSingle => 1,
            Variant::LandmarkCombined => 3,
        };
        if self.landmarks.len() != expected {
            return bad(format!(
                "{:?} takes {expected} landmark streams, got {}",
                self.variant,
                self.landmarks.len()
            ));
        }
        Ok(())
    }

    pub fn trunk_specs(&self) -> Vec<LayerSpec> {
        let conv = LayerSpec::Conv2d {
            filters: self.conv_width,
            padding: self.padding,
        };
        let drop = LayerSpec::Dropout { rate: self.block_dropout };
        match self.variant {
            Variant::FullfacePair => vec![
                conv.clone(),
                LayerSpec::Relu,
                conv,
                LayerSpec::Relu,
                LayerSpec::BatchNorm,
                drop,
                LayerSpec::Flatten,
            ],
            Variant::LandmarkSingle | Variant::LandmarkCombined => {
                let module = [conv, LayerSpec::BatchNorm, LayerSpec::Relu, drop];
                let mut specs = module.to_vec();
                specs.extend(module);
                specs.push(LayerSpec::MaxPool2);
                specs.push(LayerSpec::Flatten);
                specs
            }
        }
    }

    pub fn head_specs(&self) -> Vec<LayerSpec> {
        match self.variant {
            Variant::FullfacePair => vec![
                LayerSpec::Dense { units: self.head_width },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: self.head_dropout },
                LayerSpec::Dense { units: 1 },
                LayerSpec::Sigmoid,
            ],
            _ => vec![LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid],
        }
    }
}

/// One batch of pairs: per stream, the left and right inputs `[n, h, w, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch<T> {
    pub left: Vec<Tensor<T>>,
    pub right: Vec<Tensor<T>>,
}

impl<T: Real> PairBatch<T> {
    pub fn len(&self) -> usize {
        self.left.first().map_or(0, |t| t.batch())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The same pairs with left and right exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairCache<T> {
    trunks: Vec<Vec<Cache<T>>>,
    head: Vec<Cache<T>>,
    /// Left-minus-right branch outputs, kept for the abs-diff backward.
    diffs: Vec<Tensor<T>>,
    n: usize,
}

impl<T> PairCache<T> {
    /// Trunk caches (one list per stream) and head caches.
    pub fn parts(&self) -> (&[Vec<Cache<T>>], &[Cache<T>]) {
        (&self.trunks, &self.head)
    }
}

/// Gradients of a pair-model loss.
#[derive(Debug, Clone)]
pub struct PairGrads<T> {
    /// In [`PairModel::params`] order.
    pub params: Vec<Tensor<T>>,
    pub left: Vec<Tensor<T>>,
    pub right: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairModel<T> {
    pub config: ModelConfig,
    pub trunks: Vec<Sequential<T>>,
    pub head: Sequential<T>,
    trunk_dim: usize,
}

impl<T: Real> PairModel<T> {
    pub fn build(config: &ModelConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let trunk_specs = config.trunk_specs();
        let mut trunks = Vec::with_capacity(config.streams());
        let mut trunk_dim = 0;
        for _ in 0..config.streams() {
            let (trunk, out) = Sequential::build(&trunk_specs, &config.input_shape, rng)?;
            trunk_dim = out[0];
            trunks.push(trunk);
        }
        let head_in = match config.combine {
            Combine::Concat => 2 * config.streams() * trunk_dim,
            Combine::AbsDiff => config.streams() * trunk_dim,
        };
        let (head, out) = Sequential::build(&config.head_specs(), &[head_in], rng)?;
        debug_assert_eq!(out, vec![1]);
        Ok(Self {
            config: config.clone(),
            trunks,
            head,
            trunk_dim,
        })
    }

    /// Flattened width of one branch output.
    pub fn embedding_dim(&self) -> usize {
        self.trunk_dim
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.trunks.iter().flat_map(|t| t.params()).chain(self.head.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for t in &mut self.trunks {
            out.extend(t.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn batchnorms(&self) -> Vec<&BatchNorm<T>> {
        self.trunks.iter().flat_map(|t| t.batchnorms()).chain(self.head.batchnorms()).collect()
    }

    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut out: Vec<&mut BatchNorm<T>> = Vec::new();
        for t in &mut self.trunks {
            out.extend(t.batchnorms_mut());
        }
        out.extend(self.head.batchnorms_mut());
        out
    }

    fn check_batch(&self, batch: &PairBatch<T>) -> Result<usize> {
        let s = self.config.streams();
        if batch.left.len() != s || batch.right.len() != s {
            return Err(Error::InvalidConfig(format!(
                "model expects {s} streams, batch has {}/{}",
                batch.left.len(),
                batch.right.len()
            )));
        }
        let n = batch.len();
        if n == 0 {
            return Err(Error::Empty("pair batch"));
        }
        let [h, w, c] = self.config.input_shape;
        for t in batch.left.iter().chain(&batch.right) {
            t.expect_shape(&[n, h, w, c])?;
        }
        Ok(n)
    }

    /// Combined branch features `[n, head_in]` plus trunk caches.
    fn features(
        &self,
        batch: &PairBatch<T>,
        mode: Mode,
        rng: &mut Prng,
    ) -> Result<(Tensor<T>, Vec<Vec<Cache<T>>>, Vec<Tensor<T>>)> {
        let n = self.check_batch(batch)?;
        let mut lefts = Vec::with_capacity(self.trunks.len());
        let mut rights = Vec::with_capacity(self.trunks.len());
        let mut caches = Vec::with_capacity(self.trunks.len());
        for ((trunk, l), r) in self.trunks.iter().zip(&batch.left).zip(&batch.right) {
            let stacked = Tensor::concat_batch(l, r)?;
            let (out, c) = trunk.forward(&stacked, mode, rng)?;
            let (lo, ro) = out.split_batch(n)?;
            lefts.push(lo);
            rights.push(ro);
            caches.push(c);
        }
        match self.config.combine {
            Combine::Concat => {
                let parts: Vec<&Tensor<T>> = lefts.iter().chain(&rights).collect();
                Ok((concat_features(&parts)?, caches, Vec::new()))
            }
            Combine::AbsDiff => {
                let diffs: Vec<Tensor<T>> = lefts
                    .iter()
                    .zip(&rights)
                    .map(|(l, r)| {
                        let mut d = l.clone();
                        for (a, &b) in d.data_mut().iter_mut().zip(r.data()) {
                            *a -= b;
                        }
                        d
                    })
                    .collect();
                let abs: Vec<Tensor<T>> = diffs.iter().map(|d| d.map(|v| v.abs())).collect();
                let parts: Vec<&Tensor<T>> = abs.iter().collect();
                Ok((concat_features(&parts)?, caches, diffs))
            }
        }
    }

    /// Probabilities `[n, 1]` that the right image is the entrepreneur.
    pub fn forward(&self, batch: &PairBatch<T>, mode: Mode, rng: &mut Prng) -> Result<(Tensor<T>, PairCache<T>)> {
        let (feat, trunks, diffs) = self.features(batch, mode, rng)?;
        let (p, head) = self.head.forward(&feat, mode, rng)?;
        Ok((
            p,
            PairCache {
                trunks,
                head,
                diffs,
                n: batch.len(),
            },
        ))
    }

    /// Eval-mode pre-sigmoid outputs, one per pair.
    pub fn logits(&self, batch: &PairBatch<T>) -> Result<Vec<T>> {
        let mut rng = Prng::new(0);
        let (mut x, _, _) = self.features(batch, Mode::Eval, &mut rng)?;
        let last = self.head.layers.len() - 1;
        for layer in &self.head.layers[..last] {
            x = layer.forward(&x, Mode::Eval, &mut rng)?.0;
        }
        Ok(x.into_data())
    }

    /// Eval-mode probabilities, one per pair.
    pub fn predict(&self, batch: &PairBatch<T>) -> Result<Vec<T>> {
        let mut rng = Prng::new(0);
        Ok(self.forward(batch, Mode::Eval, &mut rng)?.0.into_data())
    }

    /// Eval-mode branch embeddings `[n, embedding_dim]` from one stream.
    pub fn embed(&self, stream: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let trunk = self
            .trunks
            .get(stream)
            .ok_or_else(|| Error::InvalidConfig(format!("no stream {stream}")))?;
        trunk.infer(x)
    }

    pub fn backward(&self, cache: &PairCache<T>, grad: &Tensor<T>) -> Result<PairGrads<T>> {
        self.backward_impl(cache, grad, true)
    }

    /// Parameter gradients only, in [`PairModel::params`] order.
    pub fn param_grads(&self, cache: &PairCache<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.backward_impl(cache, grad, false)?.params)
    }

    fn backward_impl(&self, cache: &PairCache<T>, grad: &Tensor<T>, input_grads: bool) -> Result<PairGrads<T>> {
        let (gfeat, head_grads) = self.head.backward(&cache.head, grad)?;
        let s = self.trunks.len();
        let d = self.trunk_dim;
        let (gl, gr): (Vec<Tensor<T>>, Vec<Tensor<T>>) = match self.config.combine {
            Combine::Concat => {
                let mut parts = split_features(&gfeat, &vec![d; 2 * s])?;
                let right = parts.split_off(s);
                (parts, right)
            }
            Combine::AbsDiff => {
                let parts = split_features(&gfeat, &vec![d; s])?;
                let mut left = Vec::with_capacity(s);
                let mut right = Vec::with_capacity(s);
                for (g, diff) in parts.into_iter().zip(&cache.diffs) {
                    let mut gl = g;
                    for (v, &df) in gl.data_mut().iter_mut().zip(diff.data()) {
                        *v *= if df > T::zero() {
                            T::one()
                        } else if df < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                    }
                    right.push(gl.map(|v| -v));
                    left.push(gl);
                }
                (left, right)
            }
        };
        let mut params = Vec::new();
        let mut left_in = Vec::with_capacity(s);
        let mut right_in = Vec::with_capacity(s);
        for (((trunk, caches), l), r) in self.trunks.iter().zip(&cache.trunks).zip(&gl).zip(&gr) {
            let g = Tensor::concat_batch(l, r)?;
            if input_grads {
                let (gin, pg) = trunk.backward(caches, &g)?;
                let (a, b) = gin.split_batch(cache.n)?;
                left_in.push(a);
                right_in.push(b);
                params.extend(pg);
            } else {
                params.extend(trunk.param_backward(caches, &g)?);
            }
        }
        params.extend(head_grads);
        Ok(PairGrads {
            params,
            left: left_in,
            right: right_in,
        })
    }

    /// Folds train-mode batch statistics into running statistics.
    pub fn commit(&mut self, cache: &PairCache<T>) {
        for (trunk, c) in self.trunks.iter_mut().zip(&cache.trunks) {
            trunk.commit(c);
        }
        self.head.commit(&cache.head);
    }
}

/// A trained or freshly initialized model with everything needed to resume
/// or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: PairModel<f32>,
    pub optimizer: Adam<f32>,
    pub seed: u64,
}

impl ModelBundle {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }
}

/// Builds a model with weights drawn from `seed`.
pub fn build_model(config: &ModelConfig, adam: AdamConfig, seed: u64) -> Result<ModelBundle> {
    let mut rng = Prng::derive(seed, INIT_STREAM);
    let model = PairModel::build(config, &mut rng)?;
    let optimizer = Adam::new(adam, &model.params());
    Ok(ModelBundle { model, optimizer, seed })
}

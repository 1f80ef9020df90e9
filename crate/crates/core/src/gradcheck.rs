//! Central finite-difference verification of analytic gradients.
//!
//! Runs in 64-bit. Every evaluation reseeds the dropout stream, so train-mode
//! dropout behaves as a fixed mask. A coordinate whose ±step evaluations
//! change a ReLU on/off pattern or a max-pool winner is crossing a kink;
//! such coordinates are skipped and counted rather than compared.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use crate::layers::{Cache, Layer, LayerSpec, Mode, Sequential};
use crate::loss::bce_loss;
use crate::model::{PairBatch, PairCache, PairModel};
use crate::{Prng, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub tolerance: f64,
    /// Relative step; the absolute step is `step * max(1, |x|)`.
    pub step: f64,
    /// Coordinates sampled per block; `None` checks every coordinate.
    pub coords_per_block: Option<usize>,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            coords_per_block: None,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }
}

/// A tensor under test with its analytic gradient.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub value: Tensor<f64>,
    pub analytic: Tensor<f64>,
}

/// Loss value plus a fingerprint of the piecewise-linear regime.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub loss: f64,
    pub regime: u64,
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

/// Compares each block's analytic gradient to central differences.
/// `eval(i, v)` must return the loss with block `i` replaced by `v`.
pub fn check_blocks(
    blocks: &[Block],
    mut eval: impl FnMut(usize, &Tensor<f64>) -> Result<Probe>,
    cfg: &GradCheckConfig,
    rng: &mut Prng,
) -> Result<GradCheckReport> {
    let mut reports = Vec::with_capacity(blocks.len());
    for (bi, block) in blocks.iter().enumerate() {
        let base = eval(bi, &block.value)?;
        let mut coords: Vec<usize> = (0..block.value.len()).collect();
        if let Some(k) = cfg.coords_per_block {
            rng.shuffle(&mut coords);
            coords.truncate(k);
        }
        let mut probe = block.value.clone();
        let mut max_err = 0.0f64;
        let mut checked = 0;
        let mut skipped = 0;
        for &j in &coords {
            let x = block.value.data()[j];
            let h = cfg.step * x.abs().max(1.0);
            probe.data_mut()[j] = x + h;
            let plus = eval(bi, &probe)?;
            probe.data_mut()[j] = x - h;
            let minus = eval(bi, &probe)?;
            probe.data_mut()[j] = x;
            if plus.regime != base.regime || minus.regime != base.regime {
                skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(block.analytic.data()[j], numeric, cfg.floor);
            max_err = if err.is_nan() { f64::INFINITY } else { max_err.max(err) };
            checked += 1;
        }
        reports.push(BlockReport {
            name: block.name.clone(),
            max_rel_err: max_err,
            checked,
            skipped_kinks: skipped,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        blocks: reports,
    })
}

/// FNV-1a over ReLU activity patterns and max-pool winners.
pub fn regime<T: crate::Real>(layers: &[Layer<T>], caches: &[Cache<T>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for (layer, cache) in layers.iter().zip(caches) {
        match (layer, cache) {
            (Layer::Relu, Cache::Input(x)) => {
                for &v in x.data() {
                    mix(u64::from(v > T::zero()));
                }
            }
            (_, Cache::Pool { argmax, .. }) => argmax.iter().for_each(|&i| mix(i as u64)),
            _ => {}
        }
    }
    h
}

fn pair_regime(model: &PairModel<f64>, cache: &PairCache<f64>) -> u64 {
    let (trunks, head) = cache.parts();
    let mut h = regime(&model.head.layers, head);
    for (t, c) in model.trunks.iter().zip(trunks) {
        h = h.rotate_left(7) ^ regime(&t.layers, c);
    }
    h
}

/// Checks a chain of layers built from `specs` (weights drawn from `seed`)
/// on `input`, under the loss `sum(r ⊙ output)` for a fixed random `r`.
/// Blocks cover every parameter tensor and the input itself.
pub fn grad_check(specs: &[LayerSpec], input: &Tensor<f64>, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Prng::derive(seed, 0);
    let (net, _) = Sequential::<f64>::build(specs, &input.shape()[1..], &mut rng)?;
    grad_check_sequential(&net, input, cfg, seed)
}

pub fn grad_check_sequential(
    net: &Sequential<f64>,
    input: &Tensor<f64>,
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let dropout_seed = seed ^ 0x5eed;
    let (out, caches) = net.forward(input, Mode::Train, &mut Prng::new(dropout_seed))?;
    let mut rng = Prng::derive(seed, 2);
    let weights = Tensor::from_fn(out.shape(), |_| rng.normal());
    let (dinput, grads) = net.backward(&caches, &weights)?;

    let mut blocks: Vec<Block> = Vec::new();
    for (li, layer) in net.layers.iter().enumerate() {
        for (pi, p) in layer.params().into_iter().enumerate() {
            blocks.push(Block {
                name: format!("{}#{li}.{pi}", layer.kind()),
                value: p.clone(),
                analytic: Tensor::zeros(p.shape()),
            });
        }
    }
    for (b, g) in blocks.iter_mut().zip(grads) {
        b.analytic = g;
    }
    let n_params = blocks.len();
    blocks.push(Block {
        name: "input".to_string(),
        value: input.clone(),
        analytic: dinput,
    });

    let mut scratch = net.clone();
    let mut x = input.clone();
    let eval = |bi: usize, v: &Tensor<f64>| -> Result<Probe> {
        if bi < n_params {
            let mut params = scratch.params_mut();
            params[bi].data_mut().copy_from_slice(v.data());
        } else {
            x.data_mut().copy_from_slice(v.data());
        }
        let (y, c) = scratch.forward(&x, Mode::Train, &mut Prng::new(dropout_seed))?;
        let loss = y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let regime = regime(&scratch.layers, &c);
        // restore
        if bi < n_params {
            let orig = net.params()[bi].clone();
            scratch.params_mut()[bi].data_mut().copy_from_slice(orig.data());
        } else {
            x.data_mut().copy_from_slice(input.data());
        }
        Ok(Probe { loss, regime })
    };
    check_blocks(&blocks, eval, cfg, &mut rng)
}

/// Mean binary cross-entropy of a pair model and its gradient blocks
/// (parameters, then per-stream left/right inputs).
pub fn pair_blocks(
    model: &PairModel<f64>,
    batch: &PairBatch<f64>,
    targets: &[f64],
    dropout_seed: u64,
) -> Result<(f64, Vec<Block>)> {
    let (p, cache) = model.forward(batch, Mode::Train, &mut Prng::new(dropout_seed))?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut g = Tensor::zeros(p.shape());
    for ((gi, &pi), &y) in g.data_mut().iter_mut().zip(p.data()).zip(targets) {
        let (l, d) = bce_loss(pi, y)?;
        loss += l / n;
        *gi = d / n;
    }
    let grads = model.backward(&cache, &g)?;
    let mut blocks: Vec<Block> = model
        .params()
        .into_iter()
        .zip(grads.params)
        .enumerate()
        .map(|(i, (v, a))| Block {
            name: format!("param#{i}"),
            value: v.clone(),
            analytic: a,
        })
        .collect();
    for (s, (l, r)) in grads.left.into_iter().zip(grads.right).enumerate() {
        blocks.push(Block {
            name: format!("left#{s}"),
            value: batch.left[s].clone(),
            analytic: l,
        });
        blocks.push(Block {
            name: format!("right#{s}"),
            value: batch.right[s].clone(),
            analytic: r,
        });
    }
    Ok((loss, blocks))
}

/// Finite-difference check of a whole pair model under mean BCE.
pub fn grad_check_pair(
    model: &PairModel<f64>,
    batch: &PairBatch<f64>,
    targets: &[f64],
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let dropout_seed = seed ^ 0x5eed;
    let (_, blocks) = pair_blocks(model, batch, targets, dropout_seed)?;
    check_pair_blocks(model, batch, targets, &blocks, cfg, seed)
}

/// As [`grad_check_pair`] with caller-supplied (possibly altered) blocks.
pub fn check_pair_blocks(
    model: &PairModel<f64>,
    batch: &PairBatch<f64>,
    targets: &[f64],
    blocks: &[Block],
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let dropout_seed = seed ^ 0x5eed;
    let n_params = model.params().len();
    let streams = batch.left.len();
    let eval = |bi: usize, v: &Tensor<f64>| -> Result<Probe> {
        let mut m = model.clone();
        let mut b = batch.clone();
        if bi < n_params {
            m.params_mut()[bi].data_mut().copy_from_slice(v.data());
        } else {
            let k = bi - n_params;
            let (s, side) = (k / 2, k % 2);
            debug_assert!(s < streams);
            let t = if side == 0 { &mut b.left[s] } else { &mut b.right[s] };
            t.data_mut().copy_from_slice(v.data());
        }
        let (p, cache) = m.forward(&b, Mode::Train, &mut Prng::new(dropout_seed))?;
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (&pi, &y) in p.data().iter().zip(targets) {
            loss += bce_loss(pi, y)?.0 / n;
        }
        Ok(Probe {
            loss,
            regime: pair_regime(&m, &cache),
        })
    };
    check_blocks(blocks, eval, cfg, &mut Prng::derive(seed, 3))
}

/// Scales every analytic gradient by `factor`.
pub fn corrupt(blocks: &mut [Block], factor: f64) {
    for b in blocks {
        b.analytic = b.analytic.map(|v| v * factor);
    }
}

//! Post-hoc analyses of trained pair models.

mod cluster;
mod embedding;
mod pca;
mod perturb;
mod saliency;
mod score;
mod subgroup;

pub use cluster::{kmeans2, purity};
pub use embedding::{embedding_study, sample_by_gender, EmbeddingPoint, EmbeddingStudy};
pub use pca::{pca_2d, symmetric_eigen, Pca2d};
pub use perturb::{perturb_confidence, Perturbation};
pub use saliency::{occlusion_saliency, CellDelta, SaliencyResult};
pub use score::score_single;
pub use subgroup::{subgroup_accuracy, GroupBy, SubgroupRow, SubgroupTable};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{PairBatch, PairModel};
use crate::train::{IndexedPair, Inputs};
use crate::{Result, Tensor};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Per-stream `[h, w, c]` inputs of one pair, open to modification.
#[derive(Debug, Clone)]
pub(crate) struct PairInput {
    pub left: Vec<Tensor<f32>>,
    pub right: Vec<Tensor<f32>>,
}

impl PairInput {
    pub fn of(inputs: &Inputs, pair: IndexedPair) -> Self {
        let take = |i| (0..inputs.streams()).map(|s| inputs.get(s, i).clone()).collect();
        Self {
            left: take(pair.left),
            right: take(pair.right),
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut Vec<Tensor<f32>> {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }
}

fn stack(variants: &[PairInput]) -> Result<PairBatch<f32>> {
    let streams = variants[0].left.len();
    let gather = |pick: &dyn Fn(&PairInput) -> &Tensor<f32>| Tensor::stack(&variants.iter().map(pick).collect::<Vec<_>>());
    Ok(PairBatch {
        left: (0..streams).map(|s| gather(&|v| &v.left[s])).collect::<Result<_>>()?,
        right: (0..streams).map(|s| gather(&|v| &v.right[s])).collect::<Result<_>>()?,
    })
}

/// Eval-mode logits of many pair variants, computed in chunks.
pub(crate) fn variant_logits(model: &PairModel<f32>, variants: &[PairInput]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(variants.len());
    for chunk in variants.chunks(CHUNK) {
        out.extend(model.logits(&stack(chunk)?)?.into_iter().map(f64::from));
    }
    Ok(out)
}

/// Logit of the correct answer: positive when the model is right.
pub(crate) fn oriented(logit: f64, target: u8) -> f64 {
    if target == 1 {
        logit
    } else {
        -logit
    }
}

/// `σ(a) − σ(b)`, taken on whichever tail keeps the small probabilities
/// small so nearly saturated differences keep their precision.
pub(crate) fn sigmoid_diff(a: f64, b: f64) -> f64 {
    if a + b >= 0.0 {
        sigmoid(-b) - sigmoid(-a)
    } else {
        sigmoid(a) - sigmoid(b)
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

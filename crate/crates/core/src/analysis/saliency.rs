use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{oriented, sigmoid_diff, variant_logits, PairInput, Side};
use crate::model::PairModel;
use crate::train::{IndexedPair, Inputs};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub row: usize,
    pub col: usize,
    /// Drop in the probability of the correct answer when the cell is zeroed.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResult {
    pub pair: IndexedPair,
    pub side: Side,
    pub top_k: usize,
    /// The `top_k` strongest cells, largest delta first, ties by (row, col).
    pub cells: Vec<CellDelta>,
    pub height: usize,
    pub width: usize,
    /// Every cell's delta, row-major.
    pub grid: Vec<f64>,
}

/// Occlusion sensitivity: zero one grid cell (all channels, every input
/// stream) of the chosen side at a time and record how much the
/// probability of the correct answer drops.
pub fn occlusion_saliency(
    model: &PairModel<f32>,
    inputs: &Inputs,
    pair: IndexedPair,
    side: Side,
    top_k: usize,
) -> Result<SaliencyResult> {
    if top_k < 1 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let base = PairInput::of(inputs, pair);
    let shape = base.left[0].shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut variants = Vec::with_capacity(h * w + 1);
    variants.push(base.clone());
    for row in 0..h {
        for col in 0..w {
            let mut v = base.clone();
            for t in v.side_mut(side) {
                let at = (row * w + col) * c;
                t.data_mut()[at..at + c].fill(0.0);
            }
            variants.push(v);
        }
    }
    let logits = variant_logits(model, &variants)?;
    let original = oriented(logits[0], pair.target);
    let grid: Vec<f64> = logits[1..]
        .iter()
        .map(|&z| sigmoid_diff(original, oriented(z, pair.target)))
        .collect();
    let mut cells: Vec<CellDelta> = grid
        .iter()
        .enumerate()
        .map(|(i, &delta)| CellDelta {
            row: i / w,
            col: i % w,
            delta,
        })
        .collect();
    cells.sort_by(|a, b| b.delta.total_cmp(&a.delta).then((a.row, a.col).cmp(&(b.row, b.col))));
    cells.truncate(top_k);
    Ok(SaliencyResult {
        pair,
        side,
        top_k,
        cells,
        height: h,
        width: w,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Gender, Label, SubjectRecord};
    use crate::model::{build_model, ModelConfig};
    use crate::layers::Mode;
    use crate::optim::AdamConfig;
    use crate::{Prng, Tensor};
    use alloc::format;
    use alloc::string::String;

    fn toy(zero_cell: bool) -> (Dataset, Inputs, PairModel<f32>) {
        let mut rng = Prng::new(4);
        let subjects: Vec<SubjectRecord> = (0..2)
            .map(|i| SubjectRecord {
                subject_id: format!("s{i}"),
                label: if i == 0 { Label::Ent } else { Label::Non },
                gender: Gender::F,
                tags: Default::default(),
                feature_path: String::new(),
                regions: Vec::new(),
            })
            .collect();
        let features: Vec<Tensor<f32>> = (0..2)
            .map(|_| {
                let mut t = Tensor::from_fn(&[5, 5, 2], |_| rng.normal() as f32);
                if zero_cell {
                    t.data_mut()[..2].fill(0.0);
                }
                t
            })
            .collect();
        let d = Dataset::new(subjects, features).unwrap();
        let cfg = ModelConfig::fullface([5, 5, 2]).with_widths(2, 4);
        let mut bundle = build_model(&cfg, AdamConfig::default(), 1).unwrap();
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let batch = inputs.batch(&[IndexedPair { left: 0, right: 1, target: 0 }]);
        let (_, cache) = bundle.model.forward(&batch, Mode::Train, &mut rng).unwrap();
        bundle.model.commit(&cache);
        (d, inputs, bundle.model)
    }

    #[test]
    fn insensitive_model_orders_by_position() {
        let (_, inputs, mut model) = toy(false);
        for p in model.head.params_mut() {
            p.data_mut().fill(0.0);
        }
        let r = occlusion_saliency(&model, &inputs, IndexedPair { left: 0, right: 1, target: 0 }, Side::Left, 50).unwrap();
        assert_eq!(r.cells.len(), 25);
        assert!(r.cells.iter().all(|c| c.delta == 0.0));
        let order: Vec<_> = r.cells.iter().map(|c| (c.row, c.col)).collect();
        let expect: Vec<_> = (0..5).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
        assert_eq!(order, expect);
    }

    #[test]
    fn zero_cell_has_zero_delta_and_order_is_sorted() {
        let (_, inputs, model) = toy(true);
        let pair = IndexedPair { left: 0, right: 1, target: 0 };
        let r = occlusion_saliency(&model, &inputs, pair, Side::Left, 10).unwrap();
        assert_eq!(r.grid[0], 0.0);
        assert_eq!(r.cells.len(), 10);
        assert!(r.cells.windows(2).all(|w| w[0].delta >= w[1].delta));
        let again = occlusion_saliency(&model, &inputs, pair, Side::Left, 10).unwrap();
        assert_eq!(r, again);
        assert!(occlusion_saliency(&model, &inputs, pair, Side::Right, 0).is_err());
    }
}

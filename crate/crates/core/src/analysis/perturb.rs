use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{oriented, sigmoid_diff, variant_logits, PairInput, Side};
use crate::data::Dataset;
use crate::model::PairModel;
use crate::train::{IndexedPair, Inputs};
use crate::{Error, Prng, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    /// Adds N(0, σ²) noise to every ENT-side input value. The noise pattern
    /// of a pair depends only on the seed and the pair's position, so
    /// different σ scale the same pattern.
    Gaussian { sigma: f64 },
    /// Permutes the grid cells (all channels together) of the ENT side
    /// inside the named region.
    RegionShuffle { region: String },
}

/// Mean absolute change, in percentage points, of the probability the
/// model assigns to the correct answer after perturbing the ENT side.
pub fn perturb_confidence(
    model: &PairModel<f32>,
    inputs: &Inputs,
    dataset: &Dataset,
    pairs: &[IndexedPair],
    perturbation: &Perturbation,
    seed: u64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    if let Perturbation::Gaussian { sigma } = perturbation {
        if !(*sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be finite and >= 0, got {sigma}")));
        }
    }
    let mut variants = Vec::with_capacity(2 * pairs.len());
    for (k, &pair) in pairs.iter().enumerate() {
        let base = PairInput::of(inputs, pair);
        let (side, ent) = if pair.target == 0 { (Side::Left, pair.left) } else { (Side::Right, pair.right) };
        let mut moved = base.clone();
        let mut rng = Prng::derive(seed, 1000 + k as u64);
        match perturbation {
            Perturbation::Gaussian { sigma } => {
                for t in moved.side_mut(side) {
                    for v in t.data_mut() {
                        *v += (sigma * rng.normal()) as f32;
                    }
                }
            }
            Perturbation::RegionShuffle { region } => {
                let s = dataset.subject(ent);
                let rect = s.region(region).ok_or_else(|| {
                    Error::InvalidData(format!("subject {} has no region {region:?}", s.subject_id))
                })?;
                let cells: Vec<(usize, usize)> = rect.cells().collect();
                let mut order: Vec<usize> = (0..cells.len()).collect();
                rng.shuffle(&mut order);
                for t in moved.side_mut(side) {
                    let (w, c) = (t.shape()[1], t.shape()[2]);
                    let src = t.clone();
                    for (dst, &from) in cells.iter().zip(&order) {
                        let (a, b) = ((dst.0 * w + dst.1) * c, (cells[from].0 * w + cells[from].1) * c);
                        t.data_mut()[a..a + c].copy_from_slice(&src.data()[b..b + c]);
                    }
                }
            }
        }
        variants.push(base);
        variants.push(moved);
    }
    let logits = variant_logits(model, &variants)?;
    let total: f64 = pairs
        .iter()
        .zip(logits.chunks_exact(2))
        .map(|(p, z)| sigmoid_diff(oriented(z[0], p.target), oriented(z[1], p.target)).abs())
        .sum();
    Ok(total / pairs.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::model::{build_model, ModelConfig};
    use crate::optim::AdamConfig;
    use crate::pairing::generate_pairs;
    use crate::synth::{synth_generate, SynthSpec, MIN_ORACLE_DRAWS};
    use crate::train::index_pairs;

    #[test]
    fn identity_and_insensitive_cases() {
        let spec = SynthSpec {
            n_subjects: 60,
            oracle_draws: MIN_ORACLE_DRAWS,
            ..SynthSpec::default().with_shape([6, 6, 2])
        };
        let d = synth_generate(&spec, 3).unwrap().dataset;
        let pairs = index_pairs(&d, &generate_pairs(d.subjects(), Some(20), None, 3).unwrap()).unwrap();
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(2, 4);
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let mut b = build_model(&cfg, AdamConfig::default(), 2).unwrap();
        let (_, cache) = b.model.forward(&inputs.batch(&pairs), Mode::Train, &mut Prng::new(1)).unwrap();
        b.model.commit(&cache);

        let g = |s| Perturbation::Gaussian { sigma: s };
        assert_eq!(perturb_confidence(&b.model, &inputs, &d, &pairs, &g(0.0), 1).unwrap(), 0.0);
        assert!(perturb_confidence(&b.model, &inputs, &d, &pairs, &g(1.0), 1).unwrap() > 0.0);
        assert!(perturb_confidence(&b.model, &inputs, &d, &pairs, &g(-0.1), 1).is_err());
        let shuffle = Perturbation::RegionShuffle { region: "nose".into() };
        assert!(perturb_confidence(&b.model, &inputs, &d, &pairs, &shuffle, 1).unwrap() >= 0.0);
        let missing = Perturbation::RegionShuffle { region: "ear".into() };
        assert!(perturb_confidence(&b.model, &inputs, &d, &pairs, &missing, 1).is_err());

        let mut flat = b.model.clone();
        for p in flat.head.params_mut() {
            p.data_mut().fill(0.0);
        }
        assert_eq!(perturb_confidence(&flat, &inputs, &d, &pairs, &g(1.0), 1).unwrap(), 0.0);
    }
}

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{kmeans2, pca_2d, purity};
use crate::data::{Dataset, Gender, Label};
use crate::model::PairModel;
use crate::train::Inputs;
use crate::{Error, Prng, Result, Tensor};

const RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub subject_id: String,
    pub label: Label,
    pub gender: Gender,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStudy {
    pub points: Vec<EmbeddingPoint>,
    pub explained: [f64; 2],
    /// Majority-label share of the 2-means clusters.
    pub label_purity: f64,
    /// Majority-gender share of the same clusters.
    pub gender_purity: f64,
}

/// Projects each subject's branch embedding (all trunk outputs, flattened
/// and concatenated) to 2D and measures how well 2-means clusters follow
/// the labels compared with the genders.
pub fn embedding_study(
    model: &PairModel<f32>,
    inputs: &Inputs,
    dataset: &Dataset,
    subjects: &[usize],
    seed: u64,
) -> Result<EmbeddingStudy> {
    let labels: Vec<Label> = subjects.iter().map(|&i| dataset.subject(i).label).collect();
    let genders: Vec<Gender> = subjects.iter().map(|&i| dataset.subject(i).gender).collect();
    let distinct_labels: BTreeSet<_> = labels.iter().collect();
    let distinct_genders: BTreeSet<_> = genders.iter().collect();
    if distinct_labels.len() < 2 || distinct_genders.len() < 2 {
        return Err(Error::InvalidData(format!(
            "embedding sample needs both labels and at least two genders, got {} label(s) and {} gender(s)",
            distinct_labels.len(),
            distinct_genders.len()
        )));
    }
    let mut vectors: Vec<Vec<f64>> = subjects.iter().map(|_| Vec::new()).collect();
    for s in 0..inputs.streams() {
        let items: Vec<&Tensor<f32>> = subjects.iter().map(|&i| inputs.get(s, i)).collect();
        let emb = model.embed(s, &Tensor::stack(&items)?)?;
        for (k, v) in vectors.iter_mut().enumerate() {
            v.extend(emb.item(k).iter().map(|&x| f64::from(x)));
        }
    }
    let pca = pca_2d(&vectors)?;
    let assign = kmeans2(&pca.coords, RESTARTS, seed)?;
    let points = subjects
        .iter()
        .zip(&pca.coords)
        .zip(&assign)
        .map(|((&i, c), &k)| {
            let s = dataset.subject(i);
            EmbeddingPoint {
                subject_id: s.subject_id.clone(),
                label: s.label,
                gender: s.gender,
                x: c[0],
                y: c[1],
                cluster: k,
            }
        })
        .collect();
    Ok(EmbeddingStudy {
        points,
        explained: pca.explained,
        label_purity: purity(&assign, &labels)?,
        gender_purity: purity(&assign, &genders)?,
    })
}

/// Draws up to `count` subjects of each listed gender from `candidates`
/// without replacement; the result keeps candidate order.
pub fn sample_by_gender(dataset: &Dataset, candidates: &[usize], counts: &[(Gender, usize)], seed: u64) -> Vec<usize> {
    let mut rng = Prng::derive(seed, 51);
    let mut picked = BTreeSet::new();
    for &(g, count) in counts {
        let mut pool: Vec<usize> = candidates.iter().copied().filter(|&i| dataset.subject(i).gender == g).collect();
        rng.shuffle(&mut pool);
        picked.extend(pool.into_iter().take(count));
    }
    candidates.iter().copied().filter(|i| picked.contains(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::model::{build_model, ModelConfig};
    use crate::optim::AdamConfig;
    use crate::synth::{synth_generate, SynthSpec, MIN_ORACLE_DRAWS};
    use crate::train::IndexedPair;

    fn setup() -> (Dataset, Inputs, PairModel<f32>) {
        let spec = SynthSpec {
            n_subjects: 80,
            oracle_draws: MIN_ORACLE_DRAWS,
            ..SynthSpec::default().with_shape([6, 6, 2])
        };
        let d = synth_generate(&spec, 2).unwrap().dataset;
        let cfg = ModelConfig::fullface([6, 6, 2]).with_widths(2, 4);
        let mut b = build_model(&cfg, AdamConfig::default(), 1).unwrap();
        let inputs = Inputs::prepare(&d, &cfg).unwrap();
        let pairs: Vec<_> = (0..10).map(|i| IndexedPair { left: i, right: i + 10, target: 0 }).collect();
        let (_, cache) = b.model.forward(&inputs.batch(&pairs), Mode::Train, &mut Prng::new(0)).unwrap();
        b.model.commit(&cache);
        (d, inputs, b.model)
    }

    #[test]
    fn study_shapes_and_purity_bounds() {
        let (d, inputs, model) = setup();
        let all: Vec<usize> = (0..d.len()).collect();
        let sample = sample_by_gender(&d, &all, &[(Gender::M, 30), (Gender::F, 10)], 4);
        assert_eq!(sample.len(), 40);
        let s = embedding_study(&model, &inputs, &d, &sample, 1).unwrap();
        assert_eq!(s.points.len(), 40);
        for p in [s.label_purity, s.gender_purity] {
            assert!((0.5..=1.0).contains(&p));
        }
        assert!(s.explained[0] >= s.explained[1]);
    }

    #[test]
    fn single_label_sample_is_rejected() {
        let (d, inputs, model) = setup();
        let ents: Vec<usize> = (0..d.len()).filter(|&i| d.subject(i).label == Label::Ent).collect();
        assert!(embedding_study(&model, &inputs, &d, &ents, 1).is_err());
    }
}

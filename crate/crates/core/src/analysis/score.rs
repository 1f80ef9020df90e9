use alloc::format;
use alloc::vec::Vec;

use super::{sigmoid, variant_logits, PairInput};
use crate::data::{Dataset, Label};
use crate::model::PairModel;
use crate::train::{IndexedPair, Inputs};
use crate::{Error, Result};

/// Single-subject probability of being the ENT: the subject meets every
/// panel member in both orientations and the probabilities assigned to
/// "the subject is the ENT" are averaged.
///
/// With `p1 = P(right is ENT | member, subject)` and
/// `p2 = P(right is ENT | subject, member)` each member contributes
/// `(p1 + 1 − p2) / 2 = 0.5 + (p1 − p2) / 2`. The differences are summed in
/// sorted order so the score does not depend on the panel's order.
pub fn score_single(
    model: &PairModel<f32>,
    inputs: &Inputs,
    dataset: &Dataset,
    subject: usize,
    panel: &[usize],
    mixed_panel: bool,
) -> Result<f64> {
    if panel.is_empty() {
        return Err(Error::Empty("panel"));
    }
    let me = dataset.subject(subject);
    for &m in panel {
        let other = dataset.subject(m);
        if m == subject {
            return Err(Error::InvalidData(format!("subject {} is on its own panel", me.subject_id)));
        }
        if other.label != Label::Non {
            return Err(Error::InvalidData(format!("panel member {} is not labelled NON", other.subject_id)));
        }
        if !mixed_panel && other.gender != me.gender {
            return Err(Error::InvalidData(format!(
                "panel member {} has gender {} but the subject has {}",
                other.subject_id, other.gender, me.gender
            )));
        }
    }
    let mut variants = Vec::with_capacity(2 * panel.len());
    for &m in panel {
        variants.push(PairInput::of(inputs, IndexedPair { left: m, right: subject, target: 1 }));
        variants.push(PairInput::of(inputs, IndexedPair { left: subject, right: m, target: 0 }));
    }
    let logits = variant_logits(model, &variants)?;
    let mut diffs: Vec<f64> = logits.chunks_exact(2).map(|z| (sigmoid(z[0]) - sigmoid(z[1])) / 2.0).collect();
    diffs.sort_by(f64::total_cmp);
    Ok(0.5 + diffs.iter().sum::<f64>() / panel.len() as f64)
}

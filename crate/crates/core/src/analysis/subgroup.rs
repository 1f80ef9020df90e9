use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Gender};
use crate::model::PairModel;
use crate::train::{predict_targets, ConfusionCounts, EvalMode, IndexedPair, Inputs};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Gender,
    /// Splits pairs into those whose subjects carry the tag and those whose
    /// subjects do not (`not_<tag>`).
    Tag(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: String,
    pub n: usize,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub rows: Vec<SubgroupRow>,
    /// Groups with no pairs, left out of `rows`.
    pub omitted: Vec<String>,
}

fn group_of(dataset: &Dataset, subject: usize, by: &GroupBy) -> String {
    let s = dataset.subject(subject);
    match by {
        GroupBy::Gender => s.gender.to_string(),
        GroupBy::Tag(t) if s.tags.contains(t) => t.clone(),
        GroupBy::Tag(t) => format!("not_{t}"),
    }
}

/// Accuracy per group value shared by both sides of each pair.
pub fn subgroup_accuracy(
    model: &PairModel<f32>,
    inputs: &Inputs,
    dataset: &Dataset,
    pairs: &[IndexedPair],
    by: &GroupBy,
    mode: EvalMode,
) -> Result<SubgroupTable> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut keys = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (l, r) = (group_of(dataset, p.left, by), group_of(dataset, p.right, by));
        if l != r {
            return Err(Error::InvalidData(format!(
                "pair {}/{} mixes groups {l} and {r}",
                dataset.subject(p.left).subject_id,
                dataset.subject(p.right).subject_id
            )));
        }
        keys.push(l);
    }
    let predicted = predict_targets(model, inputs, pairs, mode)?;
    let mut counts: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    for ((p, y), k) in pairs.iter().zip(predicted).zip(keys) {
        counts.entry(k).or_default().record(p.target, y);
    }
    let all: Vec<String> = match by {
        GroupBy::Gender => Gender::ALL.iter().map(|g| g.to_string()).collect(),
        GroupBy::Tag(t) => [t.clone(), format!("not_{t}")].into(),
    };
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for g in all {
        match counts.get(&g) {
            Some(c) => rows.push(SubgroupRow {
                group: g,
                n: c.total(),
                accuracy: c.accuracy()?,
                counts: *c,
            }),
            None => omitted.push(g),
        }
    }
    Ok(SubgroupTable { rows, omitted })
}

//! Subjects, landmark regions, pair samples and in-memory datasets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ENT")]
    Ent,
    #[serde(rename = "NON")]
    Non,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Ent => "ENT",
            Label::Non => "NON",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ENT" => Ok(Label::Ent),
            "NON" => Ok(Label::Non),
            _ => Err(Error::InvalidData(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    X,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::M, Gender::F, Gender::X];
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::X => "X",
        })
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Gender::M),
            "F" => Ok(Gender::F),
            "X" => Ok(Gender::X),
            _ => Err(Error::InvalidData(format!("unknown gender {s:?}"))),
        }
    }
}

/// Grid rectangle, rows `r0..r1` and columns `c0..c1` (end-exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn new(r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Self> {
        if r0 >= r1 || c0 >= c1 {
            return Err(Error::InvalidData(format!("empty rectangle {r0}:{r1}:{c0}:{c1}")));
        }
        Ok(Self { r0, r1, c0, c1 })
    }

    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.r0..self.r1).contains(&row) && (self.c0..self.c1).contains(&col)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.r1 <= height && self.c1 <= width
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.r0..self.r1).flat_map(move |r| (self.c0..self.c1).map(move |c| (r, c)))
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.r0, self.r1, self.c0, self.c1)
    }
}

impl FromStr for Rect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidData(format!("bad rectangle {s:?}, expected r0:r1:c0:c1"));
        let v: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match v[..] {
            [r0, r1, c0, c1] => Rect::new(r0, r1, c0, c1),
            _ => Err(bad()),
        }
    }
}

/// Named landmark rectangle, written `name@r0:r1:c0:c1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub rect: Rect,
}

impl Region {
    pub fn new(name: &str, rect: Rect) -> Self {
        Self {
            name: name.to_string(),
            rect,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.rect)
    }
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, rect) = s
            .split_once('@')
            .ok_or_else(|| Error::InvalidData(format!("bad region {s:?}, expected name@r0:r1:c0:c1")))?;
        if name.is_empty() {
            return Err(Error::InvalidData(format!("region without name: {s:?}")));
        }
        Ok(Region::new(name, rect.parse()?))
    }
}

/// Parses a semicolon-joined region list; empty input gives no regions.
pub fn parse_regions(s: &str) -> Result<Vec<Region>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect()
}

pub fn format_regions(regions: &[Region]) -> String {
    regions.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: Label,
    pub gender: Gender,
    pub tags: BTreeSet<String>,
    pub feature_path: String,
    pub regions: Vec<Region>,
}

impl SubjectRecord {
    pub fn region(&self, name: &str) -> Option<Rect> {
        self.regions.iter().find(|r| r.name == name).map(|r| r.rect)
    }
}

/// Ordered pair; `target` is 0 when the left subject is the entrepreneur
/// and 1 when the right one is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub left_id: String,
    pub right_id: String,
    pub target: u8,
}

impl PairSample {
    pub fn swapped(&self) -> Self {
        Self {
            left_id: self.right_id.clone(),
            right_id: self.left_id.clone(),
            target: 1 - self.target,
        }
    }

    /// Id of the entrepreneur side.
    pub fn ent_id(&self) -> &str {
        if self.target == 0 {
            &self.left_id
        } else {
            &self.right_id
        }
    }
}

/// Validated subjects with their feature maps `[height, width, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectRecord>,
    features: Vec<Tensor<f32>>,
    index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>, features: Vec<Tensor<f32>>) -> Result<Self> {
        validate_subjects(&subjects)?;
        if subjects.len() != features.len() {
            return Err(Error::InvalidData(format!(
                "{} subjects but {} feature maps",
                subjects.len(),
                features.len()
            )));
        }
        let shape = features.first().ok_or(Error::Empty("dataset"))?.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::InvalidShape(shape));
        }
        for (s, f) in subjects.iter().zip(&features) {
            if f.shape() != shape.as_slice() {
                return Err(Error::InvalidData(format!(
                    "feature shape {:?} of {} differs from {:?}",
                    f.shape(),
                    s.subject_id,
                    shape
                )));
            }
            for r in &s.regions {
                if !r.rect.fits(shape[0], shape[1]) {
                    return Err(Error::InvalidData(format!(
                        "region {r} of {} exceeds the {}x{} grid",
                        s.subject_id, shape[0], shape[1]
                    )));
                }
            }
        }
        let index = subjects.iter().enumerate().map(|(i, s)| (s.subject_id.clone(), i)).collect();
        Ok(Self {
            subjects,
            features,
            index,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn features(&self) -> &[Tensor<f32>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.features[0].shape();
        [s[0], s[1], s[2]]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidData(format!("unknown subject {id:?}")))
    }

    pub fn subject(&self, i: usize) -> &SubjectRecord {
        &self.subjects[i]
    }

    pub fn feature(&self, i: usize) -> &Tensor<f32> {
        &self.features[i]
    }

    /// Checks the pair invariants against the subjects' labels and genders.
    pub fn check_pair(&self, pair: &PairSample) -> Result<(usize, usize)> {
        let l = self.index_of(&pair.left_id)?;
        let r = self.index_of(&pair.right_id)?;
        let (ls, rs) = (&self.subjects[l], &self.subjects[r]);
        let expected = match (ls.label, rs.label) {
            (Label::Ent, Label::Non) => 0,
            (Label::Non, Label::Ent) => 1,
            _ => {
                return Err(Error::InvalidData(format!(
                    "pair {}/{} must contain exactly one ENT",
                    pair.left_id, pair.right_id
                )))
            }
        };
        if ls.gender != rs.gender {
            return Err(Error::InvalidData(format!(
                "pair {}/{} crosses genders",
                pair.left_id, pair.right_id
            )));
        }
        if pair.target != expected {
            return Err(Error::InvalidData(format!(
                "pair {}/{} has target {} but the ENT side implies {expected}",
                pair.left_id, pair.right_id, pair.target
            )));
        }
        Ok((l, r))
    }
}

pub fn validate_subjects(subjects: &[SubjectRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in subjects {
        if s.subject_id.is_empty() {
            return Err(Error::InvalidData("empty subject_id".into()));
        }
        if !seen.insert(s.subject_id.as_str()) {
            return Err(Error::InvalidData(format!("duplicate subject_id {:?}", s.subject_id)));
        }
        let mut names = BTreeSet::new();
        for r in &s.regions {
            if !names.insert(r.name.as_str()) {
                return Err(Error::InvalidData(format!(
                    "subject {} repeats region {:?}",
                    s.subject_id, r.name
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_format() {
        let r: Region = "nose@4:9:5:10".parse().unwrap();
        assert_eq!(r.name, "nose");
        assert_eq!(r.rect, Rect { r0: 4, r1: 9, c0: 5, c1: 10 });
        assert_eq!(r.rect.area(), 25);
        assert_eq!(r.to_string(), "nose@4:9:5:10");
        assert!("nose@4:4:5:10".parse::<Region>().is_err());
        assert!("nose4:9:5:10".parse::<Region>().is_err());
        assert!("@4:9:5:10".parse::<Region>().is_err());
        let all = parse_regions("eyes@2:5:2:12;nose@5:10:5:10").unwrap();
        assert_eq!(format_regions(&all), "eyes@2:5:2:12;nose@5:10:5:10");
        assert!(parse_regions("").unwrap().is_empty());
    }

    #[test]
    fn labels_and_genders_parse() {
        assert_eq!("ENT".parse::<Label>().unwrap(), Label::Ent);
        assert!("ent".parse::<Label>().is_err());
        assert_eq!("F".parse::<Gender>().unwrap(), Gender::F);
        assert!("Q".parse::<Gender>().is_err());
    }

    fn subject(id: &str, label: Label) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            label,
            gender: Gender::M,
            tags: BTreeSet::new(),
            feature_path: format!("{id}.fptn"),
            regions: Vec::new(),
        }
    }

    #[test]
    fn dataset_validation() {
        let f = || Tensor::<f32>::zeros(&[4, 4, 2]);
        assert!(Dataset::new(alloc::vec![subject("a", Label::Ent), subject("a", Label::Non)], alloc::vec![f(), f()]).is_err());
        assert!(Dataset::new(
            alloc::vec![subject("a", Label::Ent), subject("b", Label::Non)],
            alloc::vec![f(), Tensor::zeros(&[4, 4, 3])]
        )
        .is_err());
        let mut s = subject("c", Label::Ent);
        s.regions.push("nose@2:5:0:1".parse().unwrap());
        assert!(Dataset::new(alloc::vec![s], alloc::vec![f()]).is_err());
        let ds = Dataset::new(alloc::vec![subject("a", Label::Ent), subject("b", Label::Non)], alloc::vec![f(), f()]).unwrap();
        let ok = PairSample {
            left_id: "b".into(),
            right_id: "a".into(),
            target: 1,
        };
        assert_eq!(ds.check_pair(&ok).unwrap(), (1, 0));
        assert!(ds.check_pair(&PairSample { target: 0, ..ok.clone() }).is_err());
        assert_eq!(ok.swapped().target, 0);
        assert_eq!(ok.ent_id(), "a");
    }
}

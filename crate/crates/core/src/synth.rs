//! Planted-signal synthetic subjects with a Monte-Carlo Bayes oracle.
//!
//! Every feature is drawn from N(0, σ²); ENT subjects additionally get a
//! mean shift of `s` on all channels of the cells inside the planted region.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Gender, Label, Rect, Region, SubjectRecord};
use crate::{Error, Prng, Result, Tensor};

pub const DEFAULT_ORACLE_DRAWS: usize = 200_000;
pub const MIN_ORACLE_DRAWS: usize = 100_000;

/// Face-like regions on a 14×14 grid, rescaled for other grids.
pub fn default_regions(height: usize, width: usize) -> Vec<Region> {
    let base = [("eyes", [2, 5, 2, 12]), ("nose", [5, 10, 5, 10]), ("mouth", [10, 13, 4, 10])];
    let scale = |v: usize, n: usize| libm::round(v as f64 * n as f64 / 14.0) as usize;
    base.iter()
        .map(|(name, [r0, r1, c0, c1])| {
            let (r0, c0) = (scale(*r0, height).min(height - 1), scale(*c0, width).min(width - 1));
            let r1 = scale(*r1, height).clamp(r0 + 1, height);
            let c1 = scale(*c1, width).clamp(c0 + 1, width);
            Region::new(name, Rect { r0, r1, c0, c1 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub male_fraction: f64,
    /// `[height, width, channels]`.
    pub shape: [usize; 3],
    /// Landmark regions written to every subject; must include `planted`.
    pub regions: Vec<Region>,
    pub planted: String,
    pub signal: f64,
    pub noise: f64,
    /// ENT share within each gender stratum.
    pub ent_fraction: f64,
    pub oracle_draws: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 2000,
            male_fraction: 0.81,
            shape: [14, 14, 8],
            regions: default_regions(14, 14),
            planted: "nose".into(),
            signal: 3.0,
            noise: 1.0,
            ent_fraction: 0.596,
            oracle_draws: DEFAULT_ORACLE_DRAWS,
        }
    }
}

impl SynthSpec {
    /// Sets the grid and replaces the regions with the rescaled defaults.
    pub fn with_shape(mut self, shape: [usize; 3]) -> Self {
        self.shape = shape;
        self.regions = default_regions(shape[0], shape[1]);
        self
    }

    pub fn planted_rect(&self) -> Result<Rect> {
        self.regions
            .iter()
            .find(|r| r.name == self.planted)
            .map(|r| r.rect)
            .ok_or_else(|| Error::InvalidConfig(format!("planted region {:?} is not among the regions", self.planted)))
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidConfig(format!("feature shape {:?} has an empty axis", self.shape)));
        }
        if self.n_subjects < 2 {
            return Err(Error::InvalidConfig("at least two subjects are required".into()));
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return Err(Error::InvalidConfig(format!("signal must be finite and >= 0, got {}", self.signal)));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise scale must be > 0, got {}", self.noise)));
        }
        for (name, v) in [("male_fraction", self.male_fraction), ("ent_fraction", self.ent_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.oracle_draws < MIN_ORACLE_DRAWS {
            return Err(Error::InvalidConfig(format!(
                "oracle needs at least {MIN_ORACLE_DRAWS} draws, got {}",
                self.oracle_draws
            )));
        }
        for r in &self.regions {
            if !r.rect.fits(h, w) {
                return Err(Error::InvalidConfig(format!("region {r} exceeds the {h}x{w} grid")));
            }
        }
        self.planted_rect().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub bayes_accuracy: f64,
    pub standard_error: f64,
    pub draws: usize,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub oracle: OracleReport,
}

/// Monte-Carlo estimate of the best achievable pair accuracy. The Bayes
/// rule picks the image with the larger sum over the planted cells, so each
/// draw simulates those two sums (each a sum of `k` independent cells, i.e.
/// N(k·shift, k·σ²)) and counts the ENT sum winning.
pub fn bayes_pair_accuracy(spec: &SynthSpec, seed: u64) -> Result<OracleReport> {
    spec.validate()?;
    let k = (spec.planted_rect()?.area() * spec.shape[2]) as f64;
    let spread = spec.noise * libm::sqrt(k);
    let mut rng = Prng::derive(seed, 32);
    let mut correct = 0usize;
    for _ in 0..spec.oracle_draws {
        let ent = k * spec.signal + spread * rng.normal();
        let non = spread * rng.normal();
        if ent > non {
            correct += 1;
        }
    }
    let p = correct as f64 / spec.oracle_draws as f64;
    Ok(OracleReport {
        bayes_accuracy: p,
        standard_error: libm::sqrt(p * (1.0 - p) / spec.oracle_draws as f64),
        draws: spec.oracle_draws,
    })
}

fn stratum_labels(n: usize, ent_fraction: f64, rng: &mut Prng) -> Vec<Label> {
    let n_ent = libm::round(n as f64 * ent_fraction) as usize;
    let mut labels: Vec<Label> = (0..n).map(|i| if i < n_ent { Label::Ent } else { Label::Non }).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Draws the synthetic subjects. Gender and label counts are exact
/// (rounded) shares; their assignment to subject ids is random.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let planted = spec.planted_rect()?;
    let [h, w, c] = spec.shape;
    let n_male = libm::round(spec.n_subjects as f64 * spec.male_fraction) as usize;
    let mut rng = Prng::derive(seed, 31);
    let mut genders: Vec<Gender> = (0..spec.n_subjects).map(|i| if i < n_male { Gender::M } else { Gender::F }).collect();
    rng.shuffle(&mut genders);
    let mut by_gender = [
        stratum_labels(n_male, spec.ent_fraction, &mut rng).into_iter(),
        stratum_labels(spec.n_subjects - n_male, spec.ent_fraction, &mut rng).into_iter(),
    ];
    let width = format!("{}", spec.n_subjects - 1).len().max(5);
    let mut noise = Prng::derive(seed, 30);
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut features = Vec::with_capacity(spec.n_subjects);
    for (i, &gender) in genders.iter().enumerate() {
        let label = by_gender[usize::from(gender == Gender::F)].next().expect("stratum sizes match");
        let id = format!("syn{i:0width$}");
        let mut t = Tensor::from_fn(&[h, w, c], |_| (spec.noise * noise.normal()) as f32);
        if label == Label::Ent {
            for (row, col) in planted.cells() {
                let at = (row * w + col) * c;
                for v in &mut t.data_mut()[at..at + c] {
                    *v += spec.signal as f32;
                }
            }
        }
        subjects.push(SubjectRecord {
            feature_path: format!("features/{id}.fptn"),
            subject_id: id,
            label,
            gender,
            tags: Default::default(),
            regions: spec.regions.clone(),
        });
        features.push(t);
    }
    Ok(SynthData {
        dataset: Dataset::new(subjects, features)?,
        oracle: bayes_pair_accuracy(spec, seed)?,
    })
}

//! Pair generation, train/validation/test splitting and landmark masking.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Gender, Label, PairSample, Rect, SubjectRecord};
use crate::{Error, Prng, Real, Result, Tensor};

struct Stratum {
    ents: Vec<usize>,
    nons: Vec<usize>,
    used: BTreeSet<(usize, usize)>,
}

impl Stratum {
    fn capacity(&self) -> usize {
        self.ents.len() * self.nons.len()
    }

    fn remaining(&self) -> usize {
        self.capacity() - self.used.len()
    }

    /// Uniform draw among the not-yet-used (ENT, NON) combinations.
    fn draw(&mut self, rng: &mut Prng) -> (usize, usize) {
        let (ne, nn) = (self.ents.len(), self.nons.len());
        let pick = if self.used.len() * 2 < self.capacity() {
            loop {
                let c = (rng.below(ne), rng.below(nn));
                if !self.used.contains(&c) {
                    break c;
                }
            }
        } else {
            let mut k = rng.below(self.remaining());
            let mut found = None;
            'outer: for i in 0..ne {
                for j in 0..nn {
                    if !self.used.contains(&(i, j)) {
                        if k == 0 {
                            found = Some((i, j));
                            break 'outer;
                        }
                        k -= 1;
                    }
                }
            }
            found.expect("remaining() > 0")
        };
        self.used.insert(pick);
        (self.ents[pick.0], self.nons[pick.1])
    }
}

/// Default pair count: twice the smaller label count, summed over gender
/// strata, capped by the number of distinct pairs in each stratum.
pub fn default_pair_count(subjects: &[SubjectRecord]) -> usize {
    Gender::ALL
        .iter()
        .map(|&g| {
            let e = subjects.iter().filter(|s| s.gender == g && s.label == Label::Ent).count();
            let n = subjects.iter().filter(|s| s.gender == g && s.label == Label::Non).count();
            (2 * e.min(n)).min(e * n)
        })
        .sum()
}

/// Draws distinct same-gender ENT/NON pairs.
///
/// The stratum of each pair is chosen with probability proportional to its
/// remaining (ENT, NON) combinations and the ENT side is placed left or
/// right by a fair coin. An unordered pair is never emitted twice.
/// `genders` restricts the strata; each requested stratum must contain both
/// labels. `n_pairs = None` uses [`default_pair_count`].
pub fn generate_pairs(
    subjects: &[SubjectRecord],
    n_pairs: Option<usize>,
    genders: Option<&[Gender]>,
    seed: u64,
) -> Result<Vec<PairSample>> {
    let wanted: Vec<Gender> = match genders {
        Some(g) => g.to_vec(),
        None => Gender::ALL.to_vec(),
    };
    let mut strata: Vec<Stratum> = Vec::new();
    for &g in &wanted {
        let ents: Vec<usize> = (0..subjects.len())
            .filter(|&i| subjects[i].gender == g && subjects[i].label == Label::Ent)
            .collect();
        let nons: Vec<usize> = (0..subjects.len())
            .filter(|&i| subjects[i].gender == g && subjects[i].label == Label::Non)
            .collect();
        if genders.is_some() && (ents.is_empty() || nons.is_empty()) {
            return Err(Error::Infeasible(format!(
                "gender stratum {g} has {} ENT and {} NON subjects",
                ents.len(),
                nons.len()
            )));
        }
        strata.push(Stratum {
            ents,
            nons,
            used: BTreeSet::new(),
        });
    }
    let n_pairs = match n_pairs {
        Some(n) => n,
        None => {
            let restricted: Vec<SubjectRecord> = subjects.iter().filter(|s| wanted.contains(&s.gender)).cloned().collect();
            default_pair_count(&restricted)
        }
    };
    let capacity: usize = strata.iter().map(Stratum::capacity).sum();
    if capacity == 0 {
        return Err(Error::Infeasible("no gender stratum has both an ENT and a NON subject".into()));
    }
    if n_pairs > capacity {
        return Err(Error::Infeasible(format!(
            "{n_pairs} pairs requested but only {capacity} distinct same-gender ENT/NON pairs exist"
        )));
    }
    let mut rng = Prng::derive(seed, 10);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let total: usize = strata.iter().map(Stratum::remaining).sum();
        let mut k = rng.below(total);
        let stratum = strata
            .iter_mut()
            .find(|s| {
                if k < s.remaining() {
                    true
                } else {
                    k -= s.remaining();
                    false
                }
            })
            .expect("k < total");
        let (e, n) = stratum.draw(&mut rng);
        let (ent, non) = (subjects[e].subject_id.clone(), subjects[n].subject_id.clone());
        pairs.push(if rng.coin() {
            PairSample {
                left_id: ent,
                right_id: non,
                target: 0,
            }
        } else {
            PairSample {
                left_id: non,
                right_id: ent,
                target: 1,
            }
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Share of the training pool held out for validation.
    pub validation_fraction: f64,
    /// Keep every subject on one side of the train/test boundary.
    pub subject_disjoint: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            validation_fraction: 0.10,
            subject_disjoint: true,
            seed: 0,
        }
    }
}

impl SplitConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("train_fraction", self.train_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<PairSample>,
    pub validation: Vec<PairSample>,
    pub test: Vec<PairSample>,
    /// Pairs left out by a subject-disjoint split (crossing the boundary or
    /// trimmed to hit the requested fractions).
    pub dropped: usize,
}

impl Split {
    pub fn train_pool(&self) -> usize {
        self.train.len() + self.validation.len()
    }
}

fn round(x: f64) -> usize {
    libm::round(x) as usize
}

/// Splits pairs into train, validation and test sets.
///
/// With `subject_disjoint = false` the pairs themselves are shuffled and
/// cut. Otherwise subjects are moved to the test side in random order until
/// pairs with both members on the test side reach the test fraction of all
/// pairs that stay on one side; pairs that straddle the boundary are
/// dropped, as are surplus test pairs, so the retained pairs honour the
/// fractions within one pair.
pub fn split_pairs(pairs: &[PairSample], cfg: &SplitConfig) -> Result<Split> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut rng = Prng::derive(cfg.seed, 20);
    let test_fraction = 1.0 - cfg.train_fraction;
    let (mut pool, test, dropped) = if cfg.subject_disjoint {
        disjoint_sides(pairs, test_fraction, &mut rng)?
    } else {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut order);
        let n_test = round(pairs.len() as f64 * test_fraction);
        let test = order[..n_test].to_vec();
        let pool = order[n_test..].to_vec();
        (pool, test, 0)
    };
    if test.is_empty() || pool.is_empty() {
        return Err(Error::Infeasible(format!(
            "split leaves {} training and {} test pairs",
            pool.len(),
            test.len()
        )));
    }
    rng.shuffle(&mut pool);
    let n_val = round(pool.len() as f64 * cfg.validation_fraction);
    let take = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        validation: take(&pool[..n_val]),
        train: take(&pool[n_val..]),
        test: take(&test),
        dropped,
    })
}

fn disjoint_sides(pairs: &[PairSample], test_fraction: f64, rng: &mut Prng) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let mut incident: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.left_id == p.right_id {
            return Err(Error::InvalidData(format!("pair of {} with itself", p.left_id)));
        }
        incident.entry(p.left_id.as_str()).or_default().push(i);
        incident.entry(p.right_id.as_str()).or_default().push(i);
    }
    let mut order: Vec<&str> = incident.keys().copied().collect();
    rng.shuffle(&mut order);
    let mut on_test: BTreeSet<&str> = BTreeSet::new();
    let (mut n_test, mut n_train) = (0usize, pairs.len());
    for s in order {
        if n_test + n_train > 0 && n_test as f64 >= test_fraction * (n_test + n_train) as f64 {
            break;
        }
        on_test.insert(s);
        for &i in &incident[s] {
            let p = &pairs[i];
            let other = if p.left_id == s { p.right_id.as_str() } else { p.left_id.as_str() };
            if on_test.contains(other) {
                n_test += 1;
            } else {
                n_train -= 1;
            }
        }
    }
    let mut test = Vec::new();
    let mut pool = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        match (on_test.contains(p.left_id.as_str()), on_test.contains(p.right_id.as_str())) {
            (true, true) => test.push(i),
            (false, false) => pool.push(i),
            _ => {}
        }
    }
    if test.is_empty() || pool.is_empty() {
        return Err(Error::Infeasible(format!(
            "no subject-disjoint split: {} test-side and {} train-side pairs",
            test.len(),
            pool.len()
        )));
    }
    // Trim the test side so test / (train + test) rounds to the fraction.
    let keep = round(pool.len() as f64 * test_fraction / (1.0 - test_fraction)).clamp(1, test.len());
    rng.shuffle(&mut test);
    test.truncate(keep);
    test.sort_unstable();
    let dropped = pairs.len() - test.len() - pool.len();
    Ok((pool, test, dropped))
}

/// Keeps the feature map `[h, w, c]` inside the union of `regions` (all
/// channels) and zeroes everything else.
pub fn mask_landmarks<T: Real>(t: &Tensor<T>, regions: &[Rect]) -> Result<Tensor<T>> {
    let [h, w, c] = match *t.shape() {
        [h, w, c] => [h, w, c],
        _ => return Err(Error::InvalidShape(t.shape().to_vec())),
    };
    for r in regions {
        if !r.fits(h, w) {
            return Err(Error::InvalidData(format!("region {r} exceeds the {h}x{w} grid")));
        }
    }
    let mut out = Tensor::zeros(t.shape());
    for r in regions {
        for (row, col) in r.cells() {
            let at = (row * w + col) * c;
            out.data_mut()[at..at + c].copy_from_slice(&t.data()[at..at + c]);
        }
    }
    Ok(out)
}

/// Subject ids referenced by a set of pairs.
pub fn subject_ids(pairs: &[PairSample]) -> BTreeSet<String> {
    pairs.iter().flat_map(|p| [p.left_id.clone(), p.right_id.clone()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn subj(id: usize, label: Label, gender: Gender) -> SubjectRecord {
        SubjectRecord {
            subject_id: format!("s{id:04}"),
            label,
            gender,
            tags: BTreeSet::new(),
            feature_path: String::new(),
            regions: Vec::new(),
        }
    }

    fn population(n: usize, seed: u64) -> Vec<SubjectRecord> {
        let mut rng = Prng::new(seed);
        (0..n)
            .map(|i| {
                let label = if rng.uniform() < 0.6 { Label::Ent } else { Label::Non };
                let gender = if rng.uniform() < 0.8 { Gender::M } else { Gender::F };
                subj(i, label, gender)
            })
            .collect()
    }

    fn check_invariants(subjects: &[SubjectRecord], pairs: &[PairSample]) {
        let by_id: BTreeMap<&str, &SubjectRecord> = subjects.iter().map(|s| (s.subject_id.as_str(), s)).collect();
        let mut seen = BTreeSet::new();
        for p in pairs {
            let (l, r) = (by_id[p.left_id.as_str()], by_id[p.right_id.as_str()]);
            assert_ne!(l.label, r.label);
            assert_eq!(l.gender, r.gender);
            assert_eq!(p.target == 0, l.label == Label::Ent);
            let key = if p.left_id < p.right_id {
                (p.left_id.clone(), p.right_id.clone())
            } else {
                (p.right_id.clone(), p.left_id.clone())
            };
            assert!(seen.insert(key), "duplicate pair");
        }
    }

    #[test]
    fn forced_composition() {
        let s = vec![subj(0, Label::Ent, Gender::M), subj(1, Label::Non, Gender::M)];
        let p = generate_pairs(&s, Some(1), None, 4).unwrap();
        assert_eq!(p.len(), 1);
        let ids: BTreeSet<_> = [p[0].left_id.clone(), p[0].right_id.clone()].into();
        assert_eq!(ids, ["s0000".to_string(), "s0001".to_string()].into());
        assert!(generate_pairs(&s, Some(2), None, 4).is_err());
    }

    #[test]
    fn missing_stratum_label_is_infeasible() {
        let s = vec![
            subj(0, Label::Ent, Gender::M),
            subj(1, Label::Non, Gender::M),
            subj(2, Label::Ent, Gender::F),
        ];
        assert!(matches!(
            generate_pairs(&s, Some(1), Some(&[Gender::M, Gender::F]), 0),
            Err(Error::Infeasible(_))
        ));
        assert_eq!(generate_pairs(&s, None, None, 0).unwrap().len(), 1);
    }

    #[test]
    fn orientation_is_balanced() {
        let s = population(600, 1);
        let p = generate_pairs(&s, Some(10_000), None, 2).unwrap();
        let ones = p.iter().filter(|p| p.target == 1).count() as f64 / p.len() as f64;
        assert!((0.48..=0.52).contains(&ones), "{ones}");
        check_invariants(&s, &p);
    }

    #[test]
    fn exhausts_small_strata_without_duplicates() {
        let mut s: Vec<_> = (0..4).map(|i| subj(i, Label::Ent, Gender::F)).collect();
        s.extend((4..7).map(|i| subj(i, Label::Non, Gender::F)));
        let p = generate_pairs(&s, Some(12), None, 9).unwrap();
        check_invariants(&s, &p);
        assert_eq!(p.len(), 12);
    }

    #[test]
    fn pair_level_split_fractions() {
        let s = population(200, 3);
        let pairs = generate_pairs(&s, Some(100), None, 3).unwrap();
        let cfg = SplitConfig {
            subject_disjoint: false,
            seed: 5,
            ..SplitConfig::default()
        };
        let split = split_pairs(&pairs, &cfg).unwrap();
        assert_eq!(split.test.len(), 25);
        assert_eq!(split.train_pool(), 75);
        assert_eq!(split.validation.len(), 8);
        assert_eq!(split.train.len(), 67);
        assert_eq!(split_pairs(&pairs, &cfg).unwrap(), split);
    }

    #[test]
    fn shared_subject_makes_disjoint_split_infeasible() {
        let mut s = vec![subj(0, Label::Ent, Gender::M)];
        s.extend((1..30).map(|i| subj(i, Label::Non, Gender::M)));
        let pairs = generate_pairs(&s, Some(29), None, 1).unwrap();
        let err = split_pairs(&pairs, &SplitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err:?}");
    }

    #[test]
    fn disjoint_split_has_no_leakage() {
        let s = population(1000, 7);
        let pairs = generate_pairs(&s, None, None, 7).unwrap();
        let split = split_pairs(&pairs, &SplitConfig::default()).unwrap();
        let mut train_ids = subject_ids(&split.train);
        train_ids.extend(subject_ids(&split.validation));
        assert!(train_ids.is_disjoint(&subject_ids(&split.test)));
        let kept = split.train_pool() + split.test.len();
        assert_eq!(kept + split.dropped, pairs.len());
        let expect = kept as f64 * 0.25;
        assert!((split.test.len() as f64 - expect).abs() <= 1.0, "{} vs {expect}", split.test.len());
        let expect_val = split.train_pool() as f64 * 0.1;
        assert!((split.validation.len() as f64 - expect_val).abs() <= 1.0);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_pairs(&[], &SplitConfig::default()).is_err());
        let p = vec![PairSample {
            left_id: "a".into(),
            right_id: "b".into(),
            target: 0,
        }];
        let cfg = SplitConfig {
            train_fraction: 1.0,
            ..SplitConfig::default()
        };
        assert!(matches!(split_pairs(&p, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn masking_cases() {
        let ones = Tensor::<f32>::full(&[14, 14, 3], 1.0);
        let full = Rect::new(0, 14, 0, 14).unwrap();
        assert_eq!(mask_landmarks(&ones, &[full]).unwrap(), ones);
        assert_eq!(mask_landmarks(&ones, &[]).unwrap().sum(), 0.0);
        let nose = Rect::new(4, 9, 5, 10).unwrap();
        assert_eq!(mask_landmarks(&ones, &[nose]).unwrap().sum(), 25.0 * 3.0);
        assert!(mask_landmarks(&ones, &[Rect::new(10, 15, 0, 2).unwrap()]).is_err());
    }

    proptest! {
        #[test]
        fn generated_pairs_satisfy_invariants(n in 4usize..120, seed in 0u64..1000, frac in 0.1f64..1.0) {
            let subjects = population(n, seed);
            match generate_pairs(&subjects, None, None, seed) {
                Ok(pairs) => {
                    check_invariants(&subjects, &pairs);
                    let again = generate_pairs(&subjects, None, None, seed).unwrap();
                    prop_assert_eq!(&pairs, &again);
                    let k = ((pairs.len() as f64) * frac) as usize;
                    check_invariants(&subjects, &generate_pairs(&subjects, Some(k), None, seed ^ 1).unwrap());
                }
                Err(e) => prop_assert!(matches!(e, Error::Infeasible(_))),
            }
        }

        #[test]
        fn masks_idempotent_and_complementary(seed in 0u64..500, r0 in 0usize..6, c0 in 0usize..6, dr in 1usize..4, dc in 1usize..4) {
            let mut rng = Prng::new(seed);
            let t = Tensor::<f64>::from_fn(&[9, 9, 2], |_| rng.normal());
            let rect = Rect::new(r0, r0 + dr, c0, c0 + dc).unwrap();
            let once = mask_landmarks(&t, &[rect]).unwrap();
            prop_assert_eq!(&mask_landmarks(&once, &[rect]).unwrap(), &once);
            // Complement: all rows above, below, and the side strips.
            let mut rest = Vec::new();
            if rect.r0 > 0 { rest.push(Rect::new(0, rect.r0, 0, 9).unwrap()); }
            if rect.r1 < 9 { rest.push(Rect::new(rect.r1, 9, 0, 9).unwrap()); }
            if rect.c0 > 0 { rest.push(Rect::new(rect.r0, rect.r1, 0, rect.c0).unwrap()); }
            if rect.c1 < 9 { rest.push(Rect::new(rect.r0, rect.r1, rect.c1, 9).unwrap()); }
            let other = mask_landmarks(&t, &rest).unwrap();
            for ((a, b), x) in once.data().iter().zip(other.data()).zip(t.data()) {
                prop_assert_eq!(a + b, *x);
            }
        }
    }
}

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Prng, Result};

const MAX_ITERS: usize = 100;

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
}

/// Lloyd's 2-means from `restarts` random pairs of distinct starting
/// points; keeps the assignment with the lowest within-cluster sum of
/// squares (earliest restart on ties).
pub fn kmeans2(points: &[[f64; 2]], restarts: usize, seed: u64) -> Result<Vec<usize>> {
    if points.len() < 2 {
        return Err(Error::InvalidData("2-means needs at least two points".into()));
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("at least one restart is required".into()));
    }
    let mut rng = Prng::derive(seed, 50);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let a = rng.below(points.len());
        let mut b = rng.below(points.len() - 1);
        if b >= a {
            b += 1;
        }
        let mut centers = [points[a], points[b]];
        let mut assign = vec![0usize; points.len()];
        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for (p, slot) in points.iter().zip(&mut assign) {
                let k = usize::from(dist2(*p, centers[1]) < dist2(*p, centers[0]));
                changed |= *slot != k;
                *slot = k;
            }
            for (k, center) in centers.iter_mut().enumerate() {
                let members: Vec<&[f64; 2]> = points.iter().zip(&assign).filter(|(_, &s)| s == k).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    let m = members.len() as f64;
                    *center = [members.iter().map(|p| p[0]).sum::<f64>() / m, members.iter().map(|p| p[1]).sum::<f64>() / m];
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &k)| dist2(*p, centers[k])).sum();
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.expect("restarts > 0").1)
}

/// Fraction of points whose label is the majority label of their cluster.
pub fn purity<L: Ord + Copy>(assign: &[usize], labels: &[L]) -> Result<f64> {
    if assign.is_empty() || assign.len() != labels.len() {
        return Err(Error::InvalidData("purity needs one label per assigned point".into()));
    }
    let mut counts: BTreeMap<usize, BTreeMap<L, usize>> = BTreeMap::new();
    for (&k, &l) in assign.iter().zip(labels) {
        *counts.entry(k).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / assign.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut rng = Prng::new(1);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let cx = if i % 2 == 0 { -5.0 } else { 5.0 };
            pts.push([cx + rng.normal(), rng.normal()]);
            labels.push(i % 2);
        }
        let a = kmeans2(&pts, 10, 3).unwrap();
        assert_eq!(purity(&a, &labels).unwrap(), 1.0);
        assert_eq!(a, kmeans2(&pts, 10, 3).unwrap());
    }

    #[test]
    fn purity_arithmetic() {
        assert_eq!(purity(&[0, 0, 1, 1], &['a', 'b', 'b', 'b']).unwrap(), 0.75);
        assert_eq!(purity(&[0, 0, 0, 0], &[1, 1, 2, 2]).unwrap(), 0.5);
        assert!(purity::<u8>(&[], &[]).is_err());
        assert!(kmeans2(&[[0.0, 0.0]], 10, 0).is_err());
    }
}

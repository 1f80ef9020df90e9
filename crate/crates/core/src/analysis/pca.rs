use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2d {
    /// Projection of each centered vector onto the two components.
    pub coords: Vec<[f64; 2]>,
    /// Orthonormal principal directions, first nonzero loading positive.
    pub components: [Vec<f64>; 2],
    /// Share of total variance along each component.
    pub explained: [f64; 2],
}

/// Eigen-decomposition of a symmetric matrix (row-major `n × n`) by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the
/// matching unit eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::ShapeMismatch {
            expected: vec![n, n],
            got: vec![a.len()],
        });
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    Ok((values, vectors))
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm <= 1e-300 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn fix_sign(v: &mut [f64]) {
    let tol = 1e-12 * v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(&first) = v.iter().find(|x| x.abs() > tol) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// A unit vector orthogonal to `u`, from Gram–Schmidt on the standard basis.
fn orthogonal_to(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut best = vec![0.0; d];
    let mut best_norm = -1.0;
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let dot = u[i];
        e.iter_mut().zip(u).for_each(|(x, &ui)| *x -= dot * ui);
        let n: f64 = e.iter().map(|x| x * x).sum();
        if n > best_norm {
            best_norm = n;
            best = e;
        }
    }
    normalize(&mut best);
    best
}

/// Two-component PCA. Eigenvectors come from the `d × d` covariance when
/// `d ≤ n` and from the `n × n` Gram matrix of centered rows otherwise.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Pca2d> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::InvalidData(format!("PCA needs at least 3 vectors, got {n}")));
    }
    let d = vectors[0].len();
    if d < 2 {
        return Err(Error::InvalidData(format!("PCA needs dimension >= 2, got {d}")));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidData("vectors differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let total: f64 = x.iter().flatten().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::Numerical("all vectors are identical".into()));
    }
    let (values, mut comps) = if d <= n {
        let mut cov = vec![0.0; d * d];
        for row in &x {
            for i in 0..d {
                if row[i] == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[i * d + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        let (vals, vecs) = symmetric_eigen(&cov, d)?;
        (vals[..2].to_vec(), vecs[..2].to_vec())
    } else {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let (vals, vecs) = symmetric_eigen(&gram, n)?;
        let lift = |u: &[f64]| -> Vec<f64> {
            let mut c = vec![0.0; d];
            for (row, &w) in x.iter().zip(u) {
                c.iter_mut().zip(row).for_each(|(a, &b)| *a += w * b);
            }
            c
        };
        let mut c1 = lift(&vecs[0]);
        normalize(&mut c1);
        let mut c2 = lift(&vecs[1]);
        if vals[1] <= 1e-12 * vals[0] || !normalize(&mut c2) {
            c2 = orthogonal_to(&c1);
        }
        (vals[..2].to_vec(), vec![c1, c2])
    };
    for c in &mut comps {
        fix_sign(c);
    }
    let coords = x
        .iter()
        .map(|row| {
            let p = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect();
    let explained = [(values[0] / total).clamp(0.0, 1.0), (values[1] / total).clamp(0.0, 1.0)];
    let mut it = comps.into_iter();
    Ok(Pca2d {
        coords,
        components: [it.next().expect("two"), it.next().expect("two")],
        explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Prng;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn random(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Prng::new(seed);
        (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
    }

    /// Independent oracle: nalgebra's symmetric eigensolver on the
    /// covariance matrix.
    fn oracle(vectors: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = vectors.len();
        let d = vectors[0].len();
        let m = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
        let mean = m.row_mean();
        let c = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let cov = c.transpose() * &c;
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = idx.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
        (vals, vecs)
    }

    fn aligned(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        a.iter().zip(b).map(|(x, y)| (x - dot.signum() * y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn collinear_points() {
        let p = pca_2d(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(p.components[0][0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(p.components[0][1], h, epsilon = 1e-12);
        assert_abs_diff_eq!(p.explained[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.explained[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_dense_eigensolver() {
        for (n, d, seed) in [(3, 5, 1), (20, 6, 2), (8, 30, 3), (50, 3, 4)] {
            let v = random(n, d, seed);
            let p = pca_2d(&v).unwrap();
            let (vals, vecs) = oracle(&v);
            let total: f64 = vals.iter().sum();
            for k in 0..2 {
                assert!(aligned(&p.components[k], &vecs[k]) < 1e-8, "n={n} d={d} k={k}");
                assert_abs_diff_eq!(p.explained[k], vals[k] / total, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn components_are_orthonormal_with_sign_convention() {
        for (n, d, seed) in [(10, 4, 5), (6, 40, 6), (3, 5, 7)] {
            let p = pca_2d(&random(n, d, seed)).unwrap();
            let [a, b] = &p.components;
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
            assert_abs_diff_eq!(dot(a, a), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(dot(b, b), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(dot(a, b), 0.0, epsilon = 1e-10);
            assert!(a.iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
            assert!(p.explained[0] >= p.explained[1]);
            assert!(p.explained[0] + p.explained[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rank_two_input_is_fully_explained() {
        let mut rng = Prng::new(8);
        let v: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                vec![a, b, a + b, a - 2.0 * b, 0.5 * a]
            })
            .collect();
        let p = pca_2d(&v).unwrap();
        assert_abs_diff_eq!(p.explained[0] + p.explained[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pca_2d(&vec![vec![1.0, 2.0]; 5]).is_err());
        assert!(pca_2d(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
        assert!(pca_2d(&[vec![1.0], vec![2.0], vec![3.0]]).is_err());
    }
}

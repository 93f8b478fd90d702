//! Principal component analysis over flattened pixel features.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x D`, row-orthonormal.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `components * (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension { expected: self.mean.len(), got: x.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits PCA keeping the fewest components whose cumulative explained
/// variance reaches `var_target`.
///
/// With fewer samples than dimensions the eigenproblem is solved on the
/// `n x n` Gram matrix of the centered data and mapped back, otherwise on the
/// `D x D` scatter matrix. Both yield the top right-singular vectors of the
/// centered data matrix.
pub fn fit_pca(data: &[Vec<f64>], var_target: f64) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    if !(var_target > 0.0 && var_target <= 1.0) {
        return Err(Error::invalid(format!("variance target {var_target} outside (0, 1]")));
    }
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();

    // (eigenvalue of X^T X, unit component) pairs, descending.
    let mut pairs: Vec<(f64, Vec<f64>)> = if n <= d {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if j < i { 0.0 } else { dot(&centered[i], &centered[j]) }).collect())
            .collect();
        let gram = DMatrix::from_fn(n, n, |i, j| if j >= i { rows[i][j] } else { rows[j][i] });
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|c| {
                let lambda = eig.eigenvalues[c];
                let u = eig.eigenvectors.column(c);
                let mut v = vec![0.0; d];
                for (i, row) in centered.iter().enumerate() {
                    let w = u[i];
                    for (vj, xj) in v.iter_mut().zip(row) {
                        *vj += w * xj;
                    }
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                (lambda, v)
            })
            .collect()
    } else {
        let rows: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|a| (0..d).map(|b| centered.iter().map(|r| r[a] * r[b]).sum()).collect())
            .collect();
        let scatter = DMatrix::from_fn(d, d, |a, b| rows[a][b]);
        let eig = SymmetricEigen::new(scatter);
        (0..d).map(|c| (eig.eigenvalues[c], eig.eigenvectors.column(c).iter().copied().collect())).collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total: f64 = centered.iter().map(|r| dot(r, r)).sum();
    if total <= 0.0 || pairs.is_empty() || pairs[0].0 <= total * 1e-12 {
        return Err(Error::invalid("data has zero variance; no principal components"));
    }
    let mut cumulative = 0.0;
    let mut k = 0;
    for (lambda, _) in &pairs {
        if lambda.max(0.0) <= total * 1e-12 {
            break;
        }
        cumulative += lambda;
        k += 1;
        if cumulative / total >= var_target - 1e-12 {
            break;
        }
    }
    let denom = (n - 1) as f64;
    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for (lambda, mut v) in pairs.into_iter().take(k) {
        // Deterministic sign: largest-magnitude coordinate positive.
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(lambda / denom);
        explained_ratio.push(lambda / total);
    }
    Ok(PcaModel { mean, components, explained_variance, explained_ratio, total_variance: total / denom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rank_one_line() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| {
            let t = i as f64 - 3.0;
            vec![1.0 + 2.0 * t, -1.0 + t, 0.5 - 3.0 * t]
        }).collect();
        let m = fit_pca(&data, 0.95).unwrap();
        assert_eq!(m.n_components(), 1);
        assert!((m.explained_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_needs_two() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        assert_eq!(fit_pca(&data, 0.95).unwrap().n_components(), 2);
    }

    #[test]
    fn zero_variance_errors() {
        assert!(fit_pca(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0.95).is_err());
        assert!(fit_pca(&[vec![1.0, 2.0]], 0.95).is_err());
    }

    #[test]
    fn projections() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let m = fit_pca(&data, 0.999).unwrap();
        assert!(m.project(&m.mean).unwrap().iter().all(|v| v.abs() < 1e-12));
        for i in 0..m.n_components() {
            let x: Vec<f64> = m.mean.iter().zip(&m.components[i]).map(|(a, b)| a + b).collect();
            let p = m.project(&x).unwrap();
            for (j, v) in p.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = m.project(&x).unwrap();
        for (i, c) in m.components.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..5 {
                acc += c[j] * (x[j] - m.mean[j]);
            }
            assert!((p[i] - acc).abs() < 1e-12);
        }
        assert!(matches!(m.project(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn both_routes_agree() {
        // n > D exercises the scatter route, n < D the Gram route.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let wide: Vec<Vec<f64>> = (0..6).map(|_| (0..9).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let tall: Vec<Vec<f64>> = wide.iter().map(|r| r[..4].to_vec()).chain(wide.iter().map(|r| r[4..8].to_vec())).collect();
        for data in [&wide, &tall] {
            let m = fit_pca(data, 0.95).unwrap();
            for a in 0..m.n_components() {
                for b in 0..m.n_components() {
                    let d = dot(&m.components[a], &m.components[b]);
                    assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
                }
            }
            let cum: f64 = m.explained_ratio.iter().sum();
            assert!(cum >= 0.95 - 1e-9);
            assert!(cum - m.explained_ratio.last().unwrap() < 0.95);
        }
    }

    /// Cyclic Jacobi eigen-decomposition of a small symmetric matrix.
    fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[i][i]).collect();
        let vecs = (0..n).map(|c| (0..n).map(|r| v[r][c]).collect()).collect();
        (vals, vecs)
    }

    #[test]
    fn matches_jacobi_covariance_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let scales = [3.0, 2.0, 1.2, 0.6, 0.3, 0.1];
        for n in [4usize, 12, 40] {
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal) + 0.5).collect())
                .collect();
            let m = fit_pca(&data, 0.95).unwrap();
            let d = scales.len();
            let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
            let cov: Vec<Vec<f64>> = (0..d)
                .map(|a| (0..d).map(|b| data.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64).collect())
                .collect();
            let (vals, vecs) = jacobi(cov);
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            let total: f64 = vals.iter().sum();
            let mut cum = 0.0;
            let mut k = 0;
            for &i in &order {
                cum += vals[i];
                k += 1;
                if cum / total >= 0.95 {
                    break;
                }
            }
            assert_eq!(m.n_components(), k, "n={n}");
            for (c, &i) in order.iter().take(k).enumerate() {
                assert!((m.explained_variance[c] - vals[i]).abs() < 1e-8 * vals[order[0]]);
            }
            // Subspace residual: oracle vectors lie in the fitted span.
            for &i in order.iter().take(k) {
                let mut r = vecs[i].clone();
                for comp in &m.components {
                    let p = dot(comp, &vecs[i]);
                    for j in 0..d {
                        r[j] -= p * comp[j];
                    }
                }
                assert!(dot(&r, &r).sqrt() < 1e-6, "n={n}");
            }
            for comp in &m.components {
                let pivot = comp.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
                assert!(pivot > 0.0);
            }
        }
    }
}

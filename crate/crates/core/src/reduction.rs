//! Preprocessing reductions: splitting off groups of means that are
//! astronomically far apart, and projecting to the span of the means.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::dist;
use crate::pipeline::sorted_eigen;

/// The split distance is `scale·((d + k)/w_min)²`.
pub const SPLIT_SCALE: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub indices: Vec<usize>,
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

fn mean_of(samples: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let d = samples[idx[0]].len();
    let mut m = vec![0.0; d];
    for &i in idx {
        m.iter_mut().zip(&samples[i]).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= idx.len() as f64);
    m
}

/// A pair in `idx` at distance ≥ `threshold`, if one exists.
fn far_pair(samples: &[Vec<f64>], idx: &[usize], threshold: f64) -> Option<(usize, usize)> {
    let farthest = |from: usize| {
        idx.iter().copied().map(|j| (j, dist(&samples[from], &samples[j]))).fold((from, 0.0), |b, c| if c.1 > b.1 { c } else { b })
    };
    let (b, _) = farthest(idx[0]);
    let (c, dbc) = farthest(b);
    if dbc >= threshold {
        return Some((b, c));
    }
    // The diameter is at most 2·d(b, c); only then can a pair still exist.
    if 2.0 * dbc < threshold {
        return None;
    }
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            if dist(&samples[i], &samples[j]) >= threshold {
                return Some((i, j));
            }
        }
    }
    None
}

/// Recursively splits the sample set by hyperplanes through the middle of the
/// widest empty interval between a far-apart pair, until no pair is at
/// distance ≥ scale·((d + k)/w_min)²; each group is recentered by its mean.
pub fn reduce_bounded_means(samples: &[Vec<f64>], k: usize, w_min: f64, scale: f64) -> Result<(Vec<SampleGroup>, Vec<SplitPlane>)> {
    if samples.is_empty() {
        return Err(Error::EmptySample("nothing to split".into()));
    }
    let d = samples[0].len();
    let threshold = scale * ((d + k) as f64 / w_min).powi(2);
    let mut done = Vec::new();
    let mut planes = Vec::new();
    let mut todo: Vec<Vec<usize>> = vec![(0..samples.len()).collect()];
    while let Some(idx) = todo.pop() {
        let Some((a, b)) = far_pair(samples, &idx, threshold) else {
            done.push(idx);
            continue;
        };
        let len = dist(&samples[a], &samples[b]);
        let v: Vec<f64> = samples[b].iter().zip(&samples[a]).map(|(x, y)| (x - y) / len).collect();
        let proj = |i: usize| samples[i].iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
        let (lo, hi) = (proj(a), proj(b));
        let mut ps: Vec<f64> = idx.iter().map(|&i| proj(i)).filter(|p| *p >= lo && *p <= hi).collect();
        ps.sort_by(f64::total_cmp);
        let (gap_at, _) = ps.windows(2).map(|w| ((w[0] + w[1]) / 2.0, w[1] - w[0])).fold((lo, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| proj(i) < gap_at);
        planes.push(SplitPlane { normal: v, offset: gap_at });
        todo.push(right);
        todo.push(left);
    }
    done.sort();
    let groups = done.into_iter().map(|indices| SampleGroup { center: mean_of(samples, &indices), indices }).collect();
    Ok((groups, planes))
}

/// Orthonormal basis (rows) of the span kept by the dimension reduction, plus
/// the center subtracted before projecting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReduction {
    pub center: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl DimensionReduction {
    pub fn identity(d: usize) -> Self {
        let rows = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { center: vec![0.0; d], rows }
    }

    /// Top-k eigenvectors of `signal` = Σ_M − Σ_D (second moments about
    /// `center`).
    pub fn from_moments(center: Vec<f64>, signal: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (_, vecs) = sorted_by_value(signal)?;
        Ok(Self { center, rows: vecs.into_iter().take(k).collect() })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().zip(x).zip(&self.center).map(|((a, b), c)| a * (b - c)).sum()).collect()
    }

    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.center.clone();
        for (r, &c) in self.rows.iter().zip(y) {
            x.iter_mut().zip(r).for_each(|(a, b)| *a += c * b);
        }
        x
    }

    pub fn out_dim(&self) -> usize {
        self.rows.len()
    }
}

/// Eigenpairs in decreasing (signed) eigenvalue order; principal components
/// of a noisy PSD estimate.
fn sorted_by_value(m: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (vals, vecs) = sorted_eigen(m)?;
    let mut pairs: Vec<(f64, Vec<f64>)> = vals.into_iter().zip(vecs).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(pairs.into_iter().unzip())
}

/// Projects samples onto the top-k principal components of Σ_M − Σ_D, where
/// Σ_M is the empirical covariance of the samples and `base_cov` estimates
/// the base covariance. With d ≤ k the reduction is the identity.
pub fn reduce_dimension(samples: &[Vec<f64>], base_cov: &DMatrix<f64>, k: usize) -> Result<(Vec<Vec<f64>>, DimensionReduction)> {
    if samples.is_empty() {
        return Err(Error::EmptySample("nothing to project".into()));
    }
    let d = samples[0].len();
    if base_cov.nrows() != d || base_cov.ncols() != d {
        return Err(Error::Shape(format!("base covariance is {}×{}, samples have dimension {d}", base_cov.nrows(), base_cov.ncols())));
    }
    if d <= k {
        return Ok((samples.to_vec(), DimensionReduction::identity(d)));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    let center = mean_of(samples, &all);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in samples {
        let c = nalgebra::DVector::from_iterator(d, x.iter().zip(&center).map(|(a, b)| a - b));
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= samples.len() as f64;
    let red = DimensionReduction::from_moments(center, &(cov - base_cov), k)?;
    let projected = samples.iter().map(|x| red.project(x)).collect();
    Ok((projected, red))
}

/// Empirical covariance of a sample set.
pub fn covariance(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let d = samples[0].len();
    let all: Vec<usize> = (0..samples.len()).collect();
    let center = mean_of(samples, &all);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in samples {
        let c = nalgebra::DVector::from_iterator(d, x.iter().zip(&center).map(|(a, b)| a - b));
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseDist;
    use crate::mixture::{sample_stream, MixtureSpec};

    #[test]
    fn small_ball_is_one_group() {
        let spec = MixtureSpec::uniform(vec![vec![5.0, 5.0]], BaseDist::Gaussian).unwrap();
        let s: Vec<Vec<f64>> = sample_stream(&spec, 1).take(500).map(|x| x.x).collect();
        let (groups, planes) = reduce_bounded_means(&s, 1, 1.0, SPLIT_SCALE).unwrap();
        assert_eq!(groups.len(), 1);
        assert!(planes.is_empty());
        assert!((groups[0].center[0] - 5.0).abs() < 0.2);
    }

    #[test]
    fn far_clusters_split_cleanly() {
        let spec = MixtureSpec::uniform(vec![vec![0.0, 0.0], vec![1e7, 0.0]], BaseDist::Gaussian).unwrap();
        let data: Vec<_> = sample_stream(&spec, 2).take(1000).collect();
        let s: Vec<Vec<f64>> = data.iter().map(|x| x.x.clone()).collect();
        let (groups, planes) = reduce_bounded_means(&s, 2, 0.5, 1e3).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(planes.len(), 1);
        for g in &groups {
            let l = data[g.indices[0]].label;
            assert!(g.indices.iter().all(|&i| data[i].label == l));
        }
        let off = planes[0].offset.abs();
        assert!(off > 1e5 && off < 1e7 - 1e5);
    }

    #[test]
    fn exact_covariance_projection_preserves_distances() {
        let means = vec![vec![1.0, 2.0, 0.0, 0.0, 0.0], vec![-3.0, 0.5, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.0]];
        let spec = MixtureSpec::uniform(means.clone(), BaseDist::Gaussian).unwrap();
        let center: Vec<f64> = (0..5).map(|c| means.iter().map(|m| m[c]).sum::<f64>() / 3.0).collect();
        let mut signal = DMatrix::zeros(5, 5);
        for (w, m) in spec.weights.iter().zip(&means) {
            let v = nalgebra::DVector::from_iterator(5, m.iter().zip(&center).map(|(a, b)| a - b));
            signal.ger(*w, &v, &v, 1.0);
        }
        let red = DimensionReduction::from_moments(center, &signal, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = dist(&red.project(&means[i]), &red.project(&means[j]));
                assert!((a - dist(&means[i], &means[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identity_when_dimension_fits() {
        let s = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let (p, red) = reduce_dimension(&s, &DMatrix::identity(2, 2), 2).unwrap();
        assert_eq!(p, s);
        assert_eq!(red, DimensionReduction::identity(2));
    }
}

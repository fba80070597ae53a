//! Scoring learned means against ground truth, plus a PCA + k-means baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::dist;
use crate::rng::Rng;

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials). Returns `assign[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `pairs[i] = (true index, learned index)`; unmatched sides are absent.
    pub pairs: Vec<(usize, usize)>,
    pub mean_errors: Vec<f64>,
    pub max_mean_error: f64,
    pub max_weight_error: Option<f64>,
    pub missing: usize,
    pub extra: usize,
}

/// Matches learned means to true means minimizing the summed squared
/// distance. With unequal counts the square is padded with a large cost and
/// padded pairs are dropped; any missing true mean sets the max error to ∞.
pub fn match_means(truth: &[Vec<f64>], learned: &[Vec<f64>], true_w: Option<&[f64]>, learned_w: Option<&[f64]>) -> MatchReport {
    let n = truth.len().max(learned.len());
    let big = 1e300;
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i < truth.len() && j < learned.len() { dist(&truth[i], &learned[j]).powi(2).min(1e299) } else { big }).collect())
        .collect();
    let assign = hungarian(&cost);
    let pairs: Vec<(usize, usize)> = assign.iter().enumerate().filter(|&(i, &j)| i < truth.len() && j < learned.len()).map(|(i, &j)| (i, j)).collect();
    let mean_errors: Vec<f64> = pairs.iter().map(|&(i, j)| dist(&truth[i], &learned[j])).collect();
    let missing = truth.len() - pairs.len();
    let max_mean_error = if missing > 0 { f64::INFINITY } else { mean_errors.iter().copied().fold(0.0, f64::max) };
    let max_weight_error = match (true_w, learned_w) {
        (Some(a), Some(b)) if missing == 0 => Some(pairs.iter().map(|&(i, j)| (a[i] - b[j]).abs()).fold(0.0, f64::max)),
        _ => None,
    };
    MatchReport { pairs, mean_errors, max_mean_error, max_weight_error, missing, extra: learned.len() - (truth.len() - missing) }
}

/// Lloyd's k-means with k-means++ seeding; returns the centers.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    use rand::Rng as _;
    if points.len() < k || k == 0 {
        return Err(Error::EmptySample(format!("k-means with k = {k} on {} points", points.len())));
    }
    let d = points[0].len();
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist(p, &centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut r = rng.gen::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        centers.push(points[pick].clone());
        let c = centers.last().unwrap();
        d2.iter_mut().zip(points).for_each(|(a, p)| *a = a.min(dist(p, c).powi(2)));
    }
    let nearest = |p: &[f64], cs: &[Vec<f64>]| (0..cs.len()).min_by(|&a, &b| dist(p, &cs[a]).total_cmp(&dist(p, &cs[b]))).unwrap();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let j = nearest(p, &centers);
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let mut moved = false;
        for j in 0..k {
            if counts[j] > 0 {
                let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                moved |= dist(&c, &centers[j]) > 1e-12;
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.len()])
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(n in 1usize..6, vals in proptest::collection::vec(0.0f64..10.0, 36)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| vals[i * 6..i * 6 + n].to_vec()).collect();
            let a = hungarian(&cost);
            let mut seen = a.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert!((total - brute(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn matching_handles_permutation_and_missing() {
        let truth = vec![vec![0.0], vec![10.0]];
        let r = match_means(&truth, &[vec![10.1], vec![-0.1]], Some(&[0.5, 0.5]), Some(&[0.4, 0.6]));
        assert_eq!(r.pairs, vec![(0, 1), (1, 0)]);
        assert!((r.max_mean_error - 0.1).abs() < 1e-12);
        assert!((r.max_weight_error.unwrap() - 0.1).abs() < 1e-12);
        let r = match_means(&truth, &[vec![0.0]], None, None);
        assert_eq!(r.missing, 1);
        assert!(r.max_mean_error.is_infinite());
    }
}

use std::sync::Arc;

use moment_cluster::base::BaseDist;
use moment_cluster::eval::{hungarian, match_means};
use moment_cluster::mixture::{MixtureSampler, MixtureSpec};
use moment_cluster::pipeline::{iterative_projection, MomentSource};
use moment_cluster::poincare::{assign_sample, LearnParams};
use moment_cluster::poly::{adjusted_poly_recursive, base_moments, hermite_univariate, r_poly_subset_terms, r_poly_terms};
use moment_cluster::projection::random_chain;
use moment_cluster::reduction::covariance;
use moment_cluster::rng::{keyed, Stream};
use moment_cluster::sampler::{draw_many, draw_many_labeled, BaseSampler, DifferenceSampler, SharedSampler};
use proptest::prelude::*;

fn digits(mut flat: usize, d: usize, t: usize) -> Vec<usize> {
    let mut out = vec![0; t];
    for slot in out.iter_mut().rev() {
        *slot = flat % d;
        flat /= d;
    }
    out
}

#[test]
fn derivative_recursion() {
    // ∂P_t/∂x_q at index i equals the sum of P_{t−1} over the slots holding q
    for base in [BaseDist::Gaussian, BaseDist::Laplace, BaseDist::UniformCube] {
        let (t, d, h) = (4, 2, 1e-5);
        let bm = base_moments(base, t, d).unwrap();
        let x = vec![0.7, -1.3];
        let lower = adjusted_poly_recursive(&x, t - 1, &bm).unwrap();
        for q in 0..d {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[q] += h;
            xm[q] -= h;
            let (pp, pm) = (adjusted_poly_recursive(&xp, t, &bm).unwrap(), adjusted_poly_recursive(&xm, t, &bm).unwrap());
            for flat in 0..d.pow(t as u32) {
                let idx = digits(flat, d, t);
                let numeric = (pp.get(&idx) - pm.get(&idx)) / (2.0 * h);
                let analytic: f64 = (0..t)
                    .filter(|&p| idx[p] == q)
                    .map(|p| {
                        let mut rest = idx.clone();
                        rest.remove(p);
                        lower.get(&rest)
                    })
                    .sum();
                assert!((numeric - analytic).abs() < 1e-5 * (1.0 + analytic.abs()), "{base} {idx:?}: {numeric} vs {analytic}");
            }
        }
    }
}

#[test]
fn hermite_orthogonality() {
    let (n, lim) = (20_000, 12.0);
    let h = 2.0 * lim / n as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    for a in 0..7 {
        for b in 0..7 {
            let integral: f64 = (0..=n)
                .map(|i| {
                    let x = -lim + i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * hermite_univariate(x, a) * hermite_univariate(x, b) * (-x * x / 2.0).exp() / norm
                })
                .sum::<f64>()
                * h;
            let expect = if a == b { (1..=a).map(|i| i as f64).product() } else { 0.0 };
            assert!((integral - expect).abs() < 1e-8 * (1.0 + expect), "<He_{a}, He_{b}> = {integral}");
        }
    }
}

#[test]
fn adjusted_polynomial_is_unbiased_for_uniform_cube() {
    let mu = [0.8, -0.4];
    let t = 3;
    let bm = base_moments(BaseDist::UniformCube, t, 2).unwrap();
    let base = BaseDist::UniformCube;
    let n = 100_000u64;
    let mut sum = [0.0; 8];
    let mut sq = [0.0; 8];
    for i in 0..n {
        let u = base.draw(&mut keyed(3, 0, i), 2);
        let z: Vec<f64> = u.iter().zip(&mu).map(|(a, b)| a + b).collect();
        let p = adjusted_poly_recursive(&z, t, &bm).unwrap();
        for f in 0..8 {
            let v = p.get(&digits(f, 2, t));
            sum[f] += v;
            sq[f] += v * v;
        }
    }
    for f in 0..8 {
        let target: f64 = digits(f, 2, t).iter().map(|&q| mu[q]).product();
        let mean = sum[f] / n as f64;
        let se = ((sq[f] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - target).abs() < 4.0 * se, "entry {f}: {mean} vs {target}");
    }
}

#[test]
fn mixture_mean_and_covariance() {
    let spec = MixtureSpec::new(vec![0.2, 0.8], vec![vec![4.0, 0.0], vec![-1.0, 2.0]], BaseDist::Laplace).unwrap();
    let xs = draw_many(&MixtureSampler::new(spec.clone()), Stream::new(5, 1), 0, 200_000).unwrap();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..2).map(|q| xs.iter().map(|x| x[q]).sum::<f64>() / n).collect();
    let m: Vec<f64> = (0..2).map(|q| spec.weights.iter().zip(&spec.means).map(|(w, mu)| w * mu[q]).sum()).collect();
    let cov = covariance(&xs);
    for a in 0..2 {
        for b in 0..2 {
            let between: f64 = spec.weights.iter().zip(&spec.means).map(|(w, mu)| w * (mu[a] - m[a]) * (mu[b] - m[b])).sum();
            let expect = between + if a == b { BaseDist::Laplace.coordinate_variance() } else { 0.0 };
            assert!((cov[(a, b)] - expect).abs() < 0.05, "cov[{a},{b}] = {} vs {expect}", cov[(a, b)]);
        }
        assert!((mean[a] - m[a]).abs() < 0.02, "mean {mean:?} vs {m:?}");
    }
}

#[test]
fn base_tails_and_weights() {
    for base in [BaseDist::Gaussian, BaseDist::Laplace, BaseDist::UniformCube] {
        let xs = draw_many(&BaseSampler::new(base, 1), Stream::new(9, 0), 0, 100_000).unwrap();
        let var = xs.iter().map(|x| x[0] * x[0]).sum::<f64>() / xs.len() as f64;
        assert!((var - base.coordinate_variance()).abs() < 0.02, "{base}: {var}");
        // Poincaré constant 1 gives sub-exponential tails: P(|u| > 6) is tiny
        let far = xs.iter().filter(|x| x[0].abs() > 6.0).count();
        assert!(far <= 20, "{base}: {far}");
    }
    let spec = MixtureSpec::new(vec![0.1, 0.3, 0.6], vec![vec![0.0], vec![10.0], vec![20.0]], BaseDist::Gaussian).unwrap();
    let draws = draw_many_labeled(&MixtureSampler::new(spec), Stream::new(2, 0), 0, 60_000).unwrap();
    for (j, w) in [0.1, 0.3, 0.6].into_iter().enumerate() {
        let f = draws.iter().filter(|(_, l)| *l == Some(j)).count() as f64 / 60_000.0;
        assert!((f - w).abs() < 4.0 * (w * (1.0 - w) / 60_000.0).sqrt(), "component {j}: {f}");
    }
}

#[test]
fn difference_sampler_centers_same_component_pairs() {
    let spec = MixtureSpec::uniform(vec![vec![0.0, 0.0], vec![8.0, 0.0]], BaseDist::Gaussian).unwrap();
    let inner: SharedSampler = Arc::new(MixtureSampler::new(spec));
    let xs = draw_many(&DifferenceSampler::new(inner), Stream::new(4, 0), 0, 40_000).unwrap();
    let near = xs.iter().filter(|x| x[0].abs() < 3.0).count() as f64 / xs.len() as f64;
    assert!((near - 0.5).abs() < 0.02, "{near}");
    let var = xs.iter().filter(|x| x[0].abs() < 3.0).map(|x| x[1] * x[1]).sum::<f64>() / (near * xs.len() as f64);
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn sampled_chain_converges_to_mean_span() {
    let spec = MixtureSpec::uniform(vec![vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 3.0, 1.0, 0.0], vec![-2.0, -2.0, 0.0, 1.0]], BaseDist::Gaussian).unwrap();
    let mix = MixtureSampler::new(spec.clone());
    let base = BaseSampler::new(BaseDist::Gaussian, 4);
    let capture = |n: usize| {
        let chain = iterative_projection(&MomentSource::Sampled { mix: &mix, base: &base, n_per_stage: n, seed: 17 }, 3, 3).unwrap();
        spec.means
            .iter()
            .map(|mu| {
                let got = chain.np.apply_power(mu).unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
                got / mu.iter().map(|x| x * x).sum::<f64>().powf(1.5)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (coarse, fine) = (capture(2_000), capture(100_000));
    assert!(fine > 0.98, "captured fraction {fine}");
    assert!(fine >= coarse - 0.01, "{coarse} -> {fine}");
}

#[test]
fn true_means_assign_almost_every_sample() {
    let means = vec![vec![0.0, 0.0, 0.0], vec![12.0, 0.0, 0.0], vec![6.0, 10.4, 0.0]];
    let spec = MixtureSpec::uniform(means.clone(), BaseDist::Gaussian).unwrap();
    let band = LearnParams { k: 3, w_min: 1.0 / 3.0, ..Default::default() }.band();
    let draws = draw_many_labeled(&MixtureSampler::new(spec), Stream::new(8, 0), 0, 20_000).unwrap();
    let right = draws.iter().filter(|(x, l)| Some(assign_sample(x, &means, band).unwrap().index) == *l).count();
    assert!(right as f64 >= 0.99 * draws.len() as f64, "{right}");
}

fn brute_force_cost(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn literal_and_subset_expansions_agree(t in 1usize..=4, d in 1usize..=3, seed in any::<u64>()) {
        let mut rng = keyed(seed, 0, 0);
        let xs: Vec<Vec<f64>> = (0..2 * t).map(|_| BaseDist::Gaussian.draw(&mut rng, d)).collect();
        let a = r_poly_terms(&xs, t).unwrap().to_dense().unwrap();
        let b = r_poly_subset_terms(&xs, t).unwrap().to_dense().unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9 * (1.0 + a.max_abs()));
    }

    #[test]
    fn projection_is_linear_in_each_factor(d in 1usize..=4, s in 1usize..=3, c in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = keyed(seed, 1, 0);
        let mut widths = Vec::new();
        let mut prev = 1;
        for _ in 0..s {
            prev = 3.min(d * prev);
            widths.push(prev);
        }
        let np = random_chain(&mut rng, d, &widths);
        let us: Vec<Vec<f64>> = (0..s).map(|_| BaseDist::Gaussian.draw(&mut rng, d)).collect();
        let v = BaseDist::Gaussian.draw(&mut rng, d);
        let refs: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
        let mixed: Vec<f64> = us[0].iter().zip(&v).map(|(a, b)| a + c * b).collect();
        let mut with_mixed = refs.clone();
        with_mixed[0] = &mixed;
        let mut with_v = refs.clone();
        with_v[0] = &v;
        let lhs = np.apply_rank1(&with_mixed).unwrap();
        let base = np.apply_rank1(&refs).unwrap();
        let other = np.apply_rank1(&with_v).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - base[i] - c * other[i]).abs() < 1e-9 * (1.0 + lhs[i].abs()));
        }
    }

    #[test]
    fn hungarian_is_optimal(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = keyed(seed, 2, 0);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| BaseDist::UniformCube.draw(&mut rng, n).iter().map(|x| x.abs()).collect()).collect();
        let assign = hungarian(&cost);
        let got: f64 = assign.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        prop_assert!((got - brute_force_cost(&cost)).abs() < 1e-12);
    }

    #[test]
    fn matching_a_permutation_is_exact(k in 1usize..=5, seed in any::<u64>()) {
        let mut rng = keyed(seed, 3, 0);
        let truth: Vec<Vec<f64>> = (0..k).map(|j| vec![10.0 * j as f64, BaseDist::Gaussian.draw(&mut rng, 1)[0]]).collect();
        let learned: Vec<Vec<f64>> = truth.iter().rev().cloned().collect();
        let m = match_means(&truth, &learned, None, None);
        prop_assert_eq!(m.missing, 0);
        prop_assert!(m.max_mean_error < 1e-12);
    }

    #[test]
    fn points_at_a_mean_assign_to_it(seed in any::<u64>(), band in 0.5f64..4.0) {
        let mut rng = keyed(seed, 4, 0);
        let means: Vec<Vec<f64>> = (0..3).map(|j| {
            let mut m = BaseDist::Gaussian.draw(&mut rng, 3);
            m[0] += 20.0 * j as f64;
            m
        }).collect();
        for (j, mu) in means.iter().enumerate() {
            let a = assign_sample(mu, &means, band).unwrap();
            prop_assert_eq!(a.index, j);
            prop_assert!(!a.ambiguous);
        }
    }
}

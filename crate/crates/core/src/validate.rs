//! Oracle and property suites runnable from the command line. Each suite
//! returns its measured quantities and a pass flag against the stated
//! tolerance; all randomness is keyed by the caller's seed.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::gaussian::{checker_contains, truncated_weights_oracle, Checker};
use crate::mixture::{build_spec, dist, sample_stream, GenConfig, MixtureSampler, MixtureSpec, SeparationProfile, WeightProfile};
use crate::pipeline::{iterative_projection, MomentSource};
use crate::poly::{adjusted_poly_recursive, base_moments, hermite_roots, hermite_tensor, hermite_univariate, r_poly_dense_oracle, r_poly_subset_terms, r_poly_terms, SubsetPlan};
use crate::projection::random_chain;
use crate::reduction::{reduce_bounded_means, DimensionReduction};
use crate::rng::{derive, keyed, Rng, Stream};
use crate::sample_test::{choose_threshold, SampleTester, TestConfig};
use crate::sampler::{draw_many_labeled, BaseSampler};
use crate::tensor::kron_flatten;

pub const SUITES: &[&str] = &["rank1-identity", "hermite", "unbiasedness", "variance", "projection", "oracle-accuracy", "discrimination", "reduction"];

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), pass: true, metrics: BTreeMap::new(), notes: Vec::new() }
    }

    fn check(&mut self, name: &str, value: f64, ok: bool) {
        self.metrics.insert(name.into(), value);
        if !ok {
            self.pass = false;
            self.notes.push(format!("{name} = {value:e} out of bounds"));
        }
    }
}

/// Runs one named suite. `scale` multiplies Monte-Carlo sample counts
/// (1.0 gives the acceptance sizes).
pub fn run_suite(name: &str, seed: u64, scale: f64) -> Result<SuiteReport> {
    let n = |base: usize| ((base as f64 * scale).round() as usize).max(100);
    match name {
        "rank1-identity" => rank1_identity(seed),
        "hermite" => hermite(seed),
        "unbiasedness" => unbiasedness(seed, n(200_000)),
        "variance" => variance(seed, n(20_000)),
        "projection" => projection(seed),
        "oracle-accuracy" => oracle_accuracy(seed),
        "discrimination" => discrimination(seed, n(400)),
        "reduction" => reduction(seed, n(60_000)),
        other => Err(Error::Config(format!("unknown suite {other:?}; expected one of {}", SUITES.join(", ")))),
    }
}

fn rand_vec(rng: &mut Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn unit_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Dense −Q_t(x_1..x_t) + Q_t(x_{t+1}..x_{2t}) against both rank-1 forms.
fn rank1_identity(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("rank1-identity");
    let mut worst_literal = 0.0f64;
    let mut worst_subset = 0.0f64;
    for t in 1..=4 {
        for d in 1..=3 {
            for base in [BaseDist::Gaussian, BaseDist::Laplace] {
                let bm = base_moments(base, t, d)?;
                for i in 0..50u64 {
                    let mut rng = keyed(seed, (t * 10 + d) as u64, i);
                    let xs: Vec<Vec<f64>> = (0..2 * t).map(|_| rand_vec(&mut rng, d, 2.0)).collect();
                    let dense = r_poly_dense_oracle(&xs, t, &bm)?;
                    worst_literal = worst_literal.max(dense.max_abs_diff(&r_poly_terms(&xs, t)?.to_dense()?));
                    worst_subset = worst_subset.max(dense.max_abs_diff(&r_poly_subset_terms(&xs, t)?.to_dense()?));
                }
            }
        }
    }
    rep.check("max_dev_literal", worst_literal, worst_literal <= 1e-9);
    rep.check("max_dev_subset", worst_subset, worst_subset <= 1e-9);
    Ok(rep)
}

fn hermite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("hermite");
    let mut worst = 0.0f64;
    for t in 1..=5 {
        for d in 1..=3 {
            let bm = base_moments(BaseDist::Gaussian, t, d)?;
            for i in 0..20u64 {
                let x = rand_vec(&mut keyed(seed, 100 + (t * 10 + d) as u64, i), d, 3.0);
                worst = worst.max(hermite_tensor(&x, t)?.max_abs_diff(&adjusted_poly_recursive(&x, t, &bm)?));
            }
        }
    }
    rep.check("max_dev_hermite_vs_adjusted", worst, worst <= 1e-9);
    let mut root_excess = f64::NEG_INFINITY;
    for t in 1..=12 {
        let bound = 2.0 * (t as f64).sqrt();
        for r in hermite_roots(t) {
            root_excess = root_excess.max(r.abs() - bound);
        }
    }
    rep.check("max_root_minus_bound", root_excess, root_excess <= 0.0);
    let mut min_ratio = f64::INFINITY;
    for t in 1..=10 {
        let a = 20.0 * (t as f64).sqrt();
        min_ratio = min_ratio.min(hermite_univariate(a, t) / (0.9 * a).powi(t as i32));
    }
    rep.check("min_ratio_h_over_lower", min_ratio, min_ratio >= 1.0);
    Ok(rep)
}

/// Sums f(i) over i in 0..n in fixed-size chunks, combined in chunk order.
fn chunked_sum(n: usize, width: usize, f: impl Fn(u64, &mut [f64]) + Sync) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i as u64, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for c in chunks {
        total.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    total
}

fn dense_r(plan: &SubsetPlan, xs: &[Vec<f64>]) -> Vec<f64> {
    let t = plan.degree;
    let d = xs[0].len();
    let mut out = vec![0.0; d.pow(t as u32)];
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let mut scratch = Vec::new();
    plan.for_each_term(&refs, &mut scratch, |c, y| {
        let flat = kron_flatten(&vec![y; t]);
        out.iter_mut().zip(flat).for_each(|(a, b)| *a += c * b);
    });
    out
}

fn draw_block(base: BaseDist, mu: &[f64], t: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let d = mu.len();
    (0..2 * t)
        .map(|j| {
            let mut x = base.draw(rng, d);
            if j == 0 {
                x.iter_mut().zip(mu).for_each(|(a, b)| *a += b);
            }
            x
        })
        .collect()
}

fn unbiasedness(seed: u64, n: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("unbiasedness");
    let mu = [1.0, 0.5, -0.25];
    for base in [BaseDist::Gaussian, BaseDist::Laplace] {
        for t in 1..=3 {
            let plan = SubsetPlan::new(t)?;
            let m = 3usize.pow(t as u32);
            let stream = 200 + 10 * t as u64 + base as u64;
            let sums = chunked_sum(n, 2 * m, |i, acc| {
                let r = dense_r(&plan, &draw_block(base, &mu, t, &mut keyed(seed, stream, i)));
                for (j, v) in r.iter().enumerate() {
                    acc[j] += v;
                    acc[m + j] += v * v;
                }
            });
            let target = kron_flatten(&vec![&mu[..]; t]);
            let nf = n as f64;
            let worst = (0..m)
                .map(|j| {
                    let mean = sums[j] / nf;
                    let var = (sums[m + j] / nf - mean * mean).max(0.0);
                    let se = (var / nf).sqrt();
                    if se == 0.0 { (mean - target[j]).abs() / f64::EPSILON } else { (mean - target[j]).abs() / se }
                })
                .fold(0.0f64, f64::max);
            rep.check(&format!("{base}_t{t}_max_z"), worst, worst <= 4.0);
        }
    }
    Ok(rep)
}

fn variance(seed: u64, n: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("variance");
    let cases: [(BaseDist, [f64; 3], usize, bool); 9] = [
        (BaseDist::Gaussian, [1.0, 0.5, -0.25], 1, false),
        (BaseDist::Gaussian, [1.0, 0.5, -0.25], 2, false),
        (BaseDist::Gaussian, [1.0, 0.5, -0.25], 3, false),
        (BaseDist::Laplace, [1.0, 0.5, -0.25], 1, false),
        (BaseDist::Laplace, [1.0, 0.5, -0.25], 2, false),
        (BaseDist::Laplace, [1.0, 0.5, -0.25], 3, false),
        (BaseDist::Gaussian, [0.0; 3], 2, true),
        (BaseDist::Gaussian, [0.0; 3], 3, true),
        (BaseDist::Gaussian, [0.0; 3], 4, true),
    ];
    for (case, (base, mu, t, sharp)) in cases.into_iter().enumerate() {
        let plan = SubsetPlan::new(t)?;
        let m = 3usize.pow(t as u32);
        let dirs: Vec<Vec<f64>> = (0..20u64).map(|i| unit_vec(&mut keyed(seed, 300 + case as u64, i), m)).collect();
        let stream = 400 + case as u64;
        let sums = chunked_sum(n, dirs.len(), |i, acc| {
            let r = dense_r(&plan, &draw_block(base, &mu, t, &mut keyed(seed, stream, i)));
            for (a, v) in acc.iter_mut().zip(&dirs) {
                let p: f64 = v.iter().zip(&r).map(|(x, y)| x * y).sum();
                *a += p * p;
            }
        });
        let worst = sums.iter().map(|s| s / n as f64).fold(0.0f64, f64::max);
        let tf = t as f64;
        let mu_norm2 = mu.iter().map(|x| x * x).sum::<f64>();
        let bound = if sharp { (2.0 * tf).powf(tf) } else { (20.0 * tf).powf(2.0 * tf) * (mu_norm2.powf(tf) + 1.0) };
        let label = if sharp { format!("{base}_zero_t{t}_second_moment_over_bound") } else { format!("{base}_t{t}_second_moment_over_bound") };
        rep.check(&label, worst / bound, worst <= bound);
    }
    Ok(rep)
}

/// Lazy application against dense materialization for every (d, k, s) with
/// d^s ≤ 10⁴, plus row orthonormality of the dense Γ.
fn projection(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("projection");
    let (mut lazy, mut block, mut ortho) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0usize;
    for d in 1..=6usize {
        for k in 1..=4usize {
            let mut s = 1usize;
            while d.pow(s as u32) <= 10_000 && s <= 6 {
                let mut rng = keyed(seed, 500, (d * 100 + k * 10 + s) as u64);
                let np = random_chain(&mut rng, d, &vec![k; s]);
                let g = np.dense_matrix()?;
                let gram = &g * g.transpose();
                ortho = ortho.max((gram - DMatrix::identity(g.nrows(), g.nrows())).amax());
                let us: Vec<Vec<f64>> = (0..s).map(|_| rand_vec(&mut rng, d, 1.0)).collect();
                let refs: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
                let dense = &g * nalgebra::DVector::from_vec(kron_flatten(&refs));
                let got = np.apply_rank1(&refs)?;
                lazy = lazy.max(dense.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                let prev = np.truncated(s - 1);
                let lifted = DMatrix::<f64>::identity(d, d).kronecker(&prev.dense_matrix()?) * nalgebra::DVector::from_vec(kron_flatten(&refs));
                let got_block = prev.apply_kron_block(refs[0], &refs[1..])?;
                block = block.max(lifted.iter().zip(&got_block).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                cases += 1;
                s += 1;
            }
        }
    }
    rep.metrics.insert("cases".into(), cases as f64);
    rep.check("max_dev_apply_rank1", lazy, lazy <= 1e-10);
    rep.check("max_dev_apply_kron_block", block, block <= 1e-10);
    rep.check("max_row_orthonormality_error", ortho, ortho <= 1e-10);
    Ok(rep)
}

/// Chains from exact moment matrices keep ‖Γ_s flat(μ^{⊗s})‖ ≥ (1 − s·1e−8)‖μ‖^s.
fn oracle_accuracy(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("oracle-accuracy");
    let mut worst = f64::INFINITY;
    for i in 0..10u64 {
        let mut rng = keyed(seed, 600, i);
        let d = rng.gen_range(3..=5usize);
        let means: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, d, 3.0)).collect();
        let mut w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let spec = MixtureSpec::new(w, means, BaseDist::Gaussian)?;
        let chain = iterative_projection(&MomentSource::Exact(&spec), 4, 3)?;
        for s in 1..=4 {
            let np = chain.np.truncated(s);
            for mu in &spec.means {
                let kept = np.apply_power(mu)?.iter().map(|x| x * x).sum::<f64>().sqrt();
                let full = mu.iter().map(|x| x * x).sum::<f64>().sqrt().powi(s as i32);
                worst = worst.min(kept / full - (1.0 - s as f64 * 1e-8));
            }
        }
    }
    rep.check("min_margin", worst, worst >= 0.0);
    Ok(rep)
}

/// Close/Far rates of the single-sample test on a k = d = 4 Gaussian mixture
/// with one centered component and three at norm 12.
fn discrimination(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("discrimination");
    let means = vec![vec![0.0; 4], vec![12.0, 0.0, 0.0, 0.0], vec![0.0, 12.0, 0.0, 0.0], vec![0.0, 0.0, 12.0, 0.0]];
    let spec = MixtureSpec::uniform(means.clone(), BaseDist::Gaussian)?;
    let mix = MixtureSampler::new(spec);
    let base = BaseSampler::new(BaseDist::Gaussian, 4);
    let chain = iterative_projection(&MomentSource::Sampled { mix: &mix, base: &base, n_per_stage: 20_000, seed: derive(seed, 700) }, 3, 4)?;
    let cfg = TestConfig::new(3, choose_threshold(12.0, 3), 64, 0.05)?;
    let tester = SampleTester::new(&chain.np, cfg, &base)?;
    let stat = |mu: &[f64], i: u64| -> Result<f64> {
        let mut z = BaseDist::Gaussian.draw(&mut keyed(seed, 701, i), 4);
        z.iter_mut().zip(mu).for_each(|(a, b)| *a += b);
        tester.statistic(&z, &mut keyed(seed, 702, i))
    };
    let close: Vec<f64> = (0..trials as u64).into_par_iter().map(|i| stat(&means[0], i)).collect::<Result<_>>()?;
    let far: Vec<f64> = (0..trials as u64).into_par_iter().map(|i| stat(&means[1 + (i as usize % 3)], trials as u64 + i)).collect::<Result<_>>()?;
    let tau = tester.cfg.tau;
    let close_rate = close.iter().filter(|&&s| s < tau).count() as f64 / trials as f64;
    let far_rate = far.iter().filter(|&&s| s >= tau).count() as f64 / trials as f64;
    rep.metrics.insert("tau".into(), tau);
    rep.check("close_rate", close_rate, close_rate >= 0.95);
    rep.check("far_rate", far_rate, far_rate >= 0.95);
    Ok(rep)
}

fn reduction(seed: u64, n: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("reduction");

    // Component proportions inside a checker against the quadrature oracle.
    let spec = MixtureSpec::new(vec![0.5, 0.3, 0.2], vec![vec![0.0, 0.0, 0.0], vec![2.0, 1.0, 0.0], vec![-1.5, 2.5, 1.0]], BaseDist::Gaussian)?;
    let ch = Checker::new(3, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![0.5, 0.5], 2.0)?;
    let oracle = truncated_weights_oracle(&spec, &ch, 1e9)?;
    let draws = draw_many_labeled(&MixtureSampler::new(spec.clone()), Stream::new(seed, 800), 0, n)?;
    let kept: Vec<usize> = draws.iter().filter(|(x, _)| checker_contains(&ch, x).unwrap_or(false)).filter_map(|(_, l)| *l).collect();
    let m = kept.len() as f64;
    let mut worst_z = 0.0f64;
    for (pos, &i) in oracle.relevant.iter().enumerate() {
        let emp = kept.iter().filter(|&&l| l == i).count() as f64 / m;
        let q = oracle.weights[pos];
        worst_z = worst_z.max((emp - q).abs() / (q * (1.0 - q) / m).sqrt());
    }
    rep.check("checker_weights_max_z", worst_z, worst_z <= 4.0);

    // The far-pair split never separates a true component.
    let mut broken = 0usize;
    let mut splits = 0usize;
    for s in 0..20u64 {
        let cfg = GenConfig {
            k: 4,
            d: 3,
            separation: SeparationProfile::Hierarchical { levels: 2, ratios: vec![20.0, 1e7] },
            weights: WeightProfile::Uniform,
            base: BaseDist::Gaussian,
            seed: derive(seed, 810 + s),
        };
        let spec = build_spec(&cfg)?;
        let data: Vec<_> = sample_stream(&spec, derive(seed, 830 + s)).take(2000).collect();
        let xs: Vec<Vec<f64>> = data.iter().map(|x| x.x.clone()).collect();
        let (groups, planes) = reduce_bounded_means(&xs, 4, 0.25, 1e3)?;
        splits += planes.len();
        let mut owner = vec![None; spec.k()];
        for (g, group) in groups.iter().enumerate() {
            for &i in &group.indices {
                match owner[data[i].label] {
                    None => owner[data[i].label] = Some(g),
                    Some(o) if o != g => broken += 1,
                    _ => {}
                }
            }
        }
    }
    rep.metrics.insert("split_planes".into(), splits as f64);
    rep.check("separated_samples", broken as f64, broken == 0 && splits > 0);

    // Exact-covariance dimension reduction preserves mean distances.
    let mut worst_dist = 0.0f64;
    for s in 0..10u64 {
        let mut rng = keyed(seed, 850, s);
        let (d, k) = (8usize, 3usize);
        let basis = crate::projection::random_row_orthonormal(&mut rng, k, d);
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let c = rand_vec(&mut rng, k, 5.0);
                (0..d).map(|j| (0..k).map(|i| c[i] * basis[(i, j)]).sum()).collect()
            })
            .collect();
        let w = vec![1.0 / k as f64; k];
        let center: Vec<f64> = (0..d).map(|j| means.iter().zip(&w).map(|(m, w)| w * m[j]).sum()).collect();
        let mut signal = DMatrix::zeros(d, d);
        for (wi, mu) in w.iter().zip(&means) {
            let v = nalgebra::DVector::from_iterator(d, mu.iter().zip(&center).map(|(a, b)| a - b));
            signal.ger(*wi, &v, &v, 1.0);
        }
        let red = DimensionReduction::from_moments(center, &signal, k)?;
        for a in 0..k {
            for b in 0..k {
                worst_dist = worst_dist.max((dist(&red.project(&means[a]), &red.project(&means[b])) - dist(&means[a], &means[b])).abs());
            }
        }
    }
    rep.check("dimension_reduction_max_distance_error", worst_dist, worst_dist <= 1e-6);
    Ok(rep)
}

//! Recursive clustering of spherical Gaussian mixtures: checkers, reductions,
//! signal directions, bounded-separation clustering and the complete
//! recursive algorithm.

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::mixture::{dist, norm, MixtureSpec};
use crate::pipeline::{iterative_projection, MomentSource, ProjectionChain};
use crate::poincare::{assign_sample, learn_with_chain, Assignment, LearnMeta, LearnParams, LearnedMixture, MeanEstimate};
use crate::reduction::{reduce_bounded_means, reduce_dimension, DimensionReduction};
use crate::rng::{derive, Stream};
use crate::sample_test::{choose_threshold, null_quantile, PairOutcome, SampleTester, TestConfig};
use crate::sampler::{draw_many, BaseSampler, DifferenceSampler, FilteredSampler, ProjectedSampler, Sampler, SharedSampler};

const STREAM_GMM: u64 = 0x6a3;
const MAX_TRIES: usize = 200_000;

/// A subspace V (orthonormal basis vectors in R^d), a point p ∈ V given in
/// basis coordinates, and a radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    pub d: usize,
    pub basis: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub r: f64,
}

impl Checker {
    pub fn trivial(d: usize, r: f64) -> Self {
        Self { d, basis: Vec::new(), p: Vec::new(), r }
    }

    pub fn new(d: usize, basis: Vec<Vec<f64>>, p: Vec<f64>, r: f64) -> Result<Self> {
        if basis.len() != p.len() || basis.iter().any(|b| b.len() != d) || basis.len() > d {
            return Err(Error::Shape(format!("checker with {} basis vectors and a {}-point in dimension {d}", basis.len(), p.len())));
        }
        if !(r > 0.0) {
            return Err(Error::Config(format!("checker radius {r} must be positive")));
        }
        for i in 0..basis.len() {
            for j in 0..=i {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-10 {
                    return Err(Error::Numeric("checker basis is not orthonormal".into()));
                }
            }
        }
        Ok(Self { d, basis, p, r })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn with_radius(&self, r: f64) -> Self {
        Self { r, ..self.clone() }
    }

    /// Coordinates of Proj_V(x) in the basis.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| b.iter().zip(x).map(|(a, c)| a * c).sum()).collect()
    }

    pub fn offset(&self, x: &[f64]) -> f64 {
        dist(&self.coords(x), &self.p)
    }

    /// Orthonormal basis of V^⊥, completed from the standard basis in order.
    pub fn complement(&self) -> Vec<Vec<f64>> {
        let mut all: Vec<Vec<f64>> = self.basis.clone();
        let mut out = Vec::new();
        for i in 0..self.d {
            if all.len() == self.d {
                break;
            }
            let mut e = vec![0.0; self.d];
            e[i] = 1.0;
            for _ in 0..2 {
                for b in &all {
                    let dot: f64 = b.iter().zip(&e).map(|(a, c)| a * c).sum();
                    e.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let n = norm(&e);
            if n > 1e-6 {
                e.iter_mut().for_each(|x| *x /= n);
                all.push(e.clone());
                out.push(e);
            }
        }
        out
    }
}

pub fn checker_contains(ch: &Checker, x: &[f64]) -> Result<bool> {
    if x.len() != ch.d {
        return Err(Error::Shape(format!("point of dimension {} for a checker in dimension {}", x.len(), ch.d)));
    }
    Ok(ch.offset(x) <= ch.r)
}

/// Samples of `inner` that the checker contains, projected onto V^⊥.
pub fn reduce_by_checker(inner: SharedSampler, ch: &Checker) -> SharedSampler {
    if ch.dim() == 0 {
        return inner;
    }
    let c = ch.clone();
    let filtered: SharedSampler = Arc::new(FilteredSampler { inner, keep: Arc::new(move |x: &[f64]| c.offset(x) <= c.r), max_tries: MAX_TRIES });
    Arc::new(ProjectedSampler { inner: filtered, center: vec![0.0; ch.d], rows: ch.complement() })
}

/// Pr[‖Proj_V(z) − p‖ ≤ r] for z ~ N(μ, I), by one-dimensional quadrature.
pub fn checker_probability(ch: &Checker, mu: &[f64]) -> f64 {
    let a = ch.dim();
    if a == 0 {
        return 1.0;
    }
    let m = ch.offset(mu);
    let std = Normal::new(0.0, 1.0).unwrap();
    let r = ch.r;
    if a == 1 {
        return std.cdf(r - m) - std.cdf(-r - m);
    }
    // Split z along the direction of the offset: u ~ N(m, 1), and the other
    // a − 1 coordinates contribute a χ²(a − 1) radius. Substitute u = r·sin φ.
    let chi = ChiSquared::new((a - 1) as f64).unwrap();
    let n = 4000;
    let h = std::f64::consts::PI / n as f64;
    let f = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let u = r * s;
        let phi_u = (-(u - m) * (u - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi_u * chi.cdf((r * c).powi(2)) * r * c
    };
    let mut sum = f(-std::f64::consts::FRAC_PI_2) + f(std::f64::consts::FRAC_PI_2);
    for i in 1..n {
        let x = -std::f64::consts::FRAC_PI_2 + i as f64 * h;
        sum += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (sum * h / 3.0).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedWeights {
    /// Relevant components: means inside (V, p, r + θ).
    pub relevant: Vec<usize>,
    /// Normalized weights over `relevant`, in the same order; empty when no
    /// component is relevant.
    pub weights: Vec<f64>,
    /// Pr[chk = 1] for every component.
    pub accept_probs: Vec<f64>,
}

pub fn truncated_weights_oracle(spec: &MixtureSpec, ch: &Checker, theta: f64) -> Result<TruncatedWeights> {
    if spec.d() != ch.d {
        return Err(Error::Shape(format!("spec in dimension {} for a checker in dimension {}", spec.d(), ch.d)));
    }
    let accept_probs: Vec<f64> = spec.means.iter().map(|m| checker_probability(ch, m)).collect();
    let relevant: Vec<usize> = (0..spec.k()).filter(|&i| ch.offset(&spec.means[i]) <= ch.r + theta).collect();
    let raw: Vec<f64> = relevant.iter().map(|&i| spec.weights[i] * accept_probs[i]).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 { raw.iter().map(|w| w / total).collect() } else { vec![0.0; raw.len()] };
    Ok(TruncatedWeights { relevant, weights, accept_probs })
}

/// Whether the weighted mixture is w*-reasonable: some pair of components
/// with weight ≥ w* is at least √(max separation) apart.
pub fn is_reasonable(weights: &[f64], means: &[Vec<f64>], w_star: f64) -> bool {
    if means.len() <= 1 {
        return true;
    }
    let mut heavy = 0.0f64;
    let mut all = 0.0f64;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let dij = dist(&means[i], &means[j]);
            all = all.max(dij);
            if weights[i] >= w_star && weights[j] >= w_star {
                heavy = heavy.max(dij);
            }
        }
    }
    heavy >= all.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalDirection {
    pub v: Vec<f64>,
    pub p_level: f64,
    pub delta: f64,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalCheck {
    pub holds: bool,
    pub theta: f64,
    /// Largest Δ for which the check would hold.
    pub reach: f64,
}

/// Empirical check: some θ leaves ≥ 0.95·p of the projections on each of
/// {v·z ≤ θ − Δ} and {v·z ≥ θ + Δ}.
pub fn is_signal_direction(samples: &[Vec<f64>], v: &[f64], p_level: f64, delta: f64) -> Result<SignalCheck> {
    let need = (20.0 / p_level).ceil() as usize;
    if samples.len() < need {
        return Err(Error::EmptySample(format!("signal check needs {need} samples, got {}", samples.len())));
    }
    let mut proj: Vec<f64> = samples.iter().map(|z| z.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
    proj.sort_by(f64::total_cmp);
    let n = proj.len();
    let m = ((0.95 * p_level * n as f64).ceil() as usize).clamp(1, n);
    let (lo, hi) = (proj[m - 1], proj[n - m]);
    let reach = (hi - lo) / 2.0;
    Ok(SignalCheck { holds: delta > 0.0 && reach >= delta, theta: (lo + hi) / 2.0, reach })
}

/// Paper constants for the recursive algorithm; each can be overridden for
/// desk-scale runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConstants {
    pub checker_radius: f64,
    pub max_sep_offset: f64,
    pub isolate_full: f64,
    pub isolate_keep: f64,
    pub isolate_core: f64,
    /// γ range upper end; ⌈10⁴·ln ln(k/w*)⌉ when absent.
    pub gamma_max: Option<usize>,
    pub grid_ratio: f64,
    pub test_sep_frac: f64,
    /// Lower bound on the pair-test separation used while searching for
    /// signal directions.
    pub test_sep_floor: f64,
    pub signal_check_p: f64,
    pub signal_check_scale: f64,
    pub max_sep_delta: f64,
    pub max_sep_p: f64,
    pub refine_delta: f64,
    pub split_gap: f64,
    pub good_frac: f64,
    pub vote_radius: f64,
    pub dedup_radius: f64,
    pub support_frac: f64,
    /// Multiplies the weight floor in the vote's support condition.
    pub vote_weight: f64,
    pub cluster_band: f64,
    pub isolate_weight: f64,
    /// Refinement rounds per level; ⌈(ln(k/w*))^{1+0.1c}⌉ when absent.
    pub rounds: Option<usize>,
}

impl Default for GmmConstants {
    fn default() -> Self {
        Self {
            checker_radius: 10.0,
            max_sep_offset: 30.0,
            isolate_full: 19.0,
            isolate_keep: 17.0,
            isolate_core: 11.0,
            gamma_max: None,
            grid_ratio: 1.1,
            test_sep_frac: 0.01,
            test_sep_floor: 0.0,
            signal_check_p: 0.8,
            signal_check_scale: 0.8,
            max_sep_delta: 0.4,
            max_sep_p: 0.4,
            refine_delta: 0.04,
            split_gap: 0.01,
            good_frac: 0.9,
            vote_radius: 0.02,
            dedup_radius: 0.1,
            support_frac: 0.9,
            vote_weight: 1.0,
            cluster_band: 0.1,
            isolate_weight: 0.5,
            rounds: None,
        }
    }
}

impl GmmConstants {
    /// Overrides for small k and d: a short γ range, a pair-test separation
    /// floor at the declared minimum separation, voting radii that match
    /// batch-mean noise and a halved support floor for short probe runs.
    pub fn desk(sep: f64) -> Self {
        Self { gamma_max: Some(3), test_sep_floor: sep, vote_radius: 0.5, dedup_radius: sep / 2.0, vote_weight: 0.5, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmParams {
    pub k: usize,
    pub w_min: f64,
    pub c: f64,
    pub alpha: f64,
    /// Declared minimum separation; sets the test separation of the final
    /// clustering step.
    pub sep: f64,
    pub t: usize,
    pub reps: usize,
    pub delta: f64,
    pub n_per_stage: usize,
    pub probes: usize,
    pub batch: usize,
    pub signal_trials: usize,
    pub signal_batch: usize,
    pub check_samples: usize,
    pub isolate_samples: usize,
    pub mean_samples: usize,
    pub reduce_samples: usize,
    pub split_scale: f64,
    /// τ is raised to this quantile of the centered statistic; 0 keeps (0.2·s)^t.
    pub null_level: f64,
    pub null_samples: usize,
    pub constants: GmmConstants,
    pub seed: u64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k: 1,
            w_min: 1.0,
            c: 0.5,
            alpha: 0.3,
            sep: 10.0,
            t: 2,
            reps: 32,
            delta: 0.05,
            n_per_stage: 10_000,
            probes: 40,
            batch: 200,
            signal_trials: 8,
            signal_batch: 150,
            check_samples: 2000,
            isolate_samples: 4000,
            mean_samples: 3000,
            reduce_samples: 10_000,
            split_scale: crate::reduction::SPLIT_SCALE,
            null_level: 0.9,
            null_samples: 300,
            constants: GmmConstants::desk(10.0),
            seed: 0,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.w_min > 0.0 && self.w_min <= 1.0) || !(self.c > 0.0) {
            return Err(Error::Config("k ≥ 1, w_min in (0, 1] and c > 0 are required".into()));
        }
        if self.t == 0 || self.reps == 0 || self.probes == 0 || self.batch == 0 || self.signal_trials == 0 {
            return Err(Error::Config("t, reps, probes, batch and signal_trials must be positive".into()));
        }
        if !(self.constants.grid_ratio > 1.0) {
            return Err(Error::Config("grid ratio must exceed 1".into()));
        }
        Ok(())
    }
}

/// Quantities derived from (k, w*, c).
#[derive(Clone, Debug)]
pub struct Scales {
    pub k: usize,
    pub w_star: f64,
    pub ln_k: f64,
    pub theta: f64,
    pub beta: f64,
    pub gamma_max: usize,
    pub rounds: usize,
}

impl Scales {
    pub fn new(k: usize, w_star: f64, c: f64, consts: &GmmConstants) -> Self {
        let ln_k = (k as f64 / w_star).ln().max(1.0);
        Self {
            k,
            w_star,
            ln_k,
            theta: ln_k.powf((1.0 + c) / 2.0),
            beta: ln_k.powf((1.0 + 1.1 * c) / 2.0),
            gamma_max: consts.gamma_max.unwrap_or_else(|| (1e4 * ln_k.ln().max(0.0)).ceil().max(1.0) as usize),
            rounds: consts.rounds.unwrap_or_else(|| ln_k.powf(1.0 + 0.1 * c).ceil() as usize),
        }
    }

    pub fn ln4(&self) -> f64 {
        self.ln_k.powi(4)
    }
}

/// Shared state for the building blocks.
pub struct Ctx<'a> {
    pub params: &'a GmmParams,
    pub scales: Scales,
    pub base: BaseDist,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a GmmParams, k: usize, base: BaseDist) -> Self {
        Self { scales: Scales::new(k, params.w_min, params.c, &params.constants), params, base }
    }

    fn consts(&self) -> &GmmConstants {
        &self.params.constants
    }

    /// Chain on the difference mixture of `mix`.
    pub fn chain(&self, mix: &SharedSampler, seed: u64) -> Result<ProjectionChain> {
        let d = mix.dim();
        let dm = DifferenceSampler::new(mix.clone());
        let db = DifferenceSampler::new(Arc::new(BaseSampler::new(self.base, d)));
        let width = (self.scales.k * (self.scales.k - 1) + 1).min(d.pow(self.params.t as u32).max(1));
        iterative_projection(&MomentSource::Sampled { mix: &dm, base: &db, n_per_stage: self.params.n_per_stage, seed }, self.params.t, width)
    }

    /// Floor for τ on this chain: the `null_level` quantile of the statistic
    /// on centered difference-base draws.
    pub fn null_floor(&self, chain: &ProjectionChain, diff_base: &DifferenceSampler, seed: u64) -> Result<f64> {
        let p = self.params;
        if p.null_level <= 0.0 {
            return Ok(0.0);
        }
        null_quantile(&chain.np, p.t, p.reps, diff_base, p.null_level, p.null_samples.max(1), seed)
    }

    fn tester<'c>(&self, chain: &'c ProjectionChain, diff_base: &'c DifferenceSampler, s: f64, floor: f64) -> Result<SampleTester<'c>> {
        let cfg = TestConfig::new(self.params.t, choose_threshold(s, self.params.t).max(floor), self.params.reps, self.params.delta)?;
        SampleTester::new(&chain.np, cfg, diff_base)
    }
}

/// How a signal search is run: the Δ guesses (tried largest first) and the
/// (p, scale·Δ) check each candidate must pass.
#[derive(Clone, Debug)]
pub struct SignalSearch {
    pub grid: Vec<f64>,
    pub check_p: f64,
    pub check_scale: f64,
}

/// Geometric grid from `top` down to `bottom` with the given ratio.
pub fn delta_grid(top: f64, bottom: f64, ratio: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut x = top;
    while x >= bottom && g.len() < 10_000 {
        g.push(x);
        x /= ratio;
    }
    g
}

fn diameter_estimate(xs: &[Vec<f64>]) -> f64 {
    let far = |from: &[f64]| xs.iter().map(|x| (dist(x, from), x)).fold((0.0, &xs[0]), |b, c| if c.0 > b.0 { c } else { b });
    let (_, b) = far(&xs[0]);
    far(b).0
}

/// Repeated trials: draw z, z', average the batch samples each accepts,
/// and keep v = (μ − μ')/‖μ − μ'‖ once it passes the signal check.
pub fn find_signal_direction(mix: &SharedSampler, ctx: &Ctx<'_>, search: &SignalSearch, stream: Stream) -> Result<SignalDirection> {
    let d = mix.dim();
    if d == 0 {
        return Err(Error::NoSignal("zero-dimensional mixture".into()));
    }
    let p = ctx.params;
    let checks = draw_many(mix.as_ref(), stream.child(0), 0, p.check_samples)?;
    let chain = ctx.chain(mix, derive(stream.child(3).at(0).gen::<u64>(), 1))?;
    let diff_base = DifferenceSampler::new(Arc::new(BaseSampler::new(ctx.base, d)));
    let floor = ctx.null_floor(&chain, &diff_base, derive(stream.child(3).at(1).gen::<u64>(), 4))?;
    let mut memo: Vec<(u64, Vec<Option<Vec<f64>>>)> = Vec::new();
    let m = p.signal_batch;
    let mut best_reach = 0.0f64;
    for &big_delta in &search.grid {
        let s = (ctx.consts().test_sep_frac * big_delta).max(ctx.consts().test_sep_floor);
        let key = s.to_bits();
        if !memo.iter().any(|(k, _)| *k == key) {
            memo.push((key, Vec::new()));
        }
        let slot = memo.iter().position(|(k, _)| *k == key).unwrap();
        let tester = ctx.tester(&chain, &diff_base, s, floor)?;
        for trial in 0..p.signal_trials {
            if memo[slot].1.len() <= trial {
                let v = signal_trial(mix.as_ref(), &tester, stream, trial, m)?;
                memo[slot].1.push(v);
            }
            let Some(v) = memo[slot].1[trial].clone() else { continue };
            let delta = search.check_scale * big_delta;
            let chk = is_signal_direction(&checks, &v, search.check_p, delta)?;
            best_reach = best_reach.max(chk.reach);
            if chk.holds {
                return Ok(SignalDirection { v, p_level: search.check_p, delta, theta: chk.theta });
            }
        }
    }
    Err(Error::NoSignal(format!(
        "no ({:.4}, Δ)-signal direction for Δ in [{:.4}, {:.4}] after {} trials per guess (best reach {best_reach:.4})",
        search.check_p,
        search.grid.last().map_or(0.0, |x| search.check_scale * x),
        search.grid.first().map_or(0.0, |x| search.check_scale * x),
        p.signal_trials
    )))
}

fn signal_trial(mix: &dyn Sampler, tester: &SampleTester<'_>, stream: Stream, trial: usize, m: usize) -> Result<Option<Vec<f64>>> {
    let ts = stream.child(1).child(trial as u64);
    let z = mix.draw(&mut ts.at(0))?;
    let z2 = mix.draw(&mut ts.at(1))?;
    let bs = ts.child(2);
    let pair_seed = derive(ts.child(3).at(0).gen::<u64>(), tester.cfg.tau.to_bits());
    let batch = (0..2 * m).into_par_iter().map(|j| mix.draw(&mut bs.at(j as u64))).collect::<Result<Vec<_>>>()?;
    let verdicts = (0..2 * m)
        .into_par_iter()
        .map(|j| tester.pair(if j < m { &z } else { &z2 }, &batch[j], derive(pair_seed, j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let avg = |range: std::ops::Range<usize>| {
        let acc: Vec<&Vec<f64>> = range.filter(|&j| verdicts[j] == PairOutcome::Accept).map(|j| &batch[j]).collect();
        (!acc.is_empty()).then(|| (0..z.len()).map(|q| acc.iter().map(|x| x[q]).sum::<f64>() / acc.len() as f64).collect::<Vec<f64>>())
    };
    let (Some(mu), Some(mu2)) = (avg(0..m), avg(m..2 * m)) else { return Ok(None) };
    let n = dist(&mu, &mu2);
    if !(n > 0.0) {
        return Ok(None);
    }
    Ok(Some(mu.iter().zip(&mu2).map(|(a, b)| (a - b) / n).collect()))
}

/// Probe/batch/vote clustering for a mixture with bounded maximum
/// separation, with the Gaussian test at the declared separation.
pub fn full_cluster_bounded(mix: &SharedSampler, ctx: &Ctx<'_>, stream: Stream) -> Result<Vec<Vec<f64>>> {
    let p = ctx.params;
    let c = ctx.consts();
    let chain = ctx.chain(mix, derive(stream.child(0).at(0).gen::<u64>(), 2))?;
    let diff_base = DifferenceSampler::new(Arc::new(BaseSampler::new(ctx.base, mix.dim())));
    let floor = ctx.null_floor(&chain, &diff_base, derive(stream.child(0).at(1).gen::<u64>(), 4))?;
    let lp = LearnParams {
        k: ctx.scales.k,
        w_min: c.vote_weight * ctx.scales.w_star.min(1.0 / ctx.scales.k as f64),
        sep: p.sep,
        alpha: c.dedup_radius,
        c: p.c,
        t: Some(p.t),
        delta: p.delta,
        reps: p.reps,
        n_per_stage: p.n_per_stage,
        probes: Some(p.probes),
        batch: Some(p.batch),
        tau: Some(choose_threshold(p.sep, p.t).max(floor)),
        vote_radius: c.vote_radius / c.dedup_radius,
        support_frac: c.support_frac,
        mean_estimate: MeanEstimate::SupportAverage,
        band: None,
        weight_samples: 1,
        reduce_samples: 1,
        seed: derive(stream.child(1).at(0).gen::<u64>(), 3),
    };
    let base: SharedSampler = Arc::new(BaseSampler::new(ctx.base, mix.dim()));
    let (learned, _) = learn_with_chain(mix.clone(), base, &chain, &lp)?;
    Ok(learned.means)
}

/// The j whose candidate mean is within 0.1·s of z along every inter-mean
/// direction, with the minimax fallback.
pub fn cluster_with_means(z: &[f64], candidates: &[Vec<f64>], s: f64, band_frac: f64) -> Result<Assignment> {
    assign_sample(z, candidates, band_frac * s)
}

/// Accepts exactly the samples of one isolated component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTest {
    pub checker: Checker,
    pub complement: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<f64>>,
    pub target: usize,
    pub s: f64,
    pub band_frac: f64,
}

impl ComponentTest {
    pub fn accepts(&self, x: &[f64]) -> bool {
        if self.checker.offset(x) > self.checker.r {
            return false;
        }
        let y: Vec<f64> = self.complement.iter().map(|b| b.iter().zip(x).map(|(a, c)| a * c).sum()).collect();
        cluster_with_means(&y, &self.candidates, self.s, self.band_frac).map(|a| a.index == self.target).unwrap_or(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxSepOutcome {
    Accept,
    Reject,
}

/// Reject iff some truncated reduction at radius (30 + γ)θ has a verified
/// (0.4w*, 0.4(ln K)⁴)-signal direction.
pub fn test_max_separation(mix: &SharedSampler, ch: &Checker, ctx: &Ctx<'_>, stream: Stream) -> Result<MaxSepOutcome> {
    let c = ctx.consts();
    let sc = &ctx.scales;
    let delta = c.max_sep_delta * sc.ln4();
    for gamma in 1..=sc.gamma_max {
        let red = reduce_by_checker(mix.clone(), &ch.with_radius((c.max_sep_offset + gamma as f64) * sc.theta));
        if red.dim() == 0 {
            return Ok(MaxSepOutcome::Accept);
        }
        let search = SignalSearch { grid: vec![delta / c.signal_check_scale], check_p: c.max_sep_p * sc.w_star, check_scale: c.signal_check_scale };
        match find_signal_direction(&red, ctx, &search, stream.child(gamma as u64)) {
            Ok(_) => return Ok(MaxSepOutcome::Reject),
            Err(Error::NoSignal(_)) | Err(Error::Sampler(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(MaxSepOutcome::Accept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub checker: Checker,
    pub gamma: usize,
    pub direction: SignalDirection,
    pub took_low_side: bool,
}

/// Adds one signal direction to V and recenters p on a good sample from one
/// side of the split (chosen by a coin flip).
pub fn refine_checker(mix: &SharedSampler, ch: &Checker, ctx: &Ctx<'_>, stream: Stream) -> Result<Refinement> {
    let c = ctx.consts();
    let sc = &ctx.scales;
    let p = ctx.params;
    let mut rng = stream.at(0);
    let gamma = rng.gen_range(1..=sc.gamma_max);
    let red = reduce_by_checker(mix.clone(), &ch.with_radius(sc.beta + gamma as f64 * sc.theta));
    if red.dim() == 0 {
        return Err(Error::NoSignal("checker already spans the space".into()));
    }
    let probe = draw_many(red.as_ref(), stream.child(1), 0, p.check_samples.min(1000))?;
    let bottom = c.refine_delta * sc.ln4() / c.signal_check_scale;
    let top = (0.5 * diameter_estimate(&probe) / c.signal_check_scale).max(bottom);
    let search = SignalSearch { grid: delta_grid(top, bottom, c.grid_ratio), check_p: c.signal_check_p * sc.w_star, check_scale: c.signal_check_scale };
    let sig = find_signal_direction(&red, ctx, &search, stream.child(2))?;
    let comp = ch.complement();
    let mut v_full = vec![0.0; ch.d];
    for (b, &x) in comp.iter().zip(&sig.v) {
        v_full.iter_mut().zip(b).for_each(|(a, y)| *a += x * y);
    }
    let n = norm(&v_full);
    v_full.iter_mut().for_each(|a| *a /= n);
    let mut basis = ch.basis.clone();
    basis.push(v_full.clone());
    let wide = ch.with_radius(sc.beta + (gamma as f64 + 2.0) * sc.theta);
    let kept: Vec<Vec<f64>> = draw_many(mix.as_ref(), stream.child(3), 0, p.check_samples)?.into_iter().filter(|x| wide.offset(x) <= wide.r).collect();
    if kept.len() < 2 {
        return Err(Error::NoSignal("refinement checker holds too few samples".into()));
    }
    let coords: Vec<Vec<f64>> = kept.iter().map(|x| basis.iter().map(|b| b.iter().zip(x).map(|(a, y)| a * y).sum()).collect()).collect();
    let need = c.good_frac * sc.w_star * (kept.len() - 1) as f64;
    let good: Vec<usize> = (0..kept.len())
        .into_par_iter()
        .filter(|&i| (coords.iter().filter(|y| dist(y, &coords[i]) <= sc.theta).count() - 1) as f64 >= need)
        .collect();
    let along = |i: usize| *coords[i].last().unwrap();
    let median = |mut side: Vec<usize>| {
        side.sort_by(|&a, &b| along(a).total_cmp(&along(b)).then(a.cmp(&b)));
        side.get(side.len() / 2).copied()
    };
    let split = sig.theta;
    let low = median(good.iter().copied().filter(|&i| along(i) <= split).collect());
    let high = median(good.iter().copied().filter(|&i| along(i) > split).collect());
    let (Some(z1), Some(z2)) = (low, high) else {
        return Err(Error::NoSignal("no good samples on both sides of the split".into()));
    };
    if (along(z1) - along(z2)).abs() < c.split_gap * sc.ln4() {
        return Err(Error::NoSignal("good samples on the two sides are too close".into()));
    }
    let took_low_side = rng.gen_bool(0.5);
    let chosen = if took_low_side { z1 } else { z2 };
    let checker = Checker::new(ch.d, basis, coords[chosen].clone(), c.checker_radius * sc.theta)?;
    Ok(Refinement { checker, gamma, direction: sig, took_low_side })
}

/// Fully clusters the reduction at 19θ and returns the test for one cluster
/// of weight ≥ 0.5w* that concentrates inside 11θ.
pub fn isolate_component(mix: &SharedSampler, ch: &Checker, ctx: &Ctx<'_>, stream: Stream) -> Result<ComponentTest> {
    let c = ctx.consts();
    let sc = &ctx.scales;
    let p = ctx.params;
    let red = reduce_by_checker(mix.clone(), &ch.with_radius(c.isolate_full * sc.theta));
    let complement = ch.complement();
    let candidates = if red.dim() == 0 { vec![Vec::new()] } else { full_cluster_bounded(&red, ctx, stream.child(0))? };
    if candidates.is_empty() {
        return Err(Error::IsolateFailed("bounded clustering returned no candidates".into()));
    }
    let keep = ch.with_radius(c.isolate_keep * sc.theta);
    let core = ch.with_radius(c.isolate_core * sc.theta);
    let xs = draw_many(mix.as_ref(), stream.child(1), 0, p.isolate_samples)?;
    let mut counts = vec![0usize; candidates.len()];
    let mut inner = vec![0usize; candidates.len()];
    for x in &xs {
        if keep.offset(x) > keep.r {
            continue;
        }
        let y: Vec<f64> = complement.iter().map(|b| b.iter().zip(x).map(|(a, q)| a * q).sum()).collect();
        let j = cluster_with_means(&y, &candidates, p.sep, c.cluster_band)?.index;
        counts[j] += 1;
        inner[j] += (core.offset(x) <= core.r) as usize;
    }
    let n = xs.len() as f64;
    let target = (0..candidates.len())
        .filter(|&j| counts[j] as f64 >= c.isolate_weight * sc.w_star * n && 2 * inner[j] >= counts[j])
        .max_by(|&a, &b| inner[a].cmp(&inner[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::IsolateFailed(format!("no cluster of weight ≥ {:.4} inside the core (counts {counts:?})", c.isolate_weight * sc.w_star)))?;
    Ok(ComponentTest { checker: keep, complement, candidates, target, s: p.sep, band_frac: c.cluster_band })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Split,
    Refine,
    Reject,
    Accept,
    Isolate,
    Fail,
}

/// One line of the diagnostics trail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub group: usize,
    pub level: usize,
    pub action: Action,
    pub checker_dim: usize,
    pub radius: f64,
    pub means_in_scope: Option<usize>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOutcome {
    pub learned: LearnedMixture,
    pub events: Vec<Event>,
    /// Set when a stage failed and the result is partial.
    pub error: Option<String>,
}

impl GmmOutcome {
    pub fn events_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn refinements(&self) -> usize {
        self.events.iter().filter(|e| e.action == Action::Refine).count()
    }
}

struct Trail<'a> {
    events: Vec<Event>,
    truth: Option<&'a [Vec<f64>]>,
}

impl Trail<'_> {
    fn push(&mut self, group: usize, level: usize, action: Action, ch: &Checker, red: &DimensionReduction, note: Option<String>) {
        let means_in_scope = self.truth.map(|t| t.iter().filter(|m| ch.offset(&red.project(m)) <= ch.r).count());
        let e = Event { group, level, action, checker_dim: ch.dim(), radius: ch.r, means_in_scope, note };
        log::info!("gmm group={} level={} action={:?} checker_dim={} radius={:.4}", e.group, e.level, e.action, e.checker_dim, e.radius);
        self.events.push(e);
    }
}

/// The complete algorithm: split off far groups, project each to at most k
/// dimensions, then repeatedly refine a checker until the max-separation
/// test accepts, isolate one component, estimate it from its accepted
/// samples, filter it out and continue with the rest.
pub fn recursive_cluster(mix: SharedSampler, params: &GmmParams, truth: Option<&MixtureSpec>) -> Result<GmmOutcome> {
    params.validate()?;
    let root = Stream::new(params.seed, STREAM_GMM);
    let d = mix.dim();
    let pre = draw_many(mix.as_ref(), root.child(0), 0, params.reduce_samples)?;
    let (groups, _) = reduce_bounded_means(&pre, params.k, params.w_min, params.split_scale)?;
    let mut trail = Trail { events: Vec::new(), truth: truth.map(|s| s.means.as_slice()) };
    let centers: Vec<Vec<f64>> = groups.iter().map(|g| g.center.clone()).collect();
    if groups.len() > 1 {
        let ch = Checker::trivial(d, f64::INFINITY);
        trail.push(0, 0, Action::Split, &ch, &DimensionReduction::identity(d), Some(format!("{} groups", groups.len())));
    }
    let mut means = Vec::new();
    let mut weights = Vec::new();
    let mut error = None;
    let mut remaining_k = params.k;
    for (gi, g) in groups.iter().enumerate() {
        let frac = g.indices.len() as f64 / pre.len() as f64;
        let k_g = if groups.len() == 1 {
            params.k
        } else {
            ((frac / params.w_min + 1e-9).floor() as usize).clamp(1, remaining_k.saturating_sub(groups.len() - gi - 1).max(1))
        };
        remaining_k = remaining_k.saturating_sub(k_g);
        let group_mix: SharedSampler = if groups.len() == 1 {
            mix.clone()
        } else {
            let cs = centers.clone();
            Arc::new(FilteredSampler {
                inner: mix.clone(),
                keep: Arc::new(move |x: &[f64]| (0..cs.len()).min_by(|&a, &b| dist(x, &cs[a]).total_cmp(&dist(x, &cs[b]))) == Some(gi)),
                max_tries: MAX_TRIES,
            })
        };
        let rows: Vec<Vec<f64>> = g.indices.iter().map(|&i| pre[i].clone()).collect();
        let (_, red) = reduce_dimension(&rows, &nalgebra::DMatrix::identity(d, d), k_g)?;
        let res = cluster_group(group_mix, &red, k_g, frac, params, root.child(1 + gi as u64), gi, &mut trail, &mut means, &mut weights);
        if let Err(e) = res {
            error = Some(e.to_string());
            let ch = Checker::trivial(red.out_dim(), 1.0);
            trail.push(gi, 0, Action::Fail, &ch, &red, Some(e.to_string()));
            break;
        }
    }
    let scales = Scales::new(params.k, params.w_min, params.c, &params.constants);
    let meta = LearnMeta {
        t: params.t,
        degree_capped: false,
        reps: params.reps,
        tau: choose_threshold(params.sep, params.t),
        seed: params.seed,
        probes: params.probes,
        batch: params.batch,
        alpha: params.alpha,
        band: params.constants.cluster_band * params.sep,
        chain_widths: Vec::new(),
        guarantee_void: true,
        regime_warning: (params.sep < scales.ln_k.powf(0.5 + params.c))
            .then(|| format!("separation {} below the proven regime {:.4}", params.sep, scales.ln_k.powf(0.5 + params.c))),
        ambiguous_assignments: 0,
    };
    Ok(GmmOutcome { learned: LearnedMixture { means, weights, meta }, events: trail.events, error })
}

#[allow(clippy::too_many_arguments)]
fn cluster_group(
    group_mix: SharedSampler,
    red: &DimensionReduction,
    k: usize,
    mass: f64,
    params: &GmmParams,
    stream: Stream,
    gi: usize,
    trail: &mut Trail<'_>,
    means: &mut Vec<Vec<f64>>,
    weights: &mut Vec<f64>,
) -> Result<()> {
    let mut orig = group_mix;
    let mut remaining = mass;
    for level in 0..k {
        if remaining < 0.5 * params.w_min {
            break;
        }
        let ls = stream.child(level as u64);
        let work: SharedSampler = Arc::new(ProjectedSampler { inner: orig.clone(), center: red.center.clone(), rows: red.rows.clone() });
        let k_left = k - level;
        let ctx = Ctx::new(params, k_left, BaseDist::Gaussian);
        let mut ch = Checker::trivial(work.dim(), params.constants.checker_radius * ctx.scales.theta);
        for round in 0..=ctx.scales.rounds {
            let outcome = test_max_separation(&work, &ch, &ctx, ls.child(2 * round as u64))?;
            let action = if outcome == MaxSepOutcome::Accept { Action::Accept } else { Action::Reject };
            trail.push(gi, level, action, &ch, red, None);
            if outcome == MaxSepOutcome::Accept || round == ctx.scales.rounds || ch.dim() + 1 >= work.dim() {
                break;
            }
            match refine_checker(&work, &ch, &ctx, ls.child(2 * round as u64 + 1)) {
                Ok(r) => {
                    ch = r.checker;
                    trail.push(gi, level, Action::Refine, &ch, red, Some(format!("gamma={} delta={:.4}", r.gamma, r.direction.delta)));
                }
                Err(Error::NoSignal(m)) => {
                    trail.push(gi, level, Action::Fail, &ch, red, Some(m));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let test = isolate_component(&work, &ch, &ctx, ls.child(1 << 20))?;
        trail.push(gi, level, Action::Isolate, &test.checker, red, None);
        let (mean, frac) = estimate_component(orig.as_ref(), red, &test, params, ls.child((1 << 20) + 1))?;
        means.push(mean);
        weights.push(frac * remaining);
        remaining *= 1.0 - frac;
        let (t2, r2) = (test.clone(), red.clone());
        orig = Arc::new(FilteredSampler { inner: orig, keep: Arc::new(move |x: &[f64]| !t2.accepts(&r2.project(x))), max_tries: MAX_TRIES });
    }
    Ok(())
}

/// Mean of the accepted samples (in the original coordinates) and the
/// accepted fraction.
fn estimate_component(orig: &dyn Sampler, red: &DimensionReduction, test: &ComponentTest, params: &GmmParams, stream: Stream) -> Result<(Vec<f64>, f64)> {
    let d = orig.dim();
    let mut sum = vec![0.0; d];
    let (mut acc, mut drawn) = (0usize, 0usize);
    let chunk = 2048;
    let cap = 50 * params.mean_samples.max(1);
    while acc < params.mean_samples && drawn < cap {
        let xs = (drawn..drawn + chunk).into_par_iter().map(|i| orig.draw(&mut stream.at(i as u64))).collect::<Result<Vec<_>>>()?;
        for x in xs {
            drawn += 1;
            if test.accepts(&red.project(&x)) {
                acc += 1;
                sum.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
            }
        }
    }
    if acc == 0 {
        return Err(Error::IsolateFailed("the component test accepts no samples".into()));
    }
    Ok((sum.iter().map(|s| s / acc as f64).collect(), acc as f64 / drawn as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed;

    fn line_checker() -> Checker {
        Checker::new(2, vec![vec![1.0, 0.0]], vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn containment_examples() {
        let ch = line_checker();
        assert!(checker_contains(&ch, &[0.5, 7.0]).unwrap());
        assert!(!checker_contains(&ch, &[1.5, 0.0]).unwrap());
        assert!(checker_contains(&ch, &[1.0, 0.0]).unwrap());
        assert!(checker_contains(&ch, &[1.0]).is_err());
    }

    #[test]
    fn complement_is_orthonormal() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ch = Checker::new(3, vec![vec![s, s, 0.0]], vec![0.0], 1.0).unwrap();
        let comp = ch.complement();
        assert_eq!(comp.len(), 2);
        let mut all = comp.clone();
        all.push(ch.basis[0].clone());
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trivial_checker_passes_through() {
        let inner: SharedSampler = Arc::new(BaseSampler::new(BaseDist::Gaussian, 3));
        let out = reduce_by_checker(inner.clone(), &Checker::trivial(3, 0.5));
        assert!(Arc::ptr_eq(&inner, &out));
        assert_eq!(reduce_by_checker(inner, &line_checker_3()).dim(), 2);
    }

    fn line_checker_3() -> Checker {
        Checker::new(3, vec![vec![0.0, 0.0, 1.0]], vec![0.0], 2.0).unwrap()
    }

    #[test]
    fn probability_matches_monte_carlo() {
        for (a, r, off) in [(1usize, 1.5, 0.7), (2, 2.0, 1.0), (3, 2.5, 0.5)] {
            let basis: Vec<Vec<f64>> = (0..a).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
            let ch = Checker::new(4, basis, vec![0.0; a], r).unwrap();
            let mu = vec![off, 0.0, 0.0, 0.0];
            let q = checker_probability(&ch, &mu);
            let n = 200_000;
            let mut rng = keyed(9, a as u64, 0);
            let hits = (0..n)
                .filter(|_| {
                    let z: Vec<f64> = BaseDist::Gaussian.draw(&mut rng, 4).iter().zip(&mu).map(|(x, m)| x + m).collect();
                    ch.offset(&z) <= r
                })
                .count();
            let emp = hits as f64 / n as f64;
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((emp - q).abs() < 4.0 * se, "a={a}: quadrature {q}, empirical {emp}");
        }
    }

    #[test]
    fn truncation_examples() {
        let spec = MixtureSpec::new(vec![0.5, 0.3, 0.2], vec![vec![0.0, 0.0], vec![1.0, 3.0], vec![-1.0, 0.0]], BaseDist::Gaussian).unwrap();
        let wide = Checker::new(2, vec![vec![1.0, 0.0]], vec![0.0], 50.0).unwrap();
        let tw = truncated_weights_oracle(&spec, &wide, 5.0).unwrap();
        assert_eq!(tw.relevant, vec![0, 1, 2]);
        for (a, b) in tw.weights.iter().zip(&spec.weights) {
            assert!((a - b).abs() < 1e-9);
        }
        let far = MixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0, 0.0], vec![40.0, 0.0]], BaseDist::Gaussian).unwrap();
        let theta = 10.0;
        let ch = Checker::new(2, vec![vec![1.0, 0.0]], vec![0.0], 20.0).unwrap();
        let tw = truncated_weights_oracle(&far, &ch, theta).unwrap();
        assert_eq!(tw.relevant, vec![0]);
        assert!(tw.accept_probs[1] <= 2f64.powf(-0.01 * theta * theta));
        let none = Checker::new(2, vec![vec![0.0, 1.0]], vec![100.0], 1.0).unwrap();
        let tw = truncated_weights_oracle(&far, &none, 1.0).unwrap();
        assert!(tw.relevant.is_empty() && tw.weights.is_empty());
    }

    #[test]
    fn signal_check_examples() {
        let same = vec![vec![1.0, 1.0]; 100];
        assert!(!is_signal_direction(&same, &[1.0, 0.0], 0.4, 0.1).unwrap().holds);
        let two: Vec<Vec<f64>> = (0..100).map(|i| vec![if i % 2 == 0 { 3.0 } else { -3.0 }, 0.0]).collect();
        let c = is_signal_direction(&two, &[1.0, 0.0], 0.5, 2.99).unwrap();
        assert!(c.holds && c.theta.abs() < 1e-12);
        assert!(!is_signal_direction(&two, &[1.0, 0.0], 0.5, 3.01).unwrap().holds);
        assert!(is_signal_direction(&two[..10], &[1.0, 0.0], 0.5, 1.0).is_err());
    }

    #[test]
    fn reasonableness_oracle() {
        let means = vec![vec![0.0], vec![10.0], vec![1e4]];
        assert!(!is_reasonable(&[0.45, 0.45, 0.1], &means, 0.2));
        assert!(is_reasonable(&[0.45, 0.1, 0.45], &means, 0.2));
        assert!(is_reasonable(&[1.0], &means[..1], 0.5));
    }

    #[test]
    fn clustering_with_means() {
        let cands = vec![vec![5.0, 0.0], vec![-5.0, 0.0]];
        assert_eq!(cluster_with_means(&[-5.0, 0.0], &cands, 10.0, 0.1).unwrap(), Assignment { index: 1, ambiguous: false });
        assert!(cluster_with_means(&[0.0, 0.0], &cands, 10.0, 0.1).unwrap().ambiguous);
    }

    #[test]
    fn grid_is_geometric() {
        let g = delta_grid(100.0, 50.0, 1.1);
        assert_eq!(g.len(), 8);
        assert!(g.windows(2).all(|w| (w[0] / w[1] - 1.1).abs() < 1e-12));
        assert!(*g.last().unwrap() >= 50.0);
    }

    #[test]
    fn params_round_trip_through_toml() {
        let p = GmmParams { k: 3, seed: 7, ..Default::default() };
        let s = toml::to_string(&p).unwrap();
        let back: GmmParams = toml::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(toml::from_str::<GmmParams>("bogus = 1").is_err());
    }
}

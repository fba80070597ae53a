//! Learning mixtures of translated Poincaré distributions: build a chain on
//! the difference mixture, pair-test probe samples against batches, average
//! the accepted batches and vote.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::dist;
use crate::pipeline::{iterative_projection, MomentSource, ProjectionChain};
use crate::reduction::{covariance, reduce_dimension, DimensionReduction};
use crate::rng::Stream;
use crate::sample_test::{choose_degree, choose_threshold, gate_holds, PairOutcome, SampleTester, TestConfig, Variant, DEFAULT_REPS};
use crate::sampler::{draw_many, DifferenceSampler, PaddedSampler, ProjectedSampler, Sampler, SharedSampler};

const STREAM_CHAIN: u64 = 0xc4a1;
const STREAM_PROBE: u64 = 0x9be;
const STREAM_BATCH: u64 = 0xba7c;
const STREAM_PAIR: u64 = 0x9a12;
const STREAM_WEIGHT: u64 = 0x3e1;
const STREAM_REDUCE: u64 = 0x4ed;

pub fn difference_sampler(mix: SharedSampler) -> DifferenceSampler {
    DifferenceSampler::new(mix)
}

/// How a voted mean is reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanEstimate {
    /// The winning candidate itself.
    Candidate,
    /// The average of all candidates inside the winner's support ball.
    SupportAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnParams {
    pub k: usize,
    pub w_min: f64,
    pub sep: f64,
    pub alpha: f64,
    pub c: f64,
    /// Fixed test degree; chosen from the separation when absent.
    pub t: Option<usize>,
    pub delta: f64,
    pub reps: usize,
    pub n_per_stage: usize,
    /// Number of probe samples l; 20·k/w_min when absent.
    pub probes: Option<usize>,
    /// Batch size m per probe; 50·k/w_min when absent.
    pub batch: Option<usize>,
    pub tau: Option<f64>,
    pub vote_radius: f64,
    pub support_frac: f64,
    pub mean_estimate: MeanEstimate,
    /// Assignment band; (ln(k/w_min))^{1+c/2} when absent.
    pub band: Option<f64>,
    pub weight_samples: usize,
    pub reduce_samples: usize,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            k: 1,
            w_min: 1.0,
            sep: 12.0,
            alpha: 1.0,
            c: 1.0,
            t: None,
            delta: 0.05,
            reps: DEFAULT_REPS,
            n_per_stage: 20_000,
            probes: None,
            batch: None,
            tau: None,
            vote_radius: 0.2,
            support_frac: 0.9,
            mean_estimate: MeanEstimate::SupportAverage,
            band: None,
            weight_samples: 4000,
            reduce_samples: 20_000,
            seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        if !(self.w_min > 0.0 && self.w_min <= 1.0 / self.k as f64 + 1e-12) {
            return Err(Error::Config(format!("w_min = {} must lie in (0, 1/k]", self.w_min)));
        }
        if !(self.alpha > 0.0) || !(self.sep > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("alpha and sep must be positive, delta in (0, 1)".into()));
        }
        if self.reps == 0 || self.n_per_stage == 0 || self.weight_samples == 0 {
            return Err(Error::Config("reps, n_per_stage and weight_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn probes(&self) -> usize {
        self.probes.unwrap_or((20.0 * self.k as f64 / self.w_min).ceil() as usize)
    }

    pub fn batch(&self) -> usize {
        self.batch.unwrap_or((50.0 * self.k as f64 / self.w_min).ceil() as usize)
    }

    pub fn band(&self) -> f64 {
        self.band.unwrap_or_else(|| (self.k as f64 / self.w_min).ln().max(1.0).powf(1.0 + 0.5 * self.c))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnMeta {
    pub t: usize,
    pub degree_capped: bool,
    pub reps: usize,
    pub tau: f64,
    pub seed: u64,
    pub probes: usize,
    pub batch: usize,
    pub alpha: f64,
    pub band: f64,
    pub chain_widths: Vec<usize>,
    pub guarantee_void: bool,
    pub regime_warning: Option<String>,
    pub ambiguous_assignments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedMixture {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub meta: LearnMeta,
}

impl LearnedMixture {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteLedger {
    /// One entry per probe; `None` when the probe accepted nothing.
    pub candidates: Vec<Option<Vec<f64>>>,
    pub accepted_counts: Vec<usize>,
    pub support: Vec<usize>,
    /// Indices of the winning candidates, in voting order.
    pub accepted: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub index: usize,
    pub ambiguous: bool,
}

/// The j with |v·(μ_j − z)| ≤ band along every unit inter-mean direction v.
/// With zero or several such j, picks the j minimizing the largest
/// |v·(μ_j − z)| (lowest index on ties) and flags the result.
pub fn assign_sample(z: &[f64], means: &[Vec<f64>], band: f64) -> Result<Assignment> {
    if means.is_empty() {
        return Err(Error::EmptySample("no means to assign to".into()));
    }
    let mut dirs = Vec::new();
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let n = dist(&means[a], &means[b]);
            if n > 0.0 {
                dirs.push(means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) / n).collect::<Vec<f64>>());
            }
        }
    }
    let worst: Vec<f64> = means
        .iter()
        .map(|m| dirs.iter().map(|v| v.iter().zip(m).zip(z).map(|((a, b), c)| a * (b - c)).sum::<f64>().abs()).fold(0.0, f64::max))
        .collect();
    let inside = worst.iter().filter(|w| **w <= band).count();
    let index = (0..means.len()).fold(0, |best, j| if worst[j] < worst[best] { j } else { best });
    Ok(Assignment { index, ambiguous: inside != 1 })
}

/// Maps learner-space points back to the caller's coordinates.
enum Normalizer {
    Identity,
    Pad { d: usize },
    Project(DimensionReduction),
}

impl Normalizer {
    fn restore(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Normalizer::Identity => y.to_vec(),
            Normalizer::Pad { d } => y[..*d].to_vec(),
            Normalizer::Project(r) => r.lift(y),
        }
    }
}

fn normalize(mix: &SharedSampler, base: &SharedSampler, p: &LearnParams) -> Result<(SharedSampler, SharedSampler, Normalizer)> {
    let d = mix.dim();
    if d == p.k {
        return Ok((mix.clone(), base.clone(), Normalizer::Identity));
    }
    if d < p.k {
        let extra = p.k - d;
        let m: SharedSampler = Arc::new(PaddedSampler { inner: mix.clone(), extra });
        let b: SharedSampler = Arc::new(PaddedSampler { inner: base.clone(), extra });
        return Ok((m, b, Normalizer::Pad { d }));
    }
    let stream = Stream::new(p.seed, STREAM_REDUCE);
    let xs = draw_many(mix.as_ref(), stream.child(0), 0, p.reduce_samples)?;
    let bs = draw_many(base.as_ref(), stream.child(1), 0, p.reduce_samples)?;
    let (_, red) = reduce_dimension(&xs, &covariance(&bs), p.k)?;
    let m: SharedSampler = Arc::new(ProjectedSampler { inner: mix.clone(), center: red.center.clone(), rows: red.rows.clone() });
    let b: SharedSampler = Arc::new(ProjectedSampler { inner: base.clone(), center: vec![0.0; d], rows: red.rows.clone() });
    Ok((m, b, Normalizer::Project(red)))
}

/// Full learner: normalizes the dimension to k, builds the chain on the
/// difference mixture and runs [`learn_with_chain`].
pub fn learn_means(mix: SharedSampler, base: SharedSampler, params: &LearnParams) -> Result<(LearnedMixture, VoteLedger)> {
    params.validate()?;
    if mix.dim() != base.dim() {
        return Err(Error::Shape(format!("mixture of dimension {} with base of dimension {}", mix.dim(), base.dim())));
    }
    let (m, b, norm) = normalize(&mix, &base, params)?;
    let (t, capped) = match params.t {
        Some(t) => (t, false),
        None => {
            let c = choose_degree(params.sep, params.k, params.w_min, params.delta, Variant::Poincare)
                .map_err(|e| Error::Config(format!("degree selection failed: {e}")))?;
            (c.t, c.capped)
        }
    };
    let dm = DifferenceSampler::new(m.clone());
    let db = DifferenceSampler::new(b.clone());
    let width = params.k * (params.k - 1) + 1;
    let chain = iterative_projection(
        &MomentSource::Sampled { mix: &dm, base: &db, n_per_stage: params.n_per_stage, seed: crate::rng::derive(params.seed, STREAM_CHAIN) },
        t,
        width,
    )
    .map_err(|e| Error::Numeric(format!("chain construction on the difference mixture failed: {e}")))?;
    let (mut learned, ledger) = learn_with_chain(m, b, &chain, params)?;
    learned.meta.degree_capped = capped;
    learned.means = learned.means.iter().map(|y| norm.restore(y)).collect();
    let (weights, ambiguous) = estimate_weights(mix.as_ref(), &learned.means, learned.meta.band, params)?;
    learned.weights = weights;
    learned.meta.ambiguous_assignments = ambiguous;
    Ok((learned, ledger))
}

/// Probe, batch and vote against a given chain on the difference mixture.
/// Samplers must already live in the chain's dimension; weights are left to
/// the caller.
pub fn learn_with_chain(mix: SharedSampler, base: SharedSampler, chain: &ProjectionChain, p: &LearnParams) -> Result<(LearnedMixture, VoteLedger)> {
    p.validate()?;
    let t = chain.np.depth();
    let diff_base = DifferenceSampler::new(base);
    let tau = p.tau.unwrap_or_else(|| choose_threshold(p.sep, t));
    let mut cfg = TestConfig::new(t, tau, p.reps, p.delta)?;
    cfg.guarantee_void = !gate_holds(p.sep, t, p.k, p.delta);
    let tester = SampleTester::new(&chain.np, cfg.clone(), &diff_base)?;
    let (l, m) = (p.probes(), p.batch());
    let probe_stream = Stream::new(p.seed, STREAM_PROBE);
    let batch_stream = Stream::new(p.seed, STREAM_BATCH);
    let pair_seed = crate::rng::derive(p.seed, STREAM_PAIR);
    let d = mix.dim();
    let results = (0..l)
        .into_par_iter()
        .map(|i| {
            let z = mix.draw(&mut probe_stream.at(i as u64))?;
            let bs = batch_stream.child(i as u64);
            let mut sum = vec![0.0; d];
            let mut count = 0usize;
            for j in 0..m {
                let x = mix.draw(&mut bs.at(j as u64))?;
                let seed = crate::rng::derive(pair_seed, (i * m + j) as u64);
                if tester.pair(&z, &x, seed)? == PairOutcome::Accept {
                    sum.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
                    count += 1;
                }
            }
            Ok((count > 0).then(|| sum.iter().map(|s| s / count as f64).collect::<Vec<f64>>()).map_or((None, 0), |c| (Some(c), count)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (candidates, accepted_counts): (Vec<Option<Vec<f64>>>, Vec<usize>) = results.into_iter().unzip();
    let radius = p.vote_radius * p.alpha;
    let support: Vec<usize> = candidates
        .iter()
        .map(|ci| match ci {
            Some(a) => candidates.iter().flatten().filter(|b| dist(a, b) <= radius).count(),
            None => 0,
        })
        .collect();
    let need = p.support_frac * p.w_min * l as f64;
    let mut means: Vec<Vec<f64>> = Vec::new();
    let mut accepted = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let Some(c) = c else { continue };
        if (support[i] as f64) < need || means.iter().any(|mu| dist(mu, c) < p.alpha) {
            continue;
        }
        let out = match p.mean_estimate {
            MeanEstimate::Candidate => c.clone(),
            MeanEstimate::SupportAverage => {
                let near: Vec<&Vec<f64>> = candidates.iter().flatten().filter(|b| dist(c, b) <= radius).collect();
                (0..d).map(|q| near.iter().map(|b| b[q]).sum::<f64>() / near.len() as f64).collect()
            }
        };
        if means.iter().any(|mu| dist(mu, &out) < p.alpha) {
            continue;
        }
        means.push(out);
        accepted.push(i);
    }
    log::info!("vote probes={l} batch={m} candidates={} winners={}", candidates.iter().flatten().count(), means.len());
    let regime = (p.k as f64 / p.w_min).ln().max(0.0).powf(1.0 + p.c);
    let regime_warning = (p.sep < regime).then(|| format!("separation {} below the proven regime {regime:.4}", p.sep));
    let k_out = means.len();
    let meta = LearnMeta {
        t,
        degree_capped: false,
        reps: p.reps,
        tau,
        seed: p.seed,
        probes: l,
        batch: m,
        alpha: p.alpha,
        band: p.band(),
        chain_widths: chain.np.widths(),
        guarantee_void: cfg.guarantee_void,
        regime_warning,
        ambiguous_assignments: 0,
    };
    let learned = LearnedMixture { means, weights: vec![1.0 / k_out.max(1) as f64; k_out], meta };
    Ok((learned, VoteLedger { candidates, accepted_counts, support, accepted }))
}

/// Fractions of a fresh batch assigned to each mean, and the number of
/// ambiguous assignments.
pub fn estimate_weights(mix: &dyn Sampler, means: &[Vec<f64>], band: f64, p: &LearnParams) -> Result<(Vec<f64>, usize)> {
    if means.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let xs = draw_many(mix, Stream::new(p.seed, STREAM_WEIGHT), 0, p.weight_samples)?;
    let mut counts = vec![0usize; means.len()];
    let mut ambiguous = 0;
    for x in &xs {
        let a = assign_sample(x, means, band)?;
        counts[a.index] += 1;
        ambiguous += a.ambiguous as usize;
    }
    Ok((counts.iter().map(|&c| c as f64 / xs.len() as f64).collect(), ambiguous))
}

/// Writes `id,assigned,flags` for every row.
pub fn write_assignments(path: &Path, samples: &[Vec<f64>], means: &[Vec<f64>], band: f64) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "id,assigned,flags")?;
    for (i, x) in samples.iter().enumerate() {
        let a = assign_sample(x, means, band)?;
        writeln!(w, "{i},{},{}", a.index, if a.ambiguous { "ambiguous" } else { "" })?;
    }
    w.flush()?;
    Ok(())
}

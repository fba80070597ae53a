//! Ground-truth mixtures: specification, synthetic generation, labeled
//! sample streams and dataset dumps.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::sampler::Sampler;

pub const STREAM_DATA: u64 = 0x0da7a;
const STREAM_PLACEMENT: u64 = 0x91ace;
const PLACEMENT_TRIES: usize = 20_000;

/// A mixture Σ w_i D(μ_i) of translates of one base distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub base: BaseDist,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, base: BaseDist) -> Result<Self> {
        let spec = Self { weights, means, base };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(means: Vec<Vec<f64>>, base: BaseDist) -> Result<Self> {
        let k = means.len();
        Self::new(vec![1.0 / k as f64; k], means, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.weights.len() != self.means.len() {
            return Err(Error::Config(format!("{} weights for {} means", self.weights.len(), self.means.len())));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::Config("means must share a positive dimension".into()));
        }
        if self.means.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite mean".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    pub fn w_min(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn pair_distances(&self) -> impl Iterator<Item = f64> + '_ {
        let k = self.k();
        (0..k).flat_map(move |i| (i + 1..k).map(move |j| dist(&self.means[i], &self.means[j])))
    }

    pub fn min_separation(&self) -> f64 {
        self.pair_distances().fold(f64::INFINITY, f64::min)
    }

    pub fn max_separation(&self) -> f64 {
        self.pair_distances().fold(0.0, f64::max)
    }

    /// The mixture of (z − z')/√2: a zero-mean component of weight Σw_i² and
    /// components at (μ_i − μ_j)/√2 with weight w_i·w_j for i ≠ j.
    pub fn difference(&self) -> MixtureSpec {
        let d = self.d();
        let mut weights = vec![self.weights.iter().map(|w| w * w).sum()];
        let mut means = vec![vec![0.0; d]];
        for i in 0..self.k() {
            for j in 0..self.k() {
                if i != j {
                    weights.push(self.weights[i] * self.weights[j]);
                    means.push(self.means[i].iter().zip(&self.means[j]).map(|(a, b)| (a - b) / std::f64::consts::SQRT_2).collect());
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MixtureSpec { weights, means, base: self.base }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Samples a mixture: a component by weight, then its mean plus a base draw.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    pub spec: MixtureSpec,
    cumulative: Vec<f64>,
}

impl MixtureSampler {
    pub fn new(spec: MixtureSpec) -> Self {
        let mut acc = 0.0;
        let cumulative = spec
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { spec, cumulative }
    }

    fn component(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.spec.k() - 1)
    }
}

impl Sampler for MixtureSampler {
    fn dim(&self) -> usize {
        self.spec.d()
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        let label = self.component(rng.gen::<f64>());
        let mut x = self.spec.base.draw(rng, self.spec.d());
        x.iter_mut().zip(&self.spec.means[label]).for_each(|(a, m)| *a += m);
        Ok((x, Some(label)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Infinite reproducible stream of labeled draws; item i uses generator
/// (seed, data stream, i).
pub fn sample_stream(spec: &MixtureSpec, seed: u64) -> impl Iterator<Item = LabeledSample> {
    let sampler = MixtureSampler::new(spec.clone());
    let stream = Stream::new(seed, STREAM_DATA);
    (0u64..).map(move |i| {
        let (x, l) = sampler.draw_labeled(&mut stream.at(i)).expect("mixture draws cannot fail");
        LabeledSample { x, label: l.expect("mixture draws are labeled") }
    })
}

/// Infinite stream of base draws.
pub fn base_sampler(dist: BaseDist, d: usize, seed: u64) -> impl Iterator<Item = Vec<f64>> {
    let stream = Stream::new(seed, STREAM_DATA);
    (0u64..).map(move |i| dist.draw(&mut stream.at(i), d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeparationProfile {
    /// Pairwise distances in [sep, 1.2·sep].
    Uniform { sep: f64 },
    /// Nested groups; `ratios[0]` is the finest within-group distance and
    /// `ratios[levels−1]` the coarsest across-group distance.
    Hierarchical { levels: usize, ratios: Vec<f64> },
    Explicit { means: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightProfile {
    Uniform,
    /// Symmetric Dirichlet(alpha) draw mixed with a uniform floor:
    /// w = (1 − k·floor)·g + floor.
    Dirichlet { alpha: f64, floor: f64 },
    Explicit { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub k: usize,
    pub d: usize,
    pub separation: SeparationProfile,
    #[serde(default = "default_weights")]
    pub weights: WeightProfile,
    #[serde(default = "default_base")]
    pub base: BaseDist,
    #[serde(default)]
    pub seed: u64,
}

fn default_weights() -> WeightProfile {
    WeightProfile::Uniform
}

fn default_base() -> BaseDist {
    BaseDist::Gaussian
}

fn random_orthonormal_columns(rng: &mut Rng, d: usize, m: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, m, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// k centered points with pairwise distances in [sep, 1.2·sep].
fn place_uniform(rng: &mut Rng, k: usize, d: usize, sep: f64) -> Result<Vec<Vec<f64>>> {
    if k == 1 {
        return Ok(vec![vec![0.0; d]]);
    }
    for _ in 0..PLACEMENT_TRIES {
        let mut pts: Vec<Vec<f64>> = if k - 1 <= d {
            // Regular simplex in a random (k−1)-dimensional subspace, jittered.
            let q = random_orthonormal_columns(rng, d, k - 1);
            (0..k)
                .map(|i| {
                    let mut coords = vec![0.0; k - 1];
                    if i < k - 1 {
                        coords[i] = std::f64::consts::FRAC_1_SQRT_2;
                    } else {
                        let a = (1.0 - (k as f64).sqrt()) / ((k - 1) as f64 * std::f64::consts::SQRT_2);
                        coords.iter_mut().for_each(|c| *c = a);
                    }
                    (0..d)
                        .map(|r| {
                            let jitter: f64 = 0.04 * rng.sample::<f64, _>(StandardNormal);
                            coords.iter().enumerate().map(|(c, v)| q[(r, c)] * v).sum::<f64>() + jitter
                        })
                        .collect()
                })
                .collect()
        } else {
            (0..k).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
        };
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let dd = dist(&pts[i], &pts[j]);
                lo = lo.min(dd);
                hi = hi.max(dd);
            }
        }
        if lo > 0.0 && hi <= 1.2 * lo {
            let scale = sep / lo;
            let centroid: Vec<f64> = (0..d).map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / k as f64).collect();
            for p in pts.iter_mut() {
                p.iter_mut().zip(&centroid).for_each(|(x, c)| *x = (*x - c) * scale);
            }
            return Ok(pts);
        }
    }
    Err(Error::Placement(format!("no {k} points in R^{d} with distance ratio ≤ 1.2 after {PLACEMENT_TRIES} tries")))
}

fn place_hierarchical(rng: &mut Rng, k: usize, d: usize, levels: usize, ratios: &[f64]) -> Result<Vec<Vec<f64>>> {
    if levels == 0 || ratios.len() != levels {
        return Err(Error::Config(format!("hierarchical profile needs {levels} ratios, got {}", ratios.len())));
    }
    let mut branch = 1usize;
    while branch.pow(levels as u32) < k {
        branch += 1;
    }
    // Path digits: digit 0 is the coarsest level.
    let mut means = vec![vec![0.0; d]; k];
    let mut groups: Vec<Vec<usize>> = vec![(0..k).collect()];
    for level in (0..levels).rev() {
        let mut next = Vec::new();
        for g in groups {
            let size = branch.pow(level as u32);
            let children: Vec<Vec<usize>> = g.chunks(size).map(|c| c.to_vec()).collect();
            let offsets = place_uniform(rng, children.len(), d, ratios[level])?;
            for (child, off) in children.iter().zip(&offsets) {
                for &i in child {
                    means[i].iter_mut().zip(off).for_each(|(m, o)| *m += o);
                }
            }
            next.extend(children);
        }
        groups = next;
    }
    Ok(means)
}

fn make_weights(rng: &mut Rng, k: usize, profile: &WeightProfile) -> Result<Vec<f64>> {
    match profile {
        WeightProfile::Uniform => Ok(vec![1.0 / k as f64; k]),
        WeightProfile::Dirichlet { alpha, floor } => {
            if !(*alpha > 0.0) || *floor < 0.0 || floor * k as f64 > 1.0 {
                return Err(Error::Config(format!("dirichlet alpha={alpha} floor={floor} invalid for k={k}")));
            }
            let gamma = Gamma::new(*alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
            let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
            let total: f64 = g.iter().sum();
            let scale = 1.0 - floor * k as f64;
            let mut w: Vec<f64> = g.iter().map(|x| scale * x / total + floor).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            Ok(w)
        }
        WeightProfile::Explicit { values } => {
            if values.len() != k {
                return Err(Error::Config(format!("{} explicit weights for k={k}", values.len())));
            }
            let total: f64 = values.iter().sum();
            if (total - 1.0).abs() > 1e-9 || values.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::Config(format!("explicit weights must be non-negative and sum to 1 (sum {total})")));
            }
            Ok(values.iter().map(|w| w / total).collect())
        }
    }
}

/// Deterministic mixture from a generator config.
pub fn build_spec(cfg: &GenConfig) -> Result<MixtureSpec> {
    if cfg.k == 0 || cfg.d == 0 {
        return Err(Error::Config("k and d must be positive".into()));
    }
    let mut rng = rng::keyed(cfg.seed, STREAM_PLACEMENT, 0);
    let means = match &cfg.separation {
        SeparationProfile::Uniform { sep } => {
            if !(*sep > 0.0) {
                return Err(Error::Config("separation must be positive".into()));
            }
            place_uniform(&mut rng, cfg.k, cfg.d, *sep)?
        }
        SeparationProfile::Hierarchical { levels, ratios } => place_hierarchical(&mut rng, cfg.k, cfg.d, *levels, ratios)?,
        SeparationProfile::Explicit { means } => {
            if means.len() != cfg.k || means.iter().any(|m| m.len() != cfg.d) {
                return Err(Error::Config("explicit means do not match k and d".into()));
            }
            means.clone()
        }
    };
    let weights = make_weights(&mut rng, cfg.k, &cfg.weights)?;
    MixtureSpec::new(weights, means, cfg.base)
}

/// Writes `n` labeled draws as CSV (id, x_0..x_{d−1}, label) plus the spec
/// as a JSON sidecar.
pub fn write_dataset(csv_path: &Path, spec_path: &Path, spec: &MixtureSpec, n: usize, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let d = spec.d();
    let mut header = vec!["id".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.push("label".into());
    w.write_record(&header)?;
    for (id, s) in sample_stream(spec, seed).take(n).enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(s.x.iter().map(|v| format!("{v:?}")));
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut f = std::fs::File::create(spec_path)?;
    f.write_all(spec.to_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a dataset written by `write_dataset`: rows and (optional) labels.
pub fn read_dataset(csv_path: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let headers = r.headers()?.clone();
    let xcols: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("x_")).map(|(i, _)| i).collect();
    let label_col = headers.iter().position(|h| h == "label");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = xcols
            .iter()
            .map(|&i| rec[i].trim().parse::<f64>().map_err(|e| Error::Config(format!("bad coordinate: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(x);
        if let Some(c) = label_col {
            labels.push(rec[c].trim().parse::<usize>().map_err(|e| Error::Config(format!("bad label: {e}")))?);
        }
    }
    if xcols.is_empty() || rows.is_empty() {
        return Err(Error::EmptySample(format!("{} has no coordinate rows", csv_path.display())));
    }
    Ok((rows, label_col.map(|_| labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, d: usize, sep: SeparationProfile) -> GenConfig {
        GenConfig { k, d, separation: sep, weights: WeightProfile::Uniform, base: BaseDist::Gaussian, seed: 3 }
    }

    #[test]
    fn single_component_at_origin() {
        let spec = build_spec(&cfg(1, 4, SeparationProfile::Uniform { sep: 10.0 })).unwrap();
        assert_eq!(spec.means, vec![vec![0.0; 4]]);
    }

    #[test]
    fn uniform_separation_window() {
        for (k, d) in [(2, 1), (2, 5), (3, 3), (4, 4), (5, 16), (4, 3)] {
            for seed in 0..5 {
                let mut c = cfg(k, d, SeparationProfile::Uniform { sep: 10.0 });
                c.seed = seed;
                let spec = build_spec(&c).unwrap();
                assert!(spec.min_separation() >= 10.0 - 1e-9, "k={k} d={d}");
                assert!(spec.max_separation() <= 12.0 + 1e-9, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn infeasible_placement_errors() {
        assert!(matches!(build_spec(&cfg(5, 1, SeparationProfile::Uniform { sep: 1.0 })), Err(Error::Placement(_))));
    }

    #[test]
    fn hierarchical_levels() {
        let spec = build_spec(&cfg(4, 16, SeparationProfile::Hierarchical { levels: 2, ratios: vec![10.0, 500.0] })).unwrap();
        let d = |i: usize, j: usize| dist(&spec.means[i], &spec.means[j]);
        assert!(d(0, 1) >= 10.0 - 1e-9 && d(0, 1) <= 12.0 + 1e-9);
        assert!(d(2, 3) >= 10.0 - 1e-9 && d(2, 3) <= 12.0 + 1e-9);
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert!(d(i, j) > 480.0 && d(i, j) < 620.0, "{}", d(i, j));
        }
    }

    #[test]
    fn weight_profiles() {
        let mut c = cfg(3, 2, SeparationProfile::Uniform { sep: 5.0 });
        c.weights = WeightProfile::Dirichlet { alpha: 1.0, floor: 0.1 };
        let spec = build_spec(&c).unwrap();
        assert!(spec.w_min() >= 0.1 - 1e-12);
        c.weights = WeightProfile::Explicit { values: vec![0.5, 0.5, 0.1] };
        assert!(matches!(build_spec(&c), Err(Error::Config(_))));
    }

    #[test]
    fn point_mass_stream_hits_means() {
        let spec = MixtureSpec::uniform(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], BaseDist::PointMass).unwrap();
        for s in sample_stream(&spec, 1).take(100) {
            assert_eq!(s.x, spec.means[s.label]);
        }
    }

    #[test]
    fn empirical_weights_are_binomial() {
        let spec = MixtureSpec::new(vec![0.2, 0.3, 0.5], vec![vec![0.0], vec![10.0], vec![20.0]], BaseDist::Gaussian).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 3];
        for s in sample_stream(&spec, 4).take(n) {
            counts[s.label] += 1;
        }
        for i in 0..3 {
            let w = spec.weights[i];
            let f = counts[i] as f64 / n as f64;
            assert!((f - w).abs() <= 4.0 * (w / n as f64).sqrt(), "component {i}: {f}");
        }
    }

    #[test]
    fn streams_are_seed_deterministic() {
        let spec = MixtureSpec::uniform(vec![vec![1.0], vec![-1.0]], BaseDist::Laplace).unwrap();
        let a: Vec<_> = sample_stream(&spec, 9).take(20).collect();
        let b: Vec<_> = sample_stream(&spec, 9).take(20).collect();
        assert_eq!(a, b);
        let c: Vec<_> = sample_stream(&spec, 10).take(20).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn difference_spec_weights() {
        let spec = MixtureSpec::new(vec![0.25, 0.75], vec![vec![0.0], vec![2.0]], BaseDist::Gaussian).unwrap();
        let diff = spec.difference();
        assert_eq!(diff.k(), 3);
        assert!((diff.weights[0] - 0.625).abs() < 1e-12);
        assert!((diff.means[1][0] + std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MixtureSpec::uniform(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], BaseDist::Gaussian).unwrap();
        let (c, j) = (dir.path().join("s.csv"), dir.path().join("s.json"));
        write_dataset(&c, &j, &spec, 25, 2).unwrap();
        let (rows, labels) = read_dataset(&c).unwrap();
        assert_eq!(rows.len(), 25);
        let want: Vec<_> = sample_stream(&spec, 2).take(25).collect();
        for (r, w) in rows.iter().zip(&want) {
            assert_eq!(r, &w.x);
        }
        assert_eq!(labels.unwrap(), want.iter().map(|s| s.label).collect::<Vec<_>>());
        let back: MixtureSpec = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}

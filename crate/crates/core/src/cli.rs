//! Experiment harness behind the `moment-cluster` binary: a strict TOML run
//! configuration with dotted-path overrides, and the generate / cluster /
//! validate / bench commands, each producing a JSON report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::eval::{kmeans, match_means, MatchReport};
use crate::gaussian::{recursive_cluster, GmmParams};
use crate::mixture::{build_spec, read_dataset, write_dataset, GenConfig, MixtureSampler, MixtureSpec, SeparationProfile, WeightProfile};
use crate::pipeline::{iterative_projection, MomentSource};
use crate::poincare::{assign_sample, estimate_weights, learn_means, learn_with_chain, write_assignments, LearnParams, LearnedMixture};
use crate::reduction::{covariance, DimensionReduction};
use crate::rng::{derive, keyed, Stream};
use crate::sample_test::{choose_threshold, PairOutcome, SampleTester, TestConfig};
use crate::sampler::{draw_many_labeled, BaseSampler, DifferenceSampler, EmpiricalSampler, SharedSampler};
use crate::validate::{run_suite, SUITES};

pub const OUT_ENV: &str = "MOMENT_CLUSTER_OUT";
pub const DEFAULT_OUT: &str = "moment-cluster-out";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const LABEL_GEN: u64 = 1;
const LABEL_DATA: u64 = 2;
const LABEL_POINCARE: u64 = 3;
const LABEL_GMM: u64 = 4;
const LABEL_EVAL: u64 = 5;
const LABEL_BENCH: u64 = 6;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every other seed in the run is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub cluster: ClusterConfig,
    pub validate: ValidateConfig,
    pub bench: BenchConfig,
}


/// Where samples come from: a generator, a spec file, or a dataset CSV
/// (optionally with its spec as ground truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub generator: Option<GenConfig>,
    pub spec: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Base distribution of a dataset without a spec.
    pub base: Option<BaseDist>,
    /// Rows written by `generate`; evaluation samples for `cluster`.
    pub n: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { generator: None, spec: None, dataset: None, base: None, n: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVariant {
    Poincare,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub variant: ClusterVariant,
    /// Poincaré variant only: build the chain from the exact moments of the
    /// known spec instead of samples.
    pub oracle: bool,
    /// Accuracy recorded as a pass/fail flag when set.
    pub target_accuracy: Option<f64>,
    pub poincare: LearnParams,
    pub gaussian: GmmParams,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { variant: ClusterVariant::Poincare, oracle: false, target_accuracy: None, poincare: LearnParams::default(), gaussian: GmmParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub suites: Vec<String>,
    /// Multiplier on Monte-Carlo sample counts.
    pub scale: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { suites: SUITES.iter().map(|s| s.to_string()).collect(), scale: 1.0 }
    }
}

/// Pair-test sweep over separation × degree × reps, with a PCA + k-means
/// baseline per separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub k: usize,
    pub d: usize,
    pub base: BaseDist,
    pub separations: Vec<f64>,
    pub degrees: Vec<usize>,
    pub reps: Vec<usize>,
    pub trials: usize,
    pub n_per_stage: usize,
    pub baseline_samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k: 3,
            d: 4,
            base: BaseDist::Gaussian,
            separations: vec![4.0, 8.0, 12.0],
            degrees: vec![2, 3],
            reps: vec![16, 64],
            trials: 200,
            n_per_stage: 10_000,
            baseline_samples: 2000,
        }
    }
}

impl RunConfig {
    /// Parses a TOML document, applies `key.path=value` overrides and checks
    /// the result against the schema.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("config parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(format!("config schema error: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let sources = [self.data.generator.is_some(), self.data.spec.is_some() && self.data.dataset.is_none(), self.data.dataset.is_some()];
        if sources.iter().filter(|&&b| b).count() > 1 {
            return Err(Error::Config("data: give one of generator, spec or dataset (a spec may accompany a dataset as ground truth)".into()));
        }
        if self.data.dataset.is_some() && self.data.spec.is_none() && self.data.base.is_none() {
            return Err(Error::Config("data.base is required for a dataset without a spec".into()));
        }
        if self.validate.scale <= 0.0 {
            return Err(Error::Config("validate.scale must be positive".into()));
        }
        if let Some(s) = self.validate.suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown suite {s:?}; expected one of {}", SUITES.join(", "))));
        }
        let b = &self.bench;
        if b.k == 0 || b.d == 0 || b.trials == 0 || b.separations.is_empty() || b.degrees.is_empty() || b.reps.is_empty() {
            return Err(Error::Config("bench needs k, d, trials ≥ 1 and non-empty separation, degree and reps lists".into()));
        }
        Ok(())
    }

    /// The configuration with all derived seeds filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(g) = c.data.generator.as_mut() {
            g.seed = derive(self.seed, LABEL_GEN);
        }
        c.cluster.poincare.seed = derive(self.seed, LABEL_POINCARE);
        c.cluster.gaussian.seed = derive(self.seed, LABEL_GMM);
        c
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override {spec:?} is not key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = parse_value(raw.trim());
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override {spec:?}: {k} is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal when the text parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub config: RunConfig,
    pub metrics: Value,
    /// Wall-clock seconds; the only field that varies between identical runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed: cfg.seed,
            status: "ok".into(),
            error: None,
            warnings: Vec::new(),
            config: cfg.clone(),
            metrics: Value::Null,
            timings: BTreeMap::new(),
        }
    }

    /// A report for a command that stopped with an error.
    pub fn failure(command: &str, cfg: &RunConfig, e: &Error) -> Self {
        let mut r = Self::new(command, cfg);
        r.fail(e);
        r
    }

    fn fail(&mut self, e: &Error) {
        self.status = "failed".into();
        self.error = Some(e.to_string());
    }

    pub fn failed(&self) -> bool {
        self.status != "ok"
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(format!("{}-report.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// `--out`, else the environment variable, else a local default.
pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn resolve_path(p: &Path, base_dir: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn load_spec(path: &Path) -> Result<MixtureSpec> {
    let spec: MixtureSpec = serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("spec {}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// The ground-truth spec named by the data section, if any.
fn truth_spec(cfg: &RunConfig, base_dir: &Path) -> Result<Option<MixtureSpec>> {
    if let Some(g) = &cfg.data.generator {
        return build_spec(g).map(Some);
    }
    cfg.data.spec.as_ref().map(|p| load_spec(&resolve_path(p, base_dir))).transpose()
}

/// Writes `samples.csv` and `spec.json`.
pub fn cmd_generate(cfg: &RunConfig, base_dir: &Path, out: &Path) -> Result<RunReport> {
    let cfg = cfg.resolved();
    let mut report = RunReport::new("generate", &cfg);
    let t0 = Instant::now();
    let spec = truth_spec(&cfg, base_dir)?.ok_or_else(|| Error::Config("generate needs data.generator or data.spec".into()))?;
    let csv = out.join("samples.csv");
    write_dataset(&csv, &out.join("spec.json"), &spec, cfg.data.n, derive(cfg.seed, LABEL_DATA))?;
    report.metrics = json!({
        "rows": cfg.data.n,
        "k": spec.k(),
        "d": spec.d(),
        "min_separation": spec.min_separation(),
        "max_separation": spec.max_separation(),
        "weights": spec.weights,
        "files": ["samples.csv", "spec.json"],
    });
    report.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(report)
}

struct Source {
    mix: SharedSampler,
    base: BaseDist,
    truth: Option<MixtureSpec>,
    /// Evaluation rows with labels when known.
    eval: Vec<(Vec<f64>, Option<usize>)>,
}

fn open_source(cfg: &RunConfig, base_dir: &Path) -> Result<Source> {
    let truth = truth_spec(cfg, base_dir)?;
    if let Some(path) = &cfg.data.dataset {
        let (rows, labels) = read_dataset(&resolve_path(path, base_dir))?;
        if rows.is_empty() {
            return Err(Error::EmptySample("dataset has no rows".into()));
        }
        let base = match (&truth, cfg.data.base) {
            (_, Some(b)) => b,
            (Some(s), None) => s.base,
            (None, None) => unreachable!("checked by RunConfig::check"),
        };
        let eval = rows.iter().cloned().zip(labels.clone().map_or_else(|| vec![None; rows.len()], |l| l.into_iter().map(Some).collect())).collect();
        let mix = Arc::new(EmpiricalSampler { rows: Arc::new(rows), labels: labels.map(Arc::new) });
        return Ok(Source { mix, base, truth, eval });
    }
    let spec = truth.ok_or_else(|| Error::Config("cluster needs data.generator, data.spec or data.dataset".into()))?;
    let mix: SharedSampler = Arc::new(MixtureSampler::new(spec.clone()));
    let eval = draw_many_labeled(mix.as_ref(), Stream::new(cfg.seed, LABEL_EVAL), 0, cfg.data.n)?;
    Ok(Source { mix, base: spec.base, truth: Some(spec), eval })
}

/// Runs the selected learner; writes `assignments.csv` (and `trail.jsonl`
/// for the Gaussian variant).
pub fn cmd_cluster(cfg: &RunConfig, base_dir: &Path, out: &Path) -> Result<RunReport> {
    let cfg = cfg.resolved();
    let mut report = RunReport::new("cluster", &cfg);
    let t0 = Instant::now();
    let src = open_source(&cfg, base_dir)?;
    let d = src.mix.dim();
    let mut metrics = serde_json::Map::new();
    metrics.insert("variant".into(), json!(cfg.cluster.variant));
    let learned: std::result::Result<(LearnedMixture, f64), Error> = match cfg.cluster.variant {
        ClusterVariant::Poincare => {
            let p = &cfg.cluster.poincare;
            p.validate()?;
            let base: SharedSampler = Arc::new(BaseSampler::new(src.base, d));
            let run = if cfg.cluster.oracle {
                let spec = src.truth.as_ref().ok_or_else(|| Error::Config("cluster.oracle needs a known spec".into()))?;
                let t = p.t.unwrap_or(2);
                let chain = iterative_projection(&MomentSource::Exact(&spec.difference()), t, p.k * (p.k - 1) + 1)?;
                learn_with_chain(src.mix.clone(), base, &chain, p).and_then(|(mut l, _)| {
                    let (w, amb) = estimate_weights(src.mix.as_ref(), &l.means, l.meta.band, p)?;
                    l.weights = w;
                    l.meta.ambiguous_assignments = amb;
                    Ok(l)
                })
            } else {
                learn_means(src.mix.clone(), base, p).map(|(l, _)| l)
            };
            run.map(|l| {
                if let Some(w) = &l.meta.regime_warning {
                    report.warnings.push(w.clone());
                }
                if l.meta.guarantee_void {
                    report.warnings.push("threshold is outside the regime where the test guarantee applies".into());
                }
                let band = l.meta.band;
                metrics.insert("meta".into(), json!(l.meta));
                (l, band)
            })
        }
        ClusterVariant::Gaussian => {
            let p = &cfg.cluster.gaussian;
            p.validate()?;
            if src.base != BaseDist::Gaussian {
                report.warnings.push(format!("recursive Gaussian clustering run on a {} base", src.base));
            }
            match recursive_cluster(src.mix.clone(), p, src.truth.as_ref()) {
                Ok(o) => {
                    std::fs::write(out.join("trail.jsonl"), o.events_jsonl()?)?;
                    metrics.insert("refinements".into(), json!(o.refinements()));
                    metrics.insert("events".into(), json!(o.events.len()));
                    match &o.error {
                        Some(e) => Err(Error::IsolateFailed(e.clone())),
                        None => Ok((o.learned, p.constants.cluster_band * p.sep)),
                    }
                }
                Err(e) => Err(e),
            }
        }
    };
    report.timings.insert("learn".into(), t0.elapsed().as_secs_f64());
    let (learned, band) = match learned {
        Ok(x) => x,
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => {
            report.fail(&e);
            report.metrics = Value::Object(metrics);
            return Ok(report);
        }
    };
    metrics.insert("means".into(), json!(learned.means));
    metrics.insert("weights".into(), json!(learned.weights));
    let rows: Vec<Vec<f64>> = src.eval.iter().map(|(x, _)| x.clone()).collect();
    if !learned.means.is_empty() {
        write_assignments(&out.join("assignments.csv"), &rows, &learned.means, band)?;
    }
    if let Some(spec) = &src.truth {
        let m = match_means(&spec.means, &learned.means, Some(&spec.weights), Some(&learned.weights));
        metrics.insert("match".into(), match_json(&m));
        if let Some(acc) = label_accuracy(&src.eval, &learned.means, band, &m)? {
            metrics.insert("accuracy".into(), json!(acc));
            if let Some(target) = cfg.cluster.target_accuracy {
                metrics.insert("target_accuracy".into(), json!(target));
                metrics.insert("target_met".into(), json!(acc >= target));
            }
        }
    }
    report.metrics = Value::Object(metrics);
    report.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(report)
}

fn match_json(m: &MatchReport) -> Value {
    let finite = |x: f64| if x.is_finite() { json!(x) } else { Value::Null };
    json!({
        "pairs": m.pairs,
        "mean_errors": m.mean_errors,
        "max_mean_error": finite(m.max_mean_error),
        "max_weight_error": m.max_weight_error,
        "missing": m.missing,
        "extra": m.extra,
    })
}

/// Fraction of labeled rows whose assigned mean is matched to their label.
fn label_accuracy(eval: &[(Vec<f64>, Option<usize>)], means: &[Vec<f64>], band: f64, m: &MatchReport) -> Result<Option<f64>> {
    if means.is_empty() || eval.is_empty() || eval.iter().any(|(_, l)| l.is_none()) {
        return Ok(None);
    }
    let mut to_truth = vec![usize::MAX; means.len()];
    for &(i, j) in &m.pairs {
        to_truth[j] = i;
    }
    let mut hits = 0usize;
    for (x, l) in eval {
        hits += (to_truth[assign_sample(x, means, band)?.index] == l.unwrap()) as usize;
    }
    Ok(Some(hits as f64 / eval.len() as f64))
}

/// Runs the named suites (all configured suites when `selectors` is empty).
pub fn cmd_validate(cfg: &RunConfig, selectors: &[String]) -> Result<RunReport> {
    let mut cfg = cfg.resolved();
    if !selectors.is_empty() {
        if let Some(s) = selectors.iter().find(|s| !SUITES.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown suite {s:?}; expected one of {}", SUITES.join(", "))));
        }
        cfg.validate.suites = selectors.to_vec();
    }
    let mut report = RunReport::new("validate", &cfg);
    let mut results = Vec::new();
    for s in &cfg.validate.suites {
        let t0 = Instant::now();
        let r = run_suite(s, derive(cfg.seed, fnv(s)), cfg.validate.scale)?;
        report.timings.insert(s.clone(), t0.elapsed().as_secs_f64());
        results.push(r);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.suite.as_str()).collect();
    if !failed.is_empty() {
        report.fail(&Error::Numeric(format!("suites out of tolerance: {}", failed.join(", "))));
    }
    report.metrics = json!({ "suites": results });
    Ok(report)
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Pair-test accuracy per (separation, degree, reps) cell and a PCA +
/// k-means baseline per separation.
pub fn cmd_bench(cfg: &RunConfig) -> Result<RunReport> {
    let cfg = cfg.resolved();
    let b = &cfg.bench;
    let mut report = RunReport::new("bench", &cfg);
    let mut cells = Vec::new();
    let mut baseline = Vec::new();
    for (si, &sep) in b.separations.iter().enumerate() {
        let gen = GenConfig {
            k: b.k,
            d: b.d,
            separation: SeparationProfile::Uniform { sep },
            weights: WeightProfile::Uniform,
            base: b.base,
            seed: derive(cfg.seed, LABEL_BENCH + si as u64),
        };
        let spec = build_spec(&gen)?;
        let sampler = MixtureSampler::new(spec.clone());
        let mix: SharedSampler = Arc::new(sampler.clone());
        let t0 = Instant::now();
        baseline.push(json!({ "separation": sep, "accuracy": pca_kmeans_accuracy(&spec, &sampler, b.baseline_samples, derive(cfg.seed, 100 + si as u64))? }));
        report.timings.insert(format!("baseline/sep={sep}"), t0.elapsed().as_secs_f64());
        for &t in &b.degrees {
            let dm = DifferenceSampler::new(mix.clone());
            let db = DifferenceSampler::new(Arc::new(BaseSampler::new(b.base, b.d)));
            let width = b.k * (b.k - 1) + 1;
            let chain = iterative_projection(&MomentSource::Sampled { mix: &dm, base: &db, n_per_stage: b.n_per_stage, seed: derive(cfg.seed, 200 + si as u64 * 16 + t as u64) }, t, width)?;
            for &reps in &b.reps {
                let t0 = Instant::now();
                let tester = SampleTester::new(&chain.np, TestConfig::new(t, choose_threshold(sep, t), reps, 0.05)?, &db)?;
                let stream = Stream::new(derive(cfg.seed, 300 + si as u64), (t * 1000 + reps) as u64);
                let (correct, same_ok, cross_ok, same_n) = pair_accuracy(&sampler, &tester, stream, b.trials)?;
                let key = format!("sep={sep}/t={t}/reps={reps}");
                report.timings.insert(key.clone(), t0.elapsed().as_secs_f64());
                let se = (correct * (1.0 - correct) / b.trials as f64).sqrt();
                cells.push(json!({
                    "separation": sep,
                    "t": t,
                    "reps": reps,
                    "tau": tester.cfg.tau,
                    "trials": b.trials,
                    "accuracy": correct,
                    "accuracy_se": se,
                    "same_accept_rate": if same_n > 0 { same_ok as f64 / same_n as f64 } else { f64::NAN },
                    "cross_reject_rate": if same_n < b.trials { cross_ok as f64 / (b.trials - same_n) as f64 } else { f64::NAN },
                }));
            }
        }
    }
    let monotone = monotone_in_separation(&cells, b);
    report.metrics = json!({ "grid_size": cells.len(), "cells": cells, "baseline": baseline, "monotone_in_separation": monotone });
    Ok(report)
}

/// Accuracy non-decreasing along separation for every (t, reps) pair, up to
/// 1.96 combined standard errors.
fn monotone_in_separation(cells: &[Value], b: &BenchConfig) -> bool {
    let get = |c: &Value, k: &str| c[k].as_f64().unwrap_or(f64::NAN);
    let mut seps = b.separations.clone();
    seps.sort_by(f64::total_cmp);
    for &t in &b.degrees {
        for &reps in &b.reps {
            let row: Vec<&Value> = seps
                .iter()
                .filter_map(|&s| cells.iter().find(|c| get(c, "separation") == s && c["t"] == json!(t) && c["reps"] == json!(reps)))
                .collect();
            for w in row.windows(2) {
                let slack = 1.96 * (get(w[0], "accuracy_se").powi(2) + get(w[1], "accuracy_se").powi(2)).sqrt();
                if get(w[1], "accuracy") + slack < get(w[0], "accuracy") {
                    return false;
                }
            }
        }
    }
    true
}

/// Half the trials pair two draws of one component, half draw two distinct
/// components; correct means accept on same, reject on cross.
fn pair_accuracy(mix: &MixtureSampler, tester: &SampleTester<'_>, stream: Stream, trials: usize) -> Result<(f64, usize, usize, usize)> {
    use rand::Rng as _;
    let spec = &mix.spec;
    let k = spec.k();
    let (mut same_ok, mut cross_ok, mut same_n) = (0usize, 0usize, 0usize);
    for i in 0..trials as u64 {
        let mut rng = stream.at(i);
        let same = k == 1 || i % 2 == 0;
        let a = rng.gen_range(0..k);
        let b = if same { a } else { (a + rng.gen_range(1..k)) % k };
        let draw = |c: usize, rng: &mut crate::rng::Rng| -> Vec<f64> { spec.base.draw(rng, spec.d()).iter().zip(&spec.means[c]).map(|(x, m)| x + m).collect() };
        let z = draw(a, &mut rng);
        let x = draw(b, &mut rng);
        let accepted = tester.pair(&z, &x, derive(stream.seed, i))? == PairOutcome::Accept;
        if same {
            same_n += 1;
            same_ok += accepted as usize;
        } else {
            cross_ok += (!accepted) as usize;
        }
    }
    Ok(((same_ok + cross_ok) as f64 / trials as f64, same_ok, cross_ok, same_n))
}

/// Projects onto the top-k principal directions and runs k-means; accuracy
/// under the best label matching.
fn pca_kmeans_accuracy(spec: &MixtureSpec, mix: &MixtureSampler, n: usize, seed: u64) -> Result<f64> {
    let k = spec.k();
    let labeled = draw_many_labeled(mix, Stream::new(seed, 0), 0, n.max(k))?;
    let xs: Vec<Vec<f64>> = labeled.iter().map(|(x, _)| x.clone()).collect();
    let d = spec.d();
    let center: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect();
    let red = DimensionReduction::from_moments(center, &covariance(&xs), k.min(d))?;
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| red.project(x)).collect();
    let centers = kmeans(&ys, k, 100, &mut keyed(seed, 1, 0))?;
    let nearest = |y: &[f64]| (0..centers.len()).min_by(|&a, &b| crate::mixture::dist(y, &centers[a]).total_cmp(&crate::mixture::dist(y, &centers[b]))).unwrap();
    let mut counts = vec![vec![0.0; k]; k];
    for (y, (_, l)) in ys.iter().zip(&labeled) {
        counts[l.expect("mixture draws are labeled")][nearest(y)] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let assign = crate::eval::hungarian(&cost);
    Ok(assign.iter().enumerate().map(|(i, &j)| counts[i][j]).sum::<f64>() / n.max(k) as f64)
}

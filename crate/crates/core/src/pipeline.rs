//! Iterative projection: estimating the projected moment matrices A_{2s} and
//! building the chain Π_1, …, Π_t from their top eigenvectors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;
use crate::poly::SubsetPlan;
use crate::projection::{NestedProjection, ProjectionRecord, Workspace};
use crate::rng::Stream;
use crate::sampler::Sampler;

pub const STREAM_STAGE: u64 = 0x57a6e;
/// Samples per accumulation block; blocks are reduced in index order so the
/// result does not depend on the worker count.
pub const BLOCK: usize = 256;
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct MomentMatrixEstimate {
    pub matrix: DMatrix<f64>,
    pub samples_used: usize,
    pub degree: usize,
    /// Batch-means standard error of the matrix in Frobenius norm; absent
    /// when all samples fit in one block.
    pub std_error: Option<f64>,
}

fn block_sum(
    mix: &dyn Sampler,
    base: &dyn Sampler,
    s: usize,
    np_prev: &NestedProjection,
    plan: &SubsetPlan,
    stream: Stream,
    range: std::ops::Range<usize>,
) -> Result<DMatrix<f64>> {
    let m = np_prev.d * np_prev.width();
    let terms = plan.term_count();
    let mut rows = Vec::with_capacity(range.len() * terms * m);
    let mut scaled = Vec::with_capacity(range.len() * terms * m);
    let mut ws = Workspace::default();
    let mut scratch = Vec::new();
    let mut v = vec![0.0; m];
    for i in range.clone() {
        let mut rng = stream.at(i as u64);
        let mut samples = Vec::with_capacity(4 * s);
        samples.push(mix.draw(&mut rng)?);
        for _ in 1..4 * s {
            samples.push(base.draw(&mut rng)?);
        }
        let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        plan.for_each_term(&refs, &mut scratch, |c, y| {
            np_prev.kron_block_power_into(y, &mut ws, &mut v);
            rows.extend_from_slice(&v);
            scaled.extend(v.iter().map(|x| c * x));
        });
    }
    let n = rows.len() / m.max(1);
    let vm = DMatrix::from_row_slice(n, m, &rows);
    let wm = DMatrix::from_row_slice(n, m, &scaled);
    let mut out = DMatrix::zeros(m, m);
    out.gemm_tr(1.0, &vm, &wm, 0.0);
    Ok(out)
}

/// Monte-Carlo estimate of A_{2s} = Σ_i w_i v_i v_iᵀ with
/// v_i = (I_d ⊗ Γ_{s−1}) flat(μ_i^{⊗s}), from `n` mixture samples each paired
/// with 4s−1 fresh base samples through the rank-1 estimator R_{2s}.
pub fn estimate_moment_matrix(
    mix: &dyn Sampler,
    base: &dyn Sampler,
    s: usize,
    np_prev: &NestedProjection,
    n: usize,
    stream: Stream,
) -> Result<MomentMatrixEstimate> {
    if n == 0 {
        return Err(Error::EmptySample("moment estimation needs at least one sample".into()));
    }
    if s == 0 || np_prev.depth() != s - 1 {
        return Err(Error::Shape(format!("degree {s} needs a {}-stage chain, got {}", s.saturating_sub(1), np_prev.depth())));
    }
    if mix.dim() != np_prev.d || base.dim() != np_prev.d {
        return Err(Error::Shape(format!(
            "samplers of dimension {}/{} for a chain in dimension {}",
            mix.dim(),
            base.dim(),
            np_prev.d
        )));
    }
    let plan = SubsetPlan::new(2 * s)?;
    let blocks: Vec<std::ops::Range<usize>> = (0..n).step_by(BLOCK).map(|a| a..(a + BLOCK).min(n)).collect();
    let partials = blocks
        .par_iter()
        .map(|r| block_sum(mix, base, s, np_prev, &plan, stream, r.clone()))
        .collect::<Result<Vec<_>>>()?;
    let m = np_prev.d * np_prev.width();
    let mut total = DMatrix::<f64>::zeros(m, m);
    for p in &partials {
        total += p;
    }
    let mut matrix = total / n as f64;
    matrix = (&matrix + matrix.transpose()) * 0.5;
    let std_error = if partials.len() > 1 {
        let nb = partials.len() as f64;
        let ss: f64 = partials
            .iter()
            .zip(&blocks)
            .map(|(p, r)| (p / r.len() as f64 - &matrix).norm_squared() * r.len() as f64 / BLOCK as f64)
            .sum();
        Some((ss / (nb * (nb - 1.0))).sqrt())
    } else {
        None
    };
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite moment matrix".into()));
    }
    Ok(MomentMatrixEstimate { matrix, samples_used: n, degree: 2 * s, std_error })
}

/// Σ_i w_i v_i v_iᵀ with v_i = apply_kron_block(np_prev, μ_i, (μ_i, …, μ_i)).
pub fn exact_moment_matrix(spec: &MixtureSpec, np_prev: &NestedProjection) -> Result<DMatrix<f64>> {
    let m = np_prev.d * np_prev.width();
    let mut out = DMatrix::zeros(m, m);
    for (w, mu) in spec.weights.iter().zip(&spec.means) {
        let tail = vec![mu.as_slice(); np_prev.depth()];
        let v = nalgebra::DVector::from_vec(np_prev.apply_kron_block(mu, &tail)?);
        out.ger(*w, &v, &v, 1.0);
    }
    Ok(out)
}

/// Eigenpairs of a symmetric matrix ordered by decreasing |λ|; eigenvectors
/// are sign-normalized (largest-magnitude entry positive) and near-ties in
/// |λ| are ordered lexicographically by eigenvector.
pub fn sorted_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape("eigendecomposition of a non-square matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..m.nrows())
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() + 1e-12 { x } else { best });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    pairs.sort_by(|a, b| {
        let (x, y) = (a.0.abs(), b.0.abs());
        if (x - y).abs() <= 1e-12 * scale {
            b.1.iter().zip(&a.1).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        } else {
            y.total_cmp(&x)
        }
    });
    Ok(pairs.into_iter().unzip())
}

/// Row-orthonormal basis of the top-k eigenvectors (by |λ|), dropping
/// directions whose eigenvalue is below `RANK_CUTOFF`·‖M‖.
pub fn top_k_subspace(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sorted_eigen(m)?;
    let scale = vals.first().map_or(0.0, |v| v.abs());
    let keep = vals.iter().take(k).take_while(|v| scale > 0.0 && v.abs() > RANK_CUTOFF * scale).count();
    let mut out = DMatrix::zeros(keep, m.nrows());
    for (r, v) in vecs.iter().take(keep).enumerate() {
        for (c, x) in v.iter().enumerate() {
            out[(r, c)] = *x;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub samples: usize,
    pub width: usize,
    /// Leading eigenvalues (by magnitude) of the stage's moment matrix.
    pub eigenvalues: Vec<f64>,
    /// |λ_{c}| − |λ_{c+1}| for the retained width c.
    pub spectral_gap: Option<f64>,
    pub std_error: Option<f64>,
}

impl StageDiagnostics {
    pub fn log_line(&self) -> String {
        let f = |x: Option<f64>| x.map_or("na".to_string(), |v| format!("{v:.6e}"));
        format!(
            "stage={} samples={} width={} spectral_gap={} std_error={}",
            self.stage,
            self.samples,
            self.width,
            f(self.spectral_gap),
            f(self.std_error)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionChain {
    pub np: NestedProjection,
    pub diagnostics: Vec<StageDiagnostics>,
}

pub const CHAIN_FORMAT: &str = "projection-chain";
pub const CHAIN_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub format: String,
    pub version: u32,
    pub projection: ProjectionRecord,
    pub diagnostics: Vec<StageDiagnostics>,
}

impl ProjectionChain {
    pub fn degree(&self) -> usize {
        self.np.depth()
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = ChainRecord {
            format: CHAIN_FORMAT.into(),
            version: CHAIN_VERSION,
            projection: self.np.to_record(),
            diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: ChainRecord = serde_json::from_str(s)?;
        if rec.format != CHAIN_FORMAT || rec.version != CHAIN_VERSION {
            return Err(Error::Config(format!("unsupported chain record {} v{}", rec.format, rec.version)));
        }
        Ok(Self { np: NestedProjection::from_record(&rec.projection)?, diagnostics: rec.diagnostics })
    }
}

/// Where the stage matrices come from.
pub enum MomentSource<'a> {
    Sampled { mix: &'a dyn Sampler, base: &'a dyn Sampler, n_per_stage: usize, seed: u64 },
    /// Exact A_{2s} from a known mixture (oracle mode).
    Exact(&'a MixtureSpec),
}

/// Π_1 = I_d, then Π_s = top_k_subspace(A_{2s}, k) for s = 2..t. Stage s of
/// the sampled source draws from its own stream, so no sample is shared
/// between stages.
pub fn iterative_projection(source: &MomentSource<'_>, t: usize, k: usize) -> Result<ProjectionChain> {
    if t == 0 || k == 0 {
        return Err(Error::Config("iterative projection needs t ≥ 1 and k ≥ 1".into()));
    }
    let d = match source {
        MomentSource::Sampled { mix, .. } => mix.dim(),
        MomentSource::Exact(spec) => spec.d(),
    };
    let mut np = NestedProjection::identity(d);
    let mut diagnostics = vec![StageDiagnostics {
        stage: 1,
        samples: 0,
        width: d,
        eigenvalues: Vec::new(),
        spectral_gap: None,
        std_error: None,
    }];
    for s in 2..=t {
        let (matrix, samples, std_error) = match source {
            MomentSource::Sampled { mix, base, n_per_stage, seed } => {
                let est = estimate_moment_matrix(*mix, *base, s, &np, *n_per_stage, Stream::new(*seed, STREAM_STAGE + s as u64))?;
                (est.matrix, est.samples_used, est.std_error)
            }
            MomentSource::Exact(spec) => (exact_moment_matrix(spec, &np)?, 0, None),
        };
        let stage = top_k_subspace(&matrix, k)?;
        let (vals, _) = sorted_eigen(&matrix)?;
        let width = stage.nrows();
        let gap = match (width.checked_sub(1).and_then(|i| vals.get(i)), vals.get(width)) {
            (Some(a), Some(b)) => Some(a.abs() - b.abs()),
            (Some(a), None) => Some(a.abs()),
            _ => None,
        };
        let diag = StageDiagnostics {
            stage: s,
            samples,
            width,
            eigenvalues: vals.iter().take(k + 1).copied().collect(),
            spectral_gap: gap,
            std_error,
        };
        log::info!("{}", diag.log_line());
        np.push_stage(stage)?;
        diagnostics.push(diag);
    }
    Ok(ProjectionChain { np, diagnostics })
}

//! The nested projection Γ = Π_s (I_d ⊗ Π_{s−1} (I_d ⊗ … Π_1)), applied
//! lazily to rank-1 tensors.
//!
//! Stage j has shape c_j × (d·c_{j−1}) with c_0 = 1. Applied to
//! u_1 ⊗ … ⊗ u_s the innermost stage Π_1 consumes the last factor u_s and stage
//! j consumes u_{s−j+1}; this is the only order consistent with row-major
//! flattening and the Kronecker form above.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kron_flatten;

pub const ORTHO_TOL: f64 = 1e-12;
pub const DENSE_GUARD: usize = 10_000;

/// One row-orthonormal stage, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Stage {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn apply(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.cols == 0 {
            out.resize(self.rows, 0.0);
            return;
        }
        out.extend(self.data.chunks_exact(self.cols).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()));
    }

    /// Largest entry of ΠΠᵀ − I.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.to_matrix();
        let g = &m * m.transpose();
        (g - DMatrix::identity(self.rows, self.rows)).amax()
    }
}

/// Re-orthonormalizes the rows of `m` with a QR pass, keeping each row's
/// orientation.
fn orthonormalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows > cols {
        return Err(Error::Shape(format!("{rows} orthonormal rows cannot fit in dimension {cols}")));
    }
    let qr = m.transpose().qr();
    let r = qr.r();
    if (0..rows).any(|i| r[(i, i)].abs() < 1e-12) {
        return Err(Error::Numeric("projection stage has dependent rows".into()));
    }
    let mut q = qr.q().transpose();
    for i in 0..rows {
        if r[(i, i)] < 0.0 {
            q.row_mut(i).neg_mut();
        }
    }
    Ok(q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedProjection {
    pub d: usize,
    pub stages: Vec<Stage>,
}

/// Reusable buffers for lazy application.
#[derive(Default, Clone, Debug)]
pub struct Workspace {
    kron: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NestedProjection {
    /// The chain with no stages; Γ maps the empty tensor product to the scalar 1.
    pub fn empty(d: usize) -> Self {
        Self { d, stages: Vec::new() }
    }

    pub fn identity(d: usize) -> Self {
        Self { d, stages: vec![Stage::from_matrix(&DMatrix::identity(d, d))] }
    }

    pub fn new(d: usize, stages: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut np = Self::empty(d);
        for s in stages {
            np.push_stage(s)?;
        }
        Ok(np)
    }

    /// Appends Π_{s+1}; rows are re-orthonormalized if they drift from
    /// orthonormality by more than `ORTHO_TOL`.
    pub fn push_stage(&mut self, m: DMatrix<f64>) -> Result<()> {
        let expected = self.d * self.width();
        if m.ncols() != expected {
            return Err(Error::Shape(format!(
                "stage {} needs {} columns, got {}",
                self.stages.len() + 1,
                expected,
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite projection entry".into()));
        }
        let mut stage = Stage::from_matrix(&m);
        if m.nrows() > 0 && stage.orthonormality_error() > ORTHO_TOL {
            stage = Stage::from_matrix(&orthonormalize_rows(&m)?);
        }
        self.stages.push(stage);
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    /// c_s, the output width (1 for the empty chain).
    pub fn width(&self) -> usize {
        self.stages.last().map_or(1, |s| s.rows)
    }

    /// c_0 = 1, c_1, …, c_s.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.stages.iter().map(|s| s.rows)).collect()
    }

    /// The chain formed by the first `s` stages.
    pub fn truncated(&self, s: usize) -> Self {
        Self { d: self.d, stages: self.stages[..s.min(self.depth())].to_vec() }
    }

    fn check_factors(&self, n: usize, dims: impl Iterator<Item = usize>) -> Result<()> {
        if n != self.depth() {
            return Err(Error::Shape(format!("{} factors for a {}-stage projection", n, self.depth())));
        }
        for len in dims {
            if len != self.d {
                return Err(Error::Shape(format!("factor of dimension {len}, expected {}", self.d)));
            }
        }
        Ok(())
    }

    /// Γ·flatten(u_1 ⊗ … ⊗ u_s).
    pub fn apply_rank1(&self, factors: &[&[f64]]) -> Result<Vec<f64>> {
        self.check_factors(factors.len(), factors.iter().map(|f| f.len()))?;
        let mut ws = Workspace::default();
        Ok(self.apply_with(|j| factors[j], &mut ws).to_vec())
    }

    /// Γ·flatten(y^{⊗s}).
    pub fn apply_power(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_factors(self.depth(), std::iter::once(y.len()))?;
        let mut ws = Workspace::default();
        Ok(self.apply_with(|_| y, &mut ws).to_vec())
    }

    /// Unchecked lazy application; `factor(i)` returns u_{i+1}.
    pub fn apply_with<'a, 'f>(&self, factor: impl Fn(usize) -> &'f [f64], ws: &'a mut Workspace) -> &'a [f64] {
        let s = self.depth();
        ws.a.clear();
        ws.a.push(1.0);
        for (j, stage) in self.stages.iter().enumerate() {
            let u = factor(s - 1 - j);
            ws.kron.clear();
            for &x in u {
                ws.kron.extend(ws.a.iter().map(|&w| x * w));
            }
            stage.apply(&ws.kron, &mut ws.b);
            std::mem::swap(&mut ws.a, &mut ws.b);
        }
        &ws.a
    }

    /// flatten(left ⊗ Γ·flatten(tail)), the (I_d ⊗ Γ) image of a rank-1 block.
    pub fn apply_kron_block(&self, left: &[f64], tail: &[&[f64]]) -> Result<Vec<f64>> {
        if left.len() != self.d {
            return Err(Error::Shape(format!("left factor of dimension {}, expected {}", left.len(), self.d)));
        }
        let inner = self.apply_rank1(tail)?;
        Ok(kron_flatten(&[left, &inner]))
    }

    /// flatten(y ⊗ Γ·flatten(y^{⊗s})) written into `out`.
    pub fn kron_block_power_into(&self, y: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        let inner = self.apply_with(|_| y, ws);
        let c = inner.len();
        for (i, &a) in y.iter().enumerate() {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(inner) {
                *o = a * b;
            }
        }
    }

    /// Explicit c_s × d^s matrix of Γ.
    pub fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        let s = self.depth() as u32;
        match self.d.checked_pow(s) {
            Some(n) if n <= DENSE_GUARD => {}
            _ => return Err(Error::SizeLimit(format!("dense Γ with d={} and s={s}", self.d))),
        }
        let mut g = DMatrix::<f64>::identity(1, 1);
        for stage in &self.stages {
            let lifted = DMatrix::<f64>::identity(self.d, self.d).kronecker(&g);
            g = stage.to_matrix() * lifted;
        }
        Ok(g)
    }

    /// sqrt(max(0, Π‖u_j‖² − ‖Γ·flatten(u)‖²)).
    pub fn residual_norm(&self, factors: &[&[f64]]) -> Result<f64> {
        let p = self.apply_rank1(factors)?;
        let total: f64 = factors.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>()).product();
        let kept: f64 = p.iter().map(|x| x * x).sum();
        Ok((total - kept).max(0.0).sqrt())
    }

    pub fn to_record(&self) -> ProjectionRecord {
        ProjectionRecord {
            format: RECORD_FORMAT.to_string(),
            version: RECORD_VERSION,
            ambient_dim: self.d,
            stages: self.stages.clone(),
        }
    }

    pub fn from_record(rec: &ProjectionRecord) -> Result<Self> {
        if rec.format != RECORD_FORMAT || rec.version != RECORD_VERSION {
            return Err(Error::Config(format!("unsupported projection record {} v{}", rec.format, rec.version)));
        }
        let mut np = Self::empty(rec.ambient_dim);
        for st in &rec.stages {
            if st.data.len() != st.rows * st.cols {
                return Err(Error::Shape("stage data does not match its shape".into()));
            }
            np.push_stage(st.to_matrix())?;
        }
        Ok(np)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(s)?)
    }
}

pub const RECORD_FORMAT: &str = "nested-projection";
pub const RECORD_VERSION: u32 = 1;

/// Serialized form: stage shapes plus row-major entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionRecord {
    pub format: String,
    pub version: u32,
    pub ambient_dim: usize,
    pub stages: Vec<Stage>,
}

/// A random c × m matrix with orthonormal rows (test and benchmark helper).
pub fn random_row_orthonormal(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let g = DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    orthonormalize_rows(&g).expect("gaussian matrices have full row rank")
}

/// A random chain with the given widths c_1..c_s.
pub fn random_chain(rng: &mut crate::rng::Rng, d: usize, widths: &[usize]) -> NestedProjection {
    let mut np = NestedProjection::empty(d);
    for &c in widths {
        let cols = d * np.width();
        np.push_stage(random_row_orthonormal(rng, c.min(cols), cols)).expect("shapes chain");
    }
    np
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn rv(rng: &mut crate::rng::Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn identity_stage_returns_factor() {
        let np = NestedProjection::identity(3);
        assert_eq!(np.apply_rank1(&[&[1.0, -2.0, 0.5]]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(np.residual_norm(&[&[1.0, -2.0, 0.5]]).unwrap() < 1e-12);
    }

    #[test]
    fn two_stage_small_example() {
        let np = NestedProjection::new(
            2,
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])],
        )
        .unwrap();
        let (u, v) = ([2.0, 3.0], [5.0, 7.0]);
        let lazy = np.apply_rank1(&[&u, &v]).unwrap();
        assert_eq!(lazy, vec![u[0] * v[0]]);
        let dense = np.dense_matrix().unwrap() * nalgebra::DVector::from_vec(kron_flatten(&[&u, &v]));
        assert!((dense[0] - lazy[0]).abs() < 1e-14);
    }

    #[test]
    fn empty_chain_kron_block_is_left_factor() {
        let np = NestedProjection::empty(2);
        assert_eq!(np.apply_kron_block(&[1.0, 2.0], &[]).unwrap(), vec![1.0, 2.0]);
        let id = NestedProjection::identity(2);
        assert_eq!(id.apply_kron_block(&[1.0, 2.0], &[&[3.0, 4.0]]).unwrap(), vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn shape_errors() {
        let np = NestedProjection::identity(2);
        assert!(matches!(np.apply_rank1(&[&[1.0, 2.0], &[1.0, 2.0]]), Err(Error::Shape(_))));
        assert!(matches!(np.apply_rank1(&[&[1.0]]), Err(Error::Shape(_))));
        let mut np = NestedProjection::identity(2);
        assert!(np.push_stage(DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn drifted_rows_are_reorthonormalized() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.1, 0.0, 0.0, 2.0, 0.0]);
        let np = NestedProjection::new(3, vec![m]).unwrap();
        assert!(np.stages[0].orthonormality_error() < 1e-12);
        assert!(np.stages[0].data[0] > 0.0);
    }

    #[test]
    fn lazy_matches_dense_and_rows_stay_orthonormal() {
        let mut rng = crate::rng::keyed(1, 2, 3);
        for d in 1..=4 {
            for s in 1..=4 {
                let widths: Vec<usize> = (0..s).map(|j| if j == 0 { d } else { d.max(2) }).collect();
                let np = random_chain(&mut rng, d, &widths);
                let g = np.dense_matrix().unwrap();
                let gram = &g * g.transpose();
                assert!((gram - DMatrix::identity(g.nrows(), g.nrows())).amax() < 1e-10);
                for _ in 0..20 {
                    let f: Vec<Vec<f64>> = (0..s).map(|_| rv(&mut rng, d)).collect();
                    let refs: Vec<&[f64]> = f.iter().map(Vec::as_slice).collect();
                    let lazy = np.apply_rank1(&refs).unwrap();
                    let dense = &g * nalgebra::DVector::from_vec(kron_flatten(&refs));
                    for (a, b) in lazy.iter().zip(dense.iter()) {
                        assert!((a - b).abs() < 1e-10);
                    }
                    let res = np.residual_norm(&refs).unwrap();
                    let total: f64 = refs.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>()).product();
                    let kept: f64 = lazy.iter().map(|x| x * x).sum();
                    assert!((res * res + kept - total).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let mut rng = crate::rng::keyed(9, 0, 0);
        let np = random_chain(&mut rng, 3, &[3, 4, 2]);
        let back = NestedProjection::from_json(&np.to_json().unwrap()).unwrap();
        assert_eq!(np, back);
        assert!(NestedProjection::from_json("{\"format\":\"x\",\"version\":1,\"ambient_dim\":1,\"stages\":[]}").is_err());
    }
}

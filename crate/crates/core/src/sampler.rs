//! Sample access. A sampler turns a dedicated generator into one draw; callers
//! key the generator by (seed, stream, index) so every draw is reproducible in
//! isolation.

use std::sync::Arc;

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;

    fn draw(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.draw_labeled(rng)?.0)
    }

    /// A draw together with its true component when the sampler knows it.
    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)>;
}

pub type SharedSampler = Arc<dyn Sampler>;

/// Draws items `start..start+n` of `stream`.
pub fn draw_many(s: &dyn Sampler, stream: Stream, start: u64, n: usize) -> Result<Vec<Vec<f64>>> {
    (0..n as u64).map(|i| s.draw(&mut stream.at(start + i))).collect()
}

pub fn draw_many_labeled(s: &dyn Sampler, stream: Stream, start: u64, n: usize) -> Result<Vec<(Vec<f64>, Option<usize>)>> {
    (0..n as u64).map(|i| s.draw_labeled(&mut stream.at(start + i))).collect()
}

/// I.i.d. draws from a base distribution.
#[derive(Clone, Debug)]
pub struct BaseSampler {
    pub dist: BaseDist,
    pub d: usize,
}

impl BaseSampler {
    pub fn new(dist: BaseDist, d: usize) -> Self {
        Self { dist, d }
    }
}

impl Sampler for BaseSampler {
    fn dim(&self) -> usize {
        self.d
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        Ok((self.dist.draw(rng, self.d), None))
    }
}

/// (z − z')/√2 for two independent draws of the inner sampler. The label of
/// a same-component pair is `Some(0)`; cross pairs are `Some(1 + a·n + b)`
/// when the inner labels are known and `n` is supplied.
pub struct DifferenceSampler {
    pub inner: SharedSampler,
    pub components: Option<usize>,
}

impl DifferenceSampler {
    pub fn new(inner: SharedSampler) -> Self {
        Self { inner, components: None }
    }
}

impl Sampler for DifferenceSampler {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        let (a, la) = self.inner.draw_labeled(rng)?;
        let (b, lb) = self.inner.draw_labeled(rng)?;
        let label = match (la, lb, self.components) {
            (Some(x), Some(y), _) if x == y => Some(0),
            (Some(x), Some(y), Some(n)) => Some(1 + x * n + y),
            _ => None,
        };
        Ok((a.iter().zip(&b).map(|(x, y)| (x - y) / std::f64::consts::SQRT_2).collect(), label))
    }
}

/// Appends `extra` fresh standard-normal coordinates to every draw.
pub struct PaddedSampler {
    pub inner: SharedSampler,
    pub extra: usize,
}

impl Sampler for PaddedSampler {
    fn dim(&self) -> usize {
        self.inner.dim() + self.extra
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        let (mut x, l) = self.inner.draw_labeled(rng)?;
        let start = x.len();
        x.resize(start + self.extra, 0.0);
        BaseDist::Gaussian.fill(rng, &mut x[start..]);
        Ok((x, l))
    }
}

/// x ↦ Bᵀ(x − center) for a d×m basis B with orthonormal columns, stored as
/// m rows of length d.
pub struct ProjectedSampler {
    pub inner: SharedSampler,
    pub center: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl ProjectedSampler {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(x).zip(&self.center).map(|((a, b), c)| a * (b - c)).sum())
            .collect()
    }
}

impl Sampler for ProjectedSampler {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        let (x, l) = self.inner.draw_labeled(rng)?;
        Ok((self.project(&x), l))
    }
}

pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Rejection sampling: redraws from the inner sampler until the predicate
/// holds, failing after `max_tries` attempts.
pub struct FilteredSampler {
    pub inner: SharedSampler,
    pub keep: Predicate,
    pub max_tries: usize,
}

impl Sampler for FilteredSampler {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        for _ in 0..self.max_tries {
            let (x, l) = self.inner.draw_labeled(rng)?;
            if (self.keep)(&x) {
                return Ok((x, l));
            }
        }
        Err(Error::Sampler(format!("rejection sampling exhausted {} tries", self.max_tries)))
    }
}

/// Replays a fixed sample set by index (item i of any stream maps to a
/// uniformly chosen stored row), used when clustering a dataset on disk.
pub struct EmpiricalSampler {
    pub rows: Arc<Vec<Vec<f64>>>,
    pub labels: Option<Arc<Vec<usize>>>,
}

impl Sampler for EmpiricalSampler {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn draw_labeled(&self, rng: &mut Rng) -> Result<(Vec<f64>, Option<usize>)> {
        use rand::Rng as _;
        if self.rows.is_empty() {
            return Err(Error::EmptySample("empirical sampler has no rows".into()));
        }
        let i = rng.gen_range(0..self.rows.len());
        Ok((self.rows[i].clone(), self.labels.as_ref().map(|l| l[i])))
    }
}

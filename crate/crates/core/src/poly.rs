//! Adjusted polynomials, Hermite tensors and the rank-1 estimator R_t.
//!
//! `P_t(x)` is the tensor polynomial whose mean under a shifted base D(μ) is
//! μ^{⊗t}. `R_t` is a polynomial in 2t independent samples with the same mean
//! whose expansion is a short sum of rank-1 tensors; it is the only form the
//! implicit pipeline ever touches. Dense evaluations here exist to serve as
//! equality oracles.

use nalgebra::DMatrix;
use num_rational::Ratio;

use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::tensor::{
    binomial, count_nonempty, labeled_partitions, sym_interleavings, unordered_partitions, DenseTensor, Rank1Term,
};

/// Largest order and dimension accepted by the dense moment tables.
pub const MOMENT_MAX_ORDER: usize = 6;
pub const MOMENT_MAX_DIM: usize = 4;
/// Largest degree for which estimator coefficients are generated.
pub const ESTIMATOR_MAX_DEGREE: usize = 16;

/// Dense moment tensors D_1..D_t of a base distribution.
#[derive(Clone, Debug)]
pub struct BaseMoments {
    pub dist: BaseDist,
    pub d: usize,
    pub moments: Vec<DenseTensor>,
}

impl BaseMoments {
    /// D_j for j ≥ 1.
    pub fn get(&self, j: usize) -> &DenseTensor {
        &self.moments[j - 1]
    }

    pub fn max_order(&self) -> usize {
        self.moments.len()
    }
}

fn dense_guard(t: usize, d: usize) -> Result<()> {
    if t > MOMENT_MAX_ORDER || d > MOMENT_MAX_DIM {
        return Err(Error::SizeLimit(format!(
            "dense moments need t ≤ {MOMENT_MAX_ORDER} and d ≤ {MOMENT_MAX_DIM}, got t={t}, d={d}"
        )));
    }
    Ok(())
}

/// Perfect matchings of `items` (empty when the count is odd).
fn pair_partitions(items: &[usize]) -> Vec<Vec<(usize, usize)>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    if items.len() % 2 == 1 {
        return Vec::new();
    }
    let first = items[0];
    let mut out = Vec::new();
    for k in 1..items.len() {
        let rest: Vec<usize> = items[1..].iter().enumerate().filter(|&(i, _)| i + 1 != k).map(|(_, &x)| x).collect();
        for mut m in pair_partitions(&rest) {
            m.insert(0, (first, items[k]));
            out.push(m);
        }
    }
    out
}

/// Partitions of `items` into pairs and singletons: (pairs, singletons).
fn pair_singleton_partitions(items: &[usize]) -> Vec<(Vec<(usize, usize)>, Vec<usize>)> {
    if items.is_empty() {
        return vec![(Vec::new(), Vec::new())];
    }
    let first = items[0];
    let rest = &items[1..];
    let mut out = Vec::new();
    for (pairs, mut singles) in pair_singleton_partitions(rest) {
        singles.insert(0, first);
        out.push((pairs, singles));
    }
    for k in 0..rest.len() {
        let others: Vec<usize> = rest.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &x)| x).collect();
        for (mut pairs, singles) in pair_singleton_partitions(&others) {
            pairs.insert(0, (first, rest[k]));
            out.push((pairs, singles));
        }
    }
    out
}

fn gaussian_moment(j: usize, d: usize) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(j, d)?;
    let id = DenseTensor::identity(d);
    let positions: Vec<usize> = (0..j).collect();
    for matching in pair_partitions(&positions) {
        let pos: Vec<[usize; 2]> = matching.iter().map(|&(a, b)| [a, b]).collect();
        let parts: Vec<(&DenseTensor, &[usize])> = pos.iter().map(|p| (&id, &p[..])).collect();
        out.add_scaled(&DenseTensor::embed(&parts, j, d)?, 1.0)?;
    }
    Ok(out)
}

fn product_moment(dist: BaseDist, j: usize, d: usize) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(j, d)?;
    let mut eta = vec![0usize; j];
    let mut counts = vec![0usize; d];
    for slot in out.data.iter_mut() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &e in &eta {
            counts[e] += 1;
        }
        *slot = counts.iter().map(|&c| dist.coordinate_moment(c)).product();
        for axis in (0..j).rev() {
            eta[axis] += 1;
            if eta[axis] < d {
                break;
            }
            eta[axis] = 0;
        }
    }
    Ok(out)
}

/// Exact moment tensors D_j = E[z^{⊗j}] for j = 1..t.
pub fn base_moments(dist: BaseDist, t: usize, d: usize) -> Result<BaseMoments> {
    dense_guard(t, d)?;
    let moments = (1..=t)
        .map(|j| match dist {
            BaseDist::Gaussian => gaussian_moment(j, d),
            BaseDist::PointMass => DenseTensor::zeros(j, d),
            other => product_moment(other, j, d),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaseMoments { dist, d, moments })
}

fn check_x(x: &[f64], t: usize, bm: &BaseMoments) -> Result<()> {
    if x.len() != bm.d {
        return Err(Error::Shape(format!("point of dimension {} with moments of dimension {}", x.len(), bm.d)));
    }
    if t > bm.max_order() {
        return Err(Error::SizeLimit(format!("degree {t} exceeds tabulated moments {}", bm.max_order())));
    }
    Ok(())
}

fn power(x: &[f64], t: usize) -> Result<DenseTensor> {
    if t == 0 {
        return Ok(DenseTensor::scalar(1.0, x.len()));
    }
    DenseTensor::rank1(&vec![x; t])
}

/// P_0(x) .. P_t(x) from the recursive definition.
pub fn adjusted_poly_table(x: &[f64], t: usize, bm: &BaseMoments) -> Result<Vec<DenseTensor>> {
    check_x(x, t, bm)?;
    let d = x.len();
    let mut table = vec![DenseTensor::scalar(1.0, d)];
    for s in 1..=t {
        let mut p = power(x, s)?;
        for j in 1..=s {
            let dj = bm.get(j);
            if dj.max_abs() == 0.0 {
                continue;
            }
            let rest = &table[s - j];
            for blocks in sym_interleavings(&[j, s - j])? {
                let e = DenseTensor::embed(&[(dj, &blocks[0]), (rest, &blocks[1])], s, d)?;
                p.add_scaled(&e, -1.0)?;
            }
        }
        table.push(p);
    }
    Ok(table)
}

pub fn adjusted_poly_recursive(x: &[f64], t: usize, bm: &BaseMoments) -> Result<DenseTensor> {
    Ok(adjusted_poly_table(x, t, bm)?.pop().expect("table has t+1 entries"))
}

/// Closed form: sum over S_0 ⊆ [t] of x^{⊗S_0} times signed products of
/// moment tensors over unordered partitions of the complement.
pub fn adjusted_poly_explicit(x: &[f64], t: usize, bm: &BaseMoments) -> Result<DenseTensor> {
    check_x(x, t, bm)?;
    let d = x.len();
    let mut out = DenseTensor::zeros(t, d)?;
    let xv = DenseTensor::rank1(&[x])?;
    for mask in 0u32..(1 << t) {
        let s0: Vec<usize> = (0..t).filter(|&i| mask & (1 << i) != 0).collect();
        let rest: Vec<usize> = (0..t).filter(|&i| mask & (1 << i) == 0).collect();
        for partition in unordered_partitions(&rest, t)? {
            let c = partition.iter().filter(|s| !s.is_empty()).count();
            let blocks: Vec<&Vec<usize>> = partition.iter().filter(|s| !s.is_empty()).collect();
            if blocks.iter().any(|b| bm.get(b.len()).max_abs() == 0.0) {
                continue;
            }
            let coeff = if c % 2 == 0 { 1.0 } else { -1.0 } * (1..=c).map(|i| i as f64).product::<f64>();
            let singles: Vec<[usize; 1]> = s0.iter().map(|&p| [p]).collect();
            let mut parts: Vec<(&DenseTensor, &[usize])> = singles.iter().map(|p| (&xv, &p[..])).collect();
            for b in &blocks {
                parts.push((bm.get(b.len()), b.as_slice()));
            }
            out.add_scaled(&DenseTensor::embed(&parts, t, d)?, coeff)?;
        }
    }
    Ok(out)
}

/// The Hermite tensor: sum over partitions of [t] into pairs and singletons
/// of −I on every pair and x on every singleton.
pub fn hermite_tensor(x: &[f64], t: usize) -> Result<DenseTensor> {
    let d = x.len();
    let mut out = DenseTensor::zeros(t, d)?;
    let xv = DenseTensor::rank1(&[x])?;
    let id = DenseTensor::identity(d);
    let positions: Vec<usize> = (0..t).collect();
    for (pairs, singles) in pair_singleton_partitions(&positions) {
        let pair_pos: Vec<[usize; 2]> = pairs.iter().map(|&(a, b)| [a, b]).collect();
        let single_pos: Vec<[usize; 1]> = singles.iter().map(|&a| [a]).collect();
        let mut parts: Vec<(&DenseTensor, &[usize])> = pair_pos.iter().map(|p| (&id, &p[..])).collect();
        parts.extend(single_pos.iter().map(|p| (&xv, &p[..])));
        let sign = if pairs.len() % 2 == 0 { 1.0 } else { -1.0 };
        out.add_scaled(&DenseTensor::embed(&parts, t, d)?, sign)?;
    }
    Ok(out)
}

/// Probabilists' Hermite polynomial H_t(a).
pub fn hermite_univariate(a: f64, t: usize) -> f64 {
    let (mut prev, mut cur) = (1.0, a);
    if t == 0 {
        return prev;
    }
    for n in 2..=t {
        let next = a * cur - (n - 1) as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Roots of H_t as eigenvalues of the symmetric tridiagonal matrix with zero
/// diagonal and off-diagonal entries √1, …, √(t−1), sorted ascending.
pub fn hermite_roots(t: usize) -> Vec<f64> {
    if t == 0 {
        return Vec::new();
    }
    let mut m = DMatrix::<f64>::zeros(t, t);
    for i in 1..t {
        let v = (i as f64).sqrt();
        m[(i - 1, i)] = v;
        m[(i, i - 1)] = v;
    }
    let mut roots: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    roots.sort_by(f64::total_cmp);
    roots
}

/// Signed rank-1 expansion of R_t over 2t samples.
#[derive(Clone, Debug)]
pub struct Rank1Expansion {
    pub terms: Vec<Rank1Term>,
    pub degree: usize,
    pub sample_block_size: usize,
}

impl Rank1Expansion {
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let d = self.terms.first().map(Rank1Term::dim).unwrap_or(0);
        let mut out = DenseTensor::zeros(self.degree, d)?;
        for term in &self.terms {
            out.add_scaled(&term.to_dense()?, 1.0)?;
        }
        Ok(out)
    }
}

fn check_samples(samples: &[Vec<f64>], t: usize) -> Result<usize> {
    if t == 0 || t > ESTIMATOR_MAX_DEGREE {
        return Err(Error::SizeLimit(format!("estimator degree {t} outside 1..={ESTIMATOR_MAX_DEGREE}")));
    }
    if samples.len() != 2 * t {
        return Err(Error::Arity { expected: 2 * t, got: samples.len() });
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("samples of unequal dimension".into()));
    }
    Ok(d)
}

/// Coefficient (−1)^{c−1}/binom(t−1, c−1) attached to a labeled partition with
/// c nonempty parts.
pub fn partition_coefficient(t: usize, c: usize) -> Ratio<i128> {
    let sign = if c % 2 == 1 { 1 } else { -1 };
    Ratio::new(sign, binomial(t as u64 - 1, c as u64 - 1) as i128)
}

/// R_t as the literal 2·t^t-term expansion: for every labeled partition one
/// term in x_1..x_t and one negated term in x_{t+1}..x_{2t}.
pub fn r_poly_terms(samples: &[Vec<f64>], t: usize) -> Result<Rank1Expansion> {
    check_samples(samples, t)?;
    let mut terms = Vec::with_capacity(2 * t.pow(t as u32));
    for p in labeled_partitions(t) {
        let coeff = partition_coefficient(t, count_nonempty(&p));
        let coeff = *coeff.numer() as f64 / *coeff.denom() as f64;
        let word = p.word();
        terms.push(Rank1Term { coeff, factors: word.iter().map(|&j| samples[j].clone()).collect() });
        terms.push(Rank1Term { coeff: -coeff, factors: word.iter().map(|&j| samples[t + j].clone()).collect() });
    }
    Ok(Rank1Expansion { terms, degree: t, sample_block_size: 2 * t })
}

/// Weights g(1..t) of the subset form of one R_t block:
/// Σ_{words a} f(|image a|) x_{a_1}⊗…⊗x_{a_t} = Σ_{∅≠W⊆[t]} g(|W|) (Σ_{j∈W} x_j)^{⊗t},
/// obtained by Möbius inversion over supersets of the word image.
pub fn subset_weights(t: usize) -> Vec<f64> {
    let f: Vec<Ratio<i128>> = (0..=t).map(|c| if c == 0 { Ratio::from_integer(0) } else { partition_coefficient(t, c) }).collect();
    (0..=t)
        .map(|w| {
            if w == 0 {
                return 0.0;
            }
            let mut g = Ratio::from_integer(0i128);
            for u in w..=t {
                let b = binomial((t - w) as u64, (u - w) as u64) as i128;
                let term = f[u] * b;
                g = if (u - w) % 2 == 0 { g + term } else { g - term };
            }
            *g.numer() as f64 / *g.denom() as f64
        })
        .collect()
}

/// R_t as a sum of symmetric rank-1 terms coeff·y^{⊗t}, with y running over
/// subset sums of each sample block: at most 2(2^t − 1) terms. Equal as a
/// tensor to `r_poly_terms`.
#[derive(Clone, Debug)]
pub struct SubsetExpansion {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

/// Precomputed subset masks and weights for one degree.
#[derive(Clone, Debug)]
pub struct SubsetPlan {
    pub degree: usize,
    masks: Vec<(u32, f64)>,
}

impl SubsetPlan {
    pub fn new(t: usize) -> Result<Self> {
        if t == 0 || t > ESTIMATOR_MAX_DEGREE {
            return Err(Error::SizeLimit(format!("estimator degree {t} outside 1..={ESTIMATOR_MAX_DEGREE}")));
        }
        let g = subset_weights(t);
        let masks = (1u32..(1 << t))
            .filter_map(|m| {
                let w = g[m.count_ones() as usize];
                (w != 0.0).then_some((m, w))
            })
            .collect();
        Ok(Self { degree: t, masks })
    }

    pub fn term_count(&self) -> usize {
        2 * self.masks.len()
    }

    /// Calls `f(coeff, y)` for every term of R_t(samples); `scratch` is reused.
    pub fn for_each_term(&self, samples: &[&[f64]], scratch: &mut Vec<f64>, mut f: impl FnMut(f64, &[f64])) {
        let t = self.degree;
        debug_assert_eq!(samples.len(), 2 * t);
        let d = samples[0].len();
        scratch.resize(d, 0.0);
        for (block, sign) in [(0usize, 1.0), (t, -1.0)] {
            for &(mask, w) in &self.masks {
                scratch.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..t {
                    if mask & (1 << j) != 0 {
                        scratch.iter_mut().zip(samples[block + j]).for_each(|(a, b)| *a += b);
                    }
                }
                f(sign * w, scratch);
            }
        }
    }

    pub fn expand(&self, samples: &[Vec<f64>]) -> Result<SubsetExpansion> {
        check_samples(samples, self.degree)?;
        let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        let mut coeffs = Vec::new();
        let mut points = Vec::new();
        let mut scratch = Vec::new();
        self.for_each_term(&refs, &mut scratch, |c, y| {
            coeffs.push(c);
            points.push(y.to_vec());
        });
        Ok(SubsetExpansion { degree: self.degree, coeffs, points })
    }
}

impl SubsetExpansion {
    pub fn to_rank1(&self) -> Rank1Expansion {
        let terms = self
            .coeffs
            .iter()
            .zip(&self.points)
            .map(|(&coeff, y)| Rank1Term { coeff, factors: vec![y.clone(); self.degree] })
            .collect();
        Rank1Expansion { terms, degree: self.degree, sample_block_size: 2 * self.degree }
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let d = self.points.first().map(Vec::len).unwrap_or(0);
        let mut out = DenseTensor::zeros(self.degree, d)?;
        for (c, y) in self.coeffs.iter().zip(&self.points) {
            out.add_scaled(&DenseTensor::rank1(&vec![y.as_slice(); self.degree])?, *c)?;
        }
        Ok(out)
    }
}

pub fn r_poly_subset_terms(samples: &[Vec<f64>], t: usize) -> Result<SubsetExpansion> {
    SubsetPlan::new(t)?.expand(samples)
}

/// Dense Q_t(x_1..x_t) = Σ over labeled partitions of
/// (−1)^C/binom(t−1, C−1) · ⊗_i P_{|S_i|}(x_i)^{(S_i)}.
pub fn q_poly_dense(samples: &[Vec<f64>], t: usize, bm: &BaseMoments) -> Result<DenseTensor> {
    if samples.len() != t {
        return Err(Error::Arity { expected: t, got: samples.len() });
    }
    let d = bm.d;
    let tables = samples.iter().map(|x| adjusted_poly_table(x, t, bm)).collect::<Result<Vec<_>>>()?;
    let mut out = DenseTensor::zeros(t, d)?;
    for p in labeled_partitions(t) {
        let c = count_nonempty(&p);
        let r = partition_coefficient(t, c);
        let coeff = -(*r.numer() as f64) / *r.denom() as f64;
        let parts: Vec<(&DenseTensor, &[usize])> =
            p.parts.iter().enumerate().map(|(i, s)| (&tables[i][s.len()], s.as_slice())).collect();
        out.add_scaled(&DenseTensor::embed(&parts, t, d)?, coeff)?;
    }
    Ok(out)
}

/// Dense R_t = −Q_t(x_1..x_t) + Q_t(x_{t+1}..x_{2t}), evaluated with dense
/// adjusted polynomials; the oracle for the rank-1 expansions.
pub fn r_poly_dense_oracle(samples: &[Vec<f64>], t: usize, bm: &BaseMoments) -> Result<DenseTensor> {
    let d = check_samples(samples, t)?;
    dense_guard(t, d)?;
    let mut out = q_poly_dense(&samples[t..], t, bm)?;
    out.add_scaled(&q_poly_dense(&samples[..t], t, bm)?, -1.0)?;
    Ok(out)
}

//! Index conventions, dense tensors and the partition enumerations used by
//! the estimator formulas.
//!
//! Flattening is row-major: the first tensor axis is the most significant.
//! The same convention is used by matricization and by the nested projection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of entries a dense tensor may hold.
pub const DENSE_MAX_ENTRIES: usize = 1 << 20;
/// Largest ground set accepted by the partition enumerations.
pub const PARTITION_GUARD: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndex {
    pub entries: Vec<usize>,
    pub dims: Vec<usize>,
}

impl MultiIndex {
    pub fn new(entries: Vec<usize>, dims: Vec<usize>) -> Result<Self> {
        let idx = Self { entries, dims };
        idx.validate()?;
        Ok(idx)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.len() != self.dims.len() {
            return Err(Error::InvalidIndex(format!(
                "{} entries for {} axes",
                self.entries.len(),
                self.dims.len()
            )));
        }
        for (axis, (&e, &n)) in self.entries.iter().zip(&self.dims).enumerate() {
            if e >= n {
                return Err(Error::InvalidIndex(format!("axis {axis}: {e} >= {n}")));
            }
        }
        Ok(())
    }
}

pub fn flatten_index(idx: &MultiIndex) -> Result<usize> {
    idx.validate()?;
    Ok(idx.entries.iter().zip(&idx.dims).fold(0, |acc, (&e, &n)| acc * n + e))
}

pub fn unflatten_index(mut linear: usize, dims: &[usize]) -> Result<MultiIndex> {
    let total: usize = dims.iter().product();
    if linear >= total {
        return Err(Error::InvalidIndex(format!("{linear} outside box of {total}")));
    }
    let mut entries = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        entries[axis] = linear % dims[axis];
        linear /= dims[axis];
    }
    Ok(MultiIndex { entries, dims: dims.to_vec() })
}

/// Rearranges a vector of length m² into an m×m matrix, entry (i,j) = v[i·m+j].
pub fn matricize_square(v: &[f64], m: usize) -> Result<DMatrix<f64>> {
    if v.len() != m * m {
        return Err(Error::Shape(format!("length {} is not {m}²", v.len())));
    }
    Ok(DMatrix::from_row_slice(m, m, v))
}

/// Row-major flattening of u_1 ⊗ … ⊗ u_t.
pub fn kron_flatten(factors: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for &a in &out {
            next.extend(f.iter().map(|&b| a * b));
        }
        out = next;
    }
    out
}

/// A signed rank-1 tensor coeff · u_1 ⊗ … ⊗ u_t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1Term {
    pub coeff: f64,
    pub factors: Vec<Vec<f64>>,
}

impl Rank1Term {
    pub fn new(coeff: f64, factors: Vec<Vec<f64>>) -> Result<Self> {
        let d = factors.first().map(Vec::len).ok_or_else(|| Error::Shape("rank-1 term without factors".into()))?;
        if factors.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("rank-1 factors of unequal dimension".into()));
        }
        Ok(Self { coeff, factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.factors[0].len()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut t = DenseTensor::rank1(&self.factors.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
        t.scale(self.coeff);
        Ok(t)
    }
}

/// An order-t tensor with all sides equal to d, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub order: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

fn dense_len(order: usize, side: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..order {
        n = n
            .checked_mul(side)
            .filter(|&n| n <= DENSE_MAX_ENTRIES)
            .ok_or_else(|| Error::SizeLimit(format!("dense tensor of order {order} and side {side}")))?;
    }
    Ok(n)
}

impl DenseTensor {
    pub fn zeros(order: usize, side: usize) -> Result<Self> {
        Ok(Self { order, side, data: vec![0.0; dense_len(order, side)?] })
    }

    pub fn scalar(value: f64, side: usize) -> Self {
        Self { order: 0, side, data: vec![value] }
    }

    pub fn rank1(factors: &[&[f64]]) -> Result<Self> {
        let side = factors.first().map(|f| f.len()).unwrap_or(0);
        if factors.iter().any(|f| f.len() != side) {
            return Err(Error::Shape("factors of unequal dimension".into()));
        }
        dense_len(factors.len(), side)?;
        Ok(Self { order: factors.len(), side, data: kron_flatten(factors) })
    }

    /// The identity matrix viewed as an order-2 tensor.
    pub fn identity(side: usize) -> Self {
        let mut data = vec![0.0; side * side];
        for i in 0..side {
            data[i * side + i] = 1.0;
        }
        Self { order: 2, side, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn add_scaled(&mut self, other: &DenseTensor, c: f64) -> Result<()> {
        if other.order != self.order || other.side != self.side {
            return Err(Error::Shape(format!(
                "adding order-{} side-{} to order-{} side-{}",
                other.order, other.side, self.order, self.side
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += c * b);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.abs()).fold(0.0, f64::max)
    }

    pub fn get(&self, entries: &[usize]) -> f64 {
        self.data[entries.iter().fold(0, |acc, &e| acc * self.side + e)]
    }

    /// Contraction ⟨T, v^{⊗order}⟩.
    pub fn contract_all(&self, v: &[f64]) -> f64 {
        let flat = kron_flatten(&vec![v; self.order]);
        self.data.iter().zip(&flat).map(|(a, b)| a * b).sum()
    }

    /// Places the tensors `parts[i].0` on the axis positions `parts[i].1` of
    /// an order-`order` tensor and multiplies them entrywise; each position set
    /// is read in increasing order and the sets must partition `0..order`.
    pub fn embed(parts: &[(&DenseTensor, &[usize])], order: usize, side: usize) -> Result<Self> {
        let mut seen = vec![false; order];
        for (t, pos) in parts {
            if t.order != pos.len() || (t.order > 0 && t.side != side) {
                return Err(Error::Shape("embedded tensor does not match its positions".into()));
            }
            for &p in pos.iter() {
                if p >= order || seen[p] {
                    return Err(Error::Shape("position sets do not partition the axes".into()));
                }
                seen[p] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("position sets do not cover the axes".into()));
        }
        let mut out = DenseTensor::zeros(order, side)?;
        let sorted: Vec<(&DenseTensor, Vec<usize>)> = parts
            .iter()
            .map(|(t, pos)| {
                let mut p = pos.to_vec();
                p.sort_unstable();
                (*t, p)
            })
            .collect();
        let mut eta = vec![0usize; order];
        for slot in out.data.iter_mut() {
            let mut value = 1.0;
            for (t, pos) in &sorted {
                let lin = pos.iter().fold(0, |acc, &p| acc * side + eta[p]);
                value *= t.data[lin];
                if value == 0.0 {
                    break;
                }
            }
            *slot = value;
            for axis in (0..order).rev() {
                eta[axis] += 1;
                if eta[axis] < side {
                    break;
                }
                eta[axis] = 0;
            }
        }
        Ok(out)
    }
}

/// An assignment of the ground set {0..t−1} to t labeled, possibly empty slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPartition {
    pub parts: Vec<Vec<usize>>,
    pub t: usize,
}

impl LabeledPartition {
    pub fn from_word(word: &[usize]) -> Self {
        let t = word.len();
        let mut parts = vec![Vec::new(); t];
        for (pos, &slot) in word.iter().enumerate() {
            parts[slot].push(pos);
        }
        Self { parts, t }
    }

    /// The slot assigned to every position.
    pub fn word(&self) -> Vec<usize> {
        let mut w = vec![0; self.t];
        for (slot, part) in self.parts.iter().enumerate() {
            for &p in part {
                w[p] = slot;
            }
        }
        w
    }
}

/// All t^t labeled partitions, in lexicographic order of the slot word.
pub fn labeled_partitions(t: usize) -> LabeledPartitions {
    LabeledPartitions { word: vec![0; t], done: t == 0 }
}

pub struct LabeledPartitions {
    word: Vec<usize>,
    done: bool,
}

impl Iterator for LabeledPartitions {
    type Item = LabeledPartition;

    fn next(&mut self) -> Option<LabeledPartition> {
        if self.done {
            return None;
        }
        let out = LabeledPartition::from_word(&self.word);
        let t = self.word.len();
        self.done = true;
        for pos in (0..t).rev() {
            self.word[pos] += 1;
            if self.word[pos] < t {
                self.done = false;
                break;
            }
            self.word[pos] = 0;
        }
        Some(out)
    }
}

pub fn count_nonempty(p: &LabeledPartition) -> usize {
    p.parts.iter().filter(|s| !s.is_empty()).count()
}

/// Partitions of `set` into `t` unordered, possibly empty parts. Each
/// partition is listed once, nonempty blocks first (ordered by smallest
/// element) followed by empty parts up to length t.
pub fn unordered_partitions(set: &[usize], t: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if set.len() > PARTITION_GUARD {
        return Err(Error::SizeLimit(format!("partitions of a {}-element set", set.len())));
    }
    let mut out = Vec::new();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    fn rec(set: &[usize], i: usize, t: usize, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == set.len() {
            let mut p = blocks.clone();
            p.resize(t.max(p.len()), Vec::new());
            out.push(p);
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(set[i]);
            rec(set, i + 1, t, blocks, out);
            blocks[b].pop();
        }
        if blocks.len() < t {
            blocks.push(vec![set[i]]);
            rec(set, i + 1, t, blocks, out);
            blocks.pop();
        }
    }
    rec(set, 0, t, &mut blocks, &mut out);
    Ok(out)
}

/// All ways to distribute the positions 0..Σa_i into blocks of sizes a_1..a_n.
/// Block i of each result holds the positions (increasing) of the i-th tensor.
pub fn sym_interleavings(sizes: &[usize]) -> Result<Vec<Vec<Vec<usize>>>> {
    let total: usize = sizes.iter().sum();
    if total > PARTITION_GUARD {
        return Err(Error::SizeLimit(format!("interleavings of {total} positions")));
    }
    let mut out = Vec::new();
    let mut free: Vec<bool> = vec![true; total];
    let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(sizes.len());
    fn rec(sizes: &[usize], free: &mut Vec<bool>, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        let b = blocks.len();
        if b == sizes.len() {
            out.push(blocks.clone());
            return;
        }
        let avail: Vec<usize> = (0..free.len()).filter(|&p| free[p]).collect();
        for combo in combinations(&avail, sizes[b]) {
            for &p in &combo {
                free[p] = false;
            }
            blocks.push(combo.clone());
            rec(sizes, free, blocks, out);
            blocks.pop();
            for &p in &combo {
                free[p] = true;
            }
        }
    }
    rec(sizes, &mut free, &mut blocks, &mut out);
    Ok(out)
}

/// r-element subsets of `items`, in lexicographic order.
pub fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    if r > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = r;
        while i > 0 && idx[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stirling2(n: usize, k: usize) -> u64 {
        let mut s = vec![vec![0u64; n + 1]; n + 1];
        s[0][0] = 1;
        for i in 1..=n {
            for j in 1..=i {
                s[i][j] = j as u64 * s[i - 1][j] + s[i - 1][j - 1];
            }
        }
        s[n][k]
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_index(&MultiIndex::new(vec![0, 0], vec![3, 3]).unwrap()).unwrap(), 0);
        assert_eq!(flatten_index(&MultiIndex::new(vec![1, 2], vec![3, 3]).unwrap()).unwrap(), 5);
        assert_eq!(flatten_index(&MultiIndex::new(vec![2, 1, 0], vec![3, 3, 3]).unwrap()).unwrap(), 21);
        assert!(MultiIndex::new(vec![3, 0], vec![3, 3]).is_err());
        let bad = MultiIndex { entries: vec![0, 5], dims: vec![3, 3] };
        assert!(matches!(flatten_index(&bad), Err(Error::InvalidIndex(_))));
    }

    #[test]
    fn round_trip_boxes() {
        let dims = [4, 4, 4, 4];
        for lin in 0..256 {
            let idx = unflatten_index(lin, &dims).unwrap();
            assert_eq!(flatten_index(&idx).unwrap(), lin);
        }
        let dims = [2, 3, 4];
        for lin in 0..24 {
            assert_eq!(flatten_index(&unflatten_index(lin, &dims).unwrap()).unwrap(), lin);
        }
    }

    #[test]
    fn matricize_examples() {
        let m = matricize_square(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
        let m = matricize_square(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert!(matricize_square(&[1.0, 2.0, 3.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn matricized_outer_product(d in 1usize..=8, seed in any::<u64>()) {
            use rand::Rng as _;
            let mut rng = crate::rng::keyed(seed, 0, 0);
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = matricize_square(&kron_flatten(&[&u, &w]), d).unwrap();
            for i in 0..d {
                for j in 0..d {
                    prop_assert!((m[(i, j)] - u[i] * w[j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn labeled_partition_counts() {
        assert_eq!(labeled_partitions(0).count(), 0);
        assert_eq!(labeled_partitions(1).collect::<Vec<_>>()[0].parts, vec![vec![0]]);
        for t in 1..=5 {
            let all: Vec<_> = labeled_partitions(t).collect();
            assert_eq!(all.len(), t.pow(t as u32));
            for p in &all {
                let mut seen: Vec<usize> = p.parts.iter().flatten().copied().collect();
                seen.sort_unstable();
                assert_eq!(seen, (0..t).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn labeled_partitions_are_lexicographic() {
        let words: Vec<Vec<usize>> = labeled_partitions(3).map(|p| p.word()).collect();
        let mut sorted = words.clone();
        sorted.sort();
        assert_eq!(words, sorted);
        assert_eq!(words[0], vec![0, 0, 0]);
        assert_eq!(words[1], vec![0, 0, 1]);
    }

    #[test]
    fn nonempty_counts_follow_stirling() {
        for t in 1..=5 {
            for c in 1..=t {
                let n = labeled_partitions(t).filter(|p| count_nonempty(p) == c).count() as u64;
                let falling: u64 = (0..c as u64).map(|i| t as u64 - i).product();
                assert_eq!(n, stirling2(t, c) * falling, "t={t} c={c}");
            }
        }
    }

    #[test]
    fn count_nonempty_examples() {
        let p = |parts: Vec<Vec<usize>>| LabeledPartition { t: parts.len(), parts };
        assert_eq!(count_nonempty(&p(vec![vec![0, 1], vec![]])), 1);
        assert_eq!(count_nonempty(&p(vec![vec![0], vec![1]])), 2);
        assert_eq!(count_nonempty(&p(vec![vec![0, 2], vec![1], vec![]])), 2);
    }

    fn canonical(p: &[Vec<usize>]) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = p.iter().filter(|b| !b.is_empty()).cloned().collect();
        for b in blocks.iter_mut() {
            b.sort_unstable();
        }
        blocks.sort();
        blocks
    }

    #[test]
    fn unordered_partitions_match_deduplicated_labeled_ones() {
        assert_eq!(unordered_partitions(&[0], 2).unwrap(), vec![vec![vec![0], vec![]]]);
        assert_eq!(unordered_partitions(&[], 3).unwrap(), vec![vec![Vec::<usize>::new(); 3]]);
        for t in 1..=4 {
            for size in 0..=4 {
                let set: Vec<usize> = (0..size).collect();
                let ours: Vec<_> = unordered_partitions(&set, t).unwrap().iter().map(|p| canonical(p)).collect();
                let mut brute: Vec<Vec<Vec<usize>>> = Vec::new();
                let total = t.pow(size as u32);
                for code in 0..total {
                    let mut parts = vec![Vec::new(); t];
                    let mut c = code;
                    for &e in &set {
                        parts[c % t].push(e);
                        c /= t;
                    }
                    let canon = canonical(&parts);
                    if !brute.contains(&canon) {
                        brute.push(canon);
                    }
                }
                let mut a = ours.clone();
                a.sort();
                brute.sort();
                assert_eq!(a, brute, "t={t} size={size}");
                assert_eq!(ours.len(), brute.len());
            }
        }
        assert_eq!(unordered_partitions(&[0, 1], 2).unwrap().len(), 2);
        assert!(matches!(unordered_partitions(&(0..13).collect::<Vec<_>>(), 2), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn interleaving_counts_are_multinomial() {
        assert_eq!(sym_interleavings(&[1, 1]).unwrap().len(), 2);
        assert_eq!(sym_interleavings(&[2, 1]).unwrap().len(), 3);
        assert_eq!(sym_interleavings(&[3]).unwrap(), vec![vec![vec![0, 1, 2]]]);
        assert_eq!(sym_interleavings(&[2, 2, 1]).unwrap().len(), 30);
        assert_eq!(sym_interleavings(&[0, 3]).unwrap().len(), 1);
        assert!(sym_interleavings(&[7, 6]).is_err());
        for sizes in [vec![1, 2, 1], vec![3, 2]] {
            for blocks in sym_interleavings(&sizes).unwrap() {
                let mut all: Vec<usize> = blocks.concat();
                all.sort_unstable();
                assert_eq!(all, (0..sizes.iter().sum()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn combinations_and_binomials() {
        assert_eq!(combinations(&[0, 1, 2, 3], 2).len(), 6);
        assert_eq!(combinations(&[5, 6], 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(&[5, 6, 7], 3), vec![vec![5, 6, 7]]);
        assert!(combinations(&[1], 2).is_empty());
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(16, 8), 12870);
    }

    #[test]
    fn embed_places_factors() {
        let a = DenseTensor::rank1(&[&[1.0, 2.0]]).unwrap();
        let b = DenseTensor::rank1(&[&[3.0, 5.0]]).unwrap();
        let e = DenseTensor::embed(&[(&a, &[1]), (&b, &[0])], 2, 2).unwrap();
        assert_eq!(e, DenseTensor::rank1(&[&[3.0, 5.0], &[1.0, 2.0]]).unwrap());
        assert!(DenseTensor::embed(&[(&a, &[0])], 2, 2).is_err());
    }
}

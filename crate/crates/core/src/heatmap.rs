//! The soft-assignment to heat-map transform, its gradient, top-M
//! sparsification and the overlap ratio against a reference tour.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tour::Tour;

/// An n x m column-stochastic matrix; column t is a distribution over the
/// cities for position t of a cyclic ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    t: Array2<f64>,
}

impl SoftAssignment {
    /// Wraps `t` after checking nonnegativity and unit column sums (1e-9).
    pub fn new(t: Array2<f64>) -> Result<Self> {
        if t.nrows() < 2 || t.ncols() < 2 {
            return Err(Error::Structure(format!(
                "soft assignment must be at least 2x2, got {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Structure("soft assignment has a negative or non-finite entry".into()));
        }
        for (k, col) in t.axis_iter(Axis(1)).enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Structure(format!("column {k} sums to {s}")));
            }
        }
        Ok(Self { t })
    }

    pub(crate) fn from_softmax(t: Array2<f64>) -> Self {
        Self { t }
    }

    /// The n x n permutation matrix with `t[perm[k]][k] = 1`: position k of
    /// the cycle is city `perm[k]`.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        crate::tour::check_permutation(perm, n)?;
        let mut t = Array2::zeros((n, n));
        for (k, &c) in perm.iter().enumerate() {
            t[[c, k]] = 1.0;
        }
        Self::new(t)
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self { t: Array2::from_elem((n, m), 1.0 / n as f64) }
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn m(&self) -> usize {
        self.t.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.t
    }
}

/// Dense directed edge scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub h: Array2<f64>,
    pub m_source: usize,
}

impl HeatMap {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }
}

/// The cyclic shift on m positions, t -> t + 1 (mod m).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftOperator {
    pub m: usize,
}

impl ShiftOperator {
    pub fn successor(&self, t: usize) -> usize {
        (t + 1) % self.m
    }

    pub fn predecessor(&self, t: usize) -> usize {
        (t + self.m - 1) % self.m
    }

    /// The dense m x m matrix with `v[t][t + 1 mod m] = 1`.
    pub fn materialize(&self) -> Array2<f64> {
        let mut v = Array2::zeros((self.m, self.m));
        for t in 0..self.m {
            v[[t, self.successor(t)]] = 1.0;
        }
        v
    }
}

/// Copies `t` with its columns rotated so that column k holds column
/// `k + offset (mod m)` of the input.
fn rotate_columns(t: ArrayView2<f64>, offset: usize) -> Array2<f64> {
    let m = t.ncols();
    let mut out = Array2::zeros(t.raw_dim());
    for k in 0..m {
        out.column_mut(k).assign(&t.column((k + offset) % m));
    }
    out
}

/// `H = sum_t p_t p_{t+1}^T` with cyclic wrap, for any nonnegative n x m `t`.
pub fn heatmap_of(t: ArrayView2<f64>) -> Array2<f64> {
    let next = rotate_columns(t, 1);
    t.dot(&next.t())
}

pub fn build_heatmap(t: &SoftAssignment) -> HeatMap {
    HeatMap {
        h: heatmap_of(t.t.view()),
        m_source: t.m(),
    }
}

/// Gradient of a scalar loss through `build_heatmap`:
/// `dL/dp_t = G p_{t+1} + G^T p_{t-1}`.
pub fn heatmap_backward(t: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = t.nrows();
    if upstream.dim() != (n, n) {
        return Err(Error::Structure(format!(
            "upstream gradient is {:?}, expected {n}x{n}",
            upstream.dim()
        )));
    }
    let m = t.ncols();
    let next = rotate_columns(t, 1);
    let prev = rotate_columns(t, m - 1);
    Ok(upstream.dot(&next) + upstream.t().dot(&prev))
}

/// Optional rescalings for the m != n case, where H is not doubly stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    #[default]
    None,
    /// T -> sqrt(n / m) T
    SqrtNmT,
    /// H -> (n / m) H
    NmH,
}

impl Rescale {
    /// Factor applied to T before the transform.
    pub fn t_factor(self, n: usize, m: usize) -> f64 {
        match self {
            Rescale::SqrtNmT => (n as f64 / m as f64).sqrt(),
            _ => 1.0,
        }
    }

    /// Factor applied to H after the transform.
    pub fn h_factor(self, n: usize, m: usize) -> f64 {
        match self {
            Rescale::NmH => n as f64 / m as f64,
            _ => 1.0,
        }
    }

    /// Builds the (possibly rescaled) heat-map matrix. The overall effect of
    /// either mode on H is the scalar `n / m`.
    pub fn heatmap(self, t: &SoftAssignment) -> Array2<f64> {
        let (n, m) = (t.n(), t.m());
        let tf = self.t_factor(n, m);
        let h = if tf != 1.0 {
            heatmap_of((t.matrix() * tf).view())
        } else {
            heatmap_of(t.matrix().view())
        };
        h * self.h_factor(n, m)
    }

    /// Total scalar by which H is multiplied.
    pub fn total_factor(self, n: usize, m: usize) -> f64 {
        self.t_factor(n, m).powi(2) * self.h_factor(n, m)
    }
}

impl std::str::FromStr for Rescale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rescale::None),
            "sqrt_nm_T" | "sqrt_nm_t" => Ok(Rescale::SqrtNmT),
            "nm_H" | "nm_h" => Ok(Rescale::NmH),
            other => Err(Error::Parameter(format!("unknown rescale mode '{other}'"))),
        }
    }
}

pub fn rescale_assignment(t: &Array2<f64>, mode: Rescale) -> Array2<f64> {
    let (n, m) = t.dim();
    t * mode.t_factor(n, m)
}

pub fn rescale_heatmap(h: &HeatMap, mode: Rescale) -> HeatMap {
    let n = h.n();
    HeatMap {
        h: &h.h * mode.h_factor(n, h.m_source),
        m_source: h.m_source,
    }
}

/// The symmetrized sparse candidate matrix `H' = H~ + H~^T`.
///
/// Only strictly positive entries are stored; `neighbors[i]` is sorted by
/// neighbour index and mirrors `edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    n: usize,
    pub top_m: usize,
    pub m_source: usize,
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl CandidateSet {
    /// Builds from upper-triangle triplets `(i, j, value)` with `i < j`.
    pub fn from_triplets(
        n: usize,
        m_source: usize,
        top_m: usize,
        mut edges: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(i, j, v) in &edges {
            if i >= j || j >= n || !(v > 0.0) || !v.is_finite() {
                return Err(Error::Structure(format!("bad candidate triplet ({i}, {j}, {v})")));
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if edges.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Structure("duplicate candidate edge".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j, v) in &edges {
            neighbors[i].push((j, v));
            neighbors[j].push((i, v));
        }
        for row in &mut neighbors {
            row.sort_by_key(|&(c, _)| c);
        }
        Ok(Self { n, top_m, m_source, edges, neighbors })
    }

    /// A candidate set with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            top_m: 0,
            m_source: 0,
            edges: Vec::new(),
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `H'[i][j]`, zero when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = &self.neighbors[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(k) => row[k].1,
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > 0.0
    }

    /// True when every off-diagonal pair is a candidate.
    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1) / 2
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for &(i, j, v) in &self.edges {
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
        d
    }

    /// Heat-map file: header `n m top_m`, then `i j value` lines for i < j,
    /// sorted.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n, self.m_source, self.top_m);
        for &(i, j, v) in &self.edges {
            out.push_str(&format!("{i} {j} {v:.16e}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty heat-map file".into() })?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line: 1, msg: "header must be 'n m top_m'".into() })?;
        if head.len() != 3 {
            return Err(Error::Parse { line: 1, msg: "header must be 'n m top_m'".into() });
        }
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let bad = || Error::Parse { line: idx + 1, msg: format!("expected 'i j value', got '{line}'") };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let i = f[0].parse().map_err(|_| bad())?;
            let j = f[1].parse().map_err(|_| bad())?;
            let v = f[2].parse().map_err(|_| bad())?;
            edges.push((i, j, v));
        }
        Self::from_triplets(head[0], head[1], head[2], edges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Keeps the `top_m` largest off-diagonal entries of each row (ties to the
/// smaller column), then symmetrizes.
pub fn sparsify(h: &HeatMap, top_m: usize) -> Result<CandidateSet> {
    let n = h.n();
    if top_m < 1 || top_m > n - 1 {
        return Err(Error::Parameter(format!("top_m must lie in [1, {}], got {top_m}", n - 1)));
    }
    let mut kept = Array2::<f64>::zeros((n, n));
    let mut cols: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = h.h.row(i);
        cols.clear();
        cols.extend((0..n).filter(|&j| j != i));
        cols.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &cols[..top_m] {
            kept[[i, j]] = row[j];
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = kept[[i, j]] + kept[[j, i]];
            if v > 0.0 {
                edges.push((i, j, v));
            }
        }
    }
    CandidateSet::from_triplets(n, h.m_source, top_m, edges)
}

/// Fraction of the tour's n undirected edges that are candidates.
pub fn overlap_ratio(cs: &CandidateSet, opt: &Tour) -> Result<f64> {
    let n = cs.n();
    if opt.n() != n {
        return Err(Error::Structure(format!(
            "candidate set has {n} cities, tour has {}",
            opt.n()
        )));
    }
    let covered = (0..n)
        .filter(|&k| cs.contains(opt.order[k], opt.order[(k + 1) % n]))
        .count();
    Ok(covered as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 0-based version of the five-city example: cycle 0 -> 2 -> 1 -> 4 -> 3.
    fn five_city_cycle() -> SoftAssignment {
        SoftAssignment::from_permutation(&[0, 2, 1, 4, 3]).unwrap()
    }

    fn random_assignment(n: usize, m: usize, rng: &mut impl Rng) -> SoftAssignment {
        let mut t = Array2::from_shape_fn((n, m), |_| rng.gen::<f64>() + 1e-3);
        for mut col in t.axis_iter_mut(Axis(1)) {
            let s = col.sum();
            col /= s;
        }
        SoftAssignment::new(t).unwrap()
    }

    #[test]
    fn five_city_cycle_edges() {
        let h = build_heatmap(&five_city_cycle());
        let mut expect = Array2::<f64>::zeros((5, 5));
        for (a, b) in [(0, 2), (2, 1), (1, 4), (4, 3), (3, 0)] {
            expect[[a, b]] = 1.0;
        }
        assert_eq!(h.h, expect);
    }

    #[test]
    fn identity_gives_shift() {
        let t = SoftAssignment::from_permutation(&[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(build_heatmap(&t).h, ShiftOperator { m: 6 }.materialize());
    }

    #[test]
    fn summation_matches_materialized_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_assignment(6, 4, &mut rng);
        let v = ShiftOperator { m: 4 }.materialize();
        let direct = t.matrix().dot(&v).dot(&t.matrix().t());
        let h = build_heatmap(&t).h;
        let diff = (&h - &direct).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-12);
        assert!((h.sum() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn backward_zero_and_symmetric_cases() {
        let t = SoftAssignment::uniform(5, 3);
        let g = heatmap_backward(t.matrix().view(), Array2::zeros((5, 5)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = heatmap_backward(t.matrix().view(), Array2::eye(5).view()).unwrap();
        for col in g.axis_iter(Axis(1)) {
            assert_eq!(col, g.column(0));
        }
        assert!(heatmap_backward(t.matrix().view(), Array2::zeros((4, 4)).view()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_assignment(7, 5, &mut rng).into_matrix();
        let w = Array2::from_shape_fn((7, 7), |_| rng.gen_range(-1.0..1.0));
        let f = |t: &Array2<f64>| (heatmap_of(t.view()) * &w).sum();
        let g = heatmap_backward(t.view(), w.view()).unwrap();
        let eps = 1e-6;
        for i in 0..7 {
            for k in 0..5 {
                let mut tp = t.clone();
                tp[[i, k]] += eps;
                let mut tm = t.clone();
                tm[[i, k]] -= eps;
                let fd = (f(&tp) - f(&tm)) / (2.0 * eps);
                let rel = (fd - g[[i, k]]).abs() / g[[i, k]].abs().max(1e-8);
                assert!(rel <= 1e-6, "({i},{k}) fd {fd} analytic {}", g[[i, k]]);
            }
        }
    }

    #[test]
    fn rescale_modes() {
        let t = SoftAssignment::uniform(8, 4);
        assert_eq!(rescale_assignment(t.matrix(), Rescale::None), *t.matrix());
        let h = build_heatmap(&t);
        assert_eq!(rescale_heatmap(&h, Rescale::NmH).h, &h.h * 2.0);
        let sq = SoftAssignment::uniform(5, 5);
        assert_eq!(rescale_assignment(sq.matrix(), Rescale::SqrtNmT), *sq.matrix());
        let hs = build_heatmap(&sq);
        assert_eq!(rescale_heatmap(&hs, Rescale::NmH), hs);
    }

    #[test]
    fn sparsify_top1_on_five_city_cycle() {
        let cs = sparsify(&build_heatmap(&five_city_cycle()), 1).unwrap();
        let got: Vec<(usize, usize)> = cs.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(got, vec![(0, 2), (0, 3), (1, 2), (1, 4), (3, 4)]);
    }

    #[test]
    fn sparsify_full_is_dense_off_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = build_heatmap(&random_assignment(6, 4, &mut rng));
        let cs = sparsify(&h, 5).unwrap();
        let mut off = h.h.clone();
        for i in 0..6 {
            off[[i, i]] = 0.0;
        }
        let expect = &off + &off.t();
        assert_eq!(cs.to_dense(), expect);
        assert!(cs.is_complete());
        assert!(sparsify(&h, 0).is_err());
        assert!(sparsify(&h, 6).is_err());
    }

    #[test]
    fn ties_prefer_smaller_column() {
        let h = HeatMap { h: Array2::from_elem((4, 4), 0.25), m_source: 4 };
        let cs = sparsify(&h, 1).unwrap();
        // row 0 keeps 1, rows 1..3 keep 0
        let got: Vec<(usize, usize)> = cs.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(got, vec![(0, 1), (0, 2), (0, 3)]);
        assert_eq!(cs.weight(0, 1), 0.5);
    }

    #[test]
    fn overlap_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = build_heatmap(&random_assignment(6, 3, &mut rng));
        let cs = sparsify(&h, 5).unwrap();
        let dm = ndarray::Array2::<f64>::zeros((6, 6));
        let dm = crate::instances::DistanceMatrix::from_array(dm).unwrap();
        let tour = Tour::new(vec![0, 3, 1, 5, 2, 4], &dm).unwrap();
        assert_eq!(overlap_ratio(&cs, &tour).unwrap(), 1.0);
        assert_eq!(overlap_ratio(&CandidateSet::empty(6), &tour).unwrap(), 0.0);
        assert!(overlap_ratio(&CandidateSet::empty(5), &tour).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = build_heatmap(&random_assignment(9, 4, &mut rng));
        let cs = sparsify(&h, 3).unwrap();
        assert_eq!(CandidateSet::parse(&cs.to_text()).unwrap(), cs);
    }
}

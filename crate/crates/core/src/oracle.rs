//! Ground-truth solvers: exhaustive enumeration, Held-Karp, and a
//! nearest-neighbour + 2-opt multi-start heuristic for sizes beyond the
//! exact range.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::DistanceMatrix;
use crate::local::LocalSearch;
use crate::tour::Tour;

pub const BRUTE_FORCE_MAX_N: usize = 10;
pub const HELD_KARP_MAX_N: usize = 18;
/// Largest n for which reference lengths come from the exact solver.
pub const EXACT_REFERENCE_MAX_N: usize = 16;
/// Restarts for approximate reference lengths in hardness analysis.
pub const REFERENCE_RESTARTS: usize = 10;

fn check_size(n: usize, max: usize, what: &str) -> Result<()> {
    if !(3..=max).contains(&n) {
        return Err(Error::SizeLimit(format!("{what} supports 3 <= n <= {max}, got {n}")));
    }
    Ok(())
}

/// Enumerates every undirected tour anchored at city 0.
///
/// Ties are resolved toward the lexicographically smallest order among tours
/// whose second city is smaller than their last.
pub fn brute_force(dm: &DistanceMatrix) -> Result<Tour> {
    let n = dm.n();
    check_size(n, BRUTE_FORCE_MAX_N, "brute_force")?;

    struct Search<'a> {
        dm: &'a DistanceMatrix,
        path: Vec<usize>,
        used: Vec<bool>,
        best_len: f64,
        best: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self, partial: f64) {
            let n = self.used.len();
            let last = *self.path.last().unwrap();
            if self.path.len() == n {
                if self.path[1] > last {
                    return;
                }
                let total = partial + self.dm.get(last, 0);
                if total < self.best_len {
                    self.best_len = total;
                    self.best.clone_from(&self.path);
                }
                return;
            }
            for c in 1..n {
                if self.used[c] {
                    continue;
                }
                let next = partial + self.dm.get(last, c);
                if next >= self.best_len {
                    continue;
                }
                self.used[c] = true;
                self.path.push(c);
                self.go(next);
                self.path.pop();
                self.used[c] = false;
            }
        }
    }

    let mut s = Search {
        dm,
        path: vec![0],
        used: vec![false; n],
        best_len: f64::INFINITY,
        best: Vec::new(),
    };
    s.used[0] = true;
    s.go(0.0);
    Ok(Tour::from_order(s.best, dm).canonical(dm))
}

/// Subset dynamic program over bitmasks of cities `1..n`, anchored at city 0.
///
/// Memory is `2^(n-1) * (n-1)` lengths plus predecessor bytes, about 20 MB
/// at the n = 18 limit.
pub fn held_karp(dm: &DistanceMatrix) -> Result<Tour> {
    let n = dm.n();
    check_size(n, HELD_KARP_MAX_N, "held_karp")?;
    let k = n - 1;
    let full = (1usize << k) - 1;
    let idx = |mask: usize, j: usize| mask * k + j;
    let mut cost = vec![f64::INFINITY; (full + 1) * k];
    let mut parent = vec![u8::MAX; (full + 1) * k];

    for j in 0..k {
        cost[idx(1 << j, j)] = dm.get(0, j + 1);
    }
    for mask in 1..=full {
        for j in 0..k {
            if mask & (1 << j) == 0 {
                continue;
            }
            let prev_mask = mask & !(1 << j);
            if prev_mask == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_p = u8::MAX;
            for p in 0..k {
                if prev_mask & (1 << p) == 0 {
                    continue;
                }
                let c = cost[idx(prev_mask, p)] + dm.get(p + 1, j + 1);
                if c < best {
                    best = c;
                    best_p = p as u8;
                }
            }
            cost[idx(mask, j)] = best;
            parent[idx(mask, j)] = best_p;
        }
    }

    let mut best = f64::INFINITY;
    let mut last = 0;
    for j in 0..k {
        let c = cost[idx(full, j)] + dm.get(j + 1, 0);
        if c < best {
            best = c;
            last = j;
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut j = last;
    loop {
        order.push(j + 1);
        let p = parent[idx(mask, j)];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.push(0);
    order.reverse();
    Ok(Tour::from_order(order, dm).canonical(dm))
}

/// Greedy nearest-neighbour tour from `start`; ties go to the smaller index.
pub fn nearest_neighbor(dm: &DistanceMatrix, start: usize) -> Tour {
    let n = dm.n();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&c| !visited[c])
            .min_by(|&a, &b| dm.get(cur, a).total_cmp(&dm.get(cur, b)))
            .expect("unvisited city remains");
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    Tour::from_order(order, dm)
}

/// Best of `restarts` local optima.
///
/// Restart 0 starts from the nearest-neighbour tour from city 0; the next
/// restarts use nearest-neighbour tours from the remaining cities in a
/// seed-shuffled order, and once those are exhausted, random tours. Each
/// start is improved with 2-opt (plus Or-opt when `use_or_opt`). The start
/// sequence depends only on the seed, so more restarts never give a
/// longer result.
pub fn approx_opt_with(dm: &DistanceMatrix, seed: u64, restarts: usize, use_or_opt: bool) -> Tour {
    let n = dm.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<usize> = (1..n).collect();
    starts.shuffle(&mut rng);
    let ls = LocalSearch::new(dm, |_, _| true);

    let mut best: Option<Tour> = None;
    for r in 0..restarts.max(1) {
        let mut order = if r == 0 {
            nearest_neighbor(dm, 0).order
        } else if r <= starts.len() {
            nearest_neighbor(dm, starts[r - 1]).order
        } else {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut rng);
            o
        };
        ls.optimize(&mut order, use_or_opt);
        let t = Tour::from_order(order, dm).canonical(dm);
        if best.as_ref().map_or(true, |b| t.length < b.length) {
            best = Some(t);
        }
    }
    best.expect("at least one restart")
}

/// Nearest-neighbour + 2-opt, best of `restarts` starts.
pub fn approx_opt(dm: &DistanceMatrix, seed: u64, restarts: usize) -> Tour {
    approx_opt_with(dm, seed, restarts, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Approx,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Approx => "approx",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolverKind::Exact),
            "approx" => Ok(SolverKind::Approx),
            other => Err(Error::Parameter(format!("unknown solver '{other}'"))),
        }
    }
}

/// Restarts used for the evaluation reference beyond the exact range.
pub const EVAL_REFERENCE_RESTARTS: usize = 50;

/// Reference optimum for gaps and overlap ratios: Held-Karp up to
/// `EXACT_REFERENCE_MAX_N`, otherwise 2-opt + Or-opt with
/// `EVAL_REFERENCE_RESTARTS` starts. The second value says which was used.
pub fn eval_reference(dm: &DistanceMatrix, seed: u64) -> (Tour, SolverKind) {
    if dm.n() <= EXACT_REFERENCE_MAX_N {
        (held_karp(dm).expect("size checked"), SolverKind::Exact)
    } else {
        (approx_opt_with(dm, seed, EVAL_REFERENCE_RESTARTS, true), SolverKind::Approx)
    }
}

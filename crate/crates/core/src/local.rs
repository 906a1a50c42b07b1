//! Best-improvement 2-opt and Or-opt over a tour order, with an edge filter
//! that decides which newly created edges are admissible.

use std::time::Instant;

use crate::instances::DistanceMatrix;

/// Moves must improve by more than this to be applied.
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoOptMove {
    /// Position of the first removed edge `(order[i], order[i + 1])`.
    pub i: usize,
    /// Position of the second removed edge `(order[j], order[(j + 1) % n])`.
    pub j: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrOptMove {
    /// Position of the first city of the moved segment.
    pub start: usize,
    pub len: usize,
    /// Position of the city the segment is inserted after.
    pub after: usize,
    pub reversed: bool,
    pub delta: f64,
}

pub struct LocalSearch<'a, F> {
    dm: &'a DistanceMatrix,
    allowed: F,
    deadline: Option<Instant>,
}

impl<'a, F> LocalSearch<'a, F>
where
    F: Fn(usize, usize) -> bool,
{
    pub fn new(dm: &'a DistanceMatrix, allowed: F) -> Self {
        Self { dm, allowed, deadline: None }
    }

    pub fn with_deadline(mut self, deadline: Option<Instant>) -> Self {
        self.deadline = deadline;
        self
    }

    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    pub fn best_two_opt(&self, order: &[usize]) -> Option<TwoOptMove> {
        let n = order.len();
        if n < 4 {
            return None;
        }
        let d = |a: usize, b: usize| self.dm.get(a, b);
        let mut best: Option<TwoOptMove> = None;
        for i in 0..n - 2 {
            let a = order[i];
            let b = order[i + 1];
            let dab = d(a, b);
            // j = n - 1 with i = 0 removes two adjacent edges
            let j_end = if i == 0 { n - 1 } else { n };
            for j in (i + 2)..j_end {
                let c = order[j];
                let e = order[(j + 1) % n];
                let delta = d(a, c) + d(b, e) - dab - d(c, e);
                if delta < -IMPROVEMENT_EPS
                    && best.map_or(true, |m| delta < m.delta)
                    && (self.allowed)(a, c)
                    && (self.allowed)(b, e)
                {
                    best = Some(TwoOptMove { i, j, delta });
                }
            }
        }
        best
    }

    pub fn best_or_opt(&self, order: &[usize]) -> Option<OrOptMove> {
        let n = order.len();
        let d = |a: usize, b: usize| self.dm.get(a, b);
        let mut best: Option<OrOptMove> = None;
        for len in 1..=3usize {
            if n < len + 3 {
                break;
            }
            for start in 0..n {
                let first = order[start];
                let last = order[(start + len - 1) % n];
                let prev = order[(start + n - 1) % n];
                let next = order[(start + len) % n];
                let removed = d(prev, first) + d(last, next) - d(prev, next);
                // insertion edges (order[k], order[k+1]) strictly outside the segment
                for off in 0..(n - len - 1) {
                    let k = (start + len + off) % n;
                    let u = order[k];
                    let v = order[(k + 1) % n];
                    let duv = d(u, v);
                    for reversed in [false, true] {
                        let (x, y) = if reversed { (last, first) } else { (first, last) };
                        let delta = d(u, x) + d(y, v) - duv - removed;
                        if delta < -IMPROVEMENT_EPS
                            && best.map_or(true, |m| delta < m.delta)
                            && (self.allowed)(u, x)
                            && (self.allowed)(y, v)
                        {
                            best = Some(OrOptMove { start, len, after: k, reversed, delta });
                        }
                    }
                }
            }
        }
        best
    }

    /// Runs best-improvement 2-opt until no admissible improving move is
    /// left or the deadline passes. Returns the summed move deltas.
    pub fn two_opt(&self, order: &mut [usize]) -> f64 {
        let mut total = 0.0;
        while !self.expired() {
            match self.best_two_opt(order) {
                Some(mv) => {
                    apply_two_opt(order, mv);
                    total += mv.delta;
                }
                None => break,
            }
        }
        total
    }

    /// Alternates 2-opt descent with single best Or-opt moves until neither
    /// improves.
    pub fn optimize(&self, order: &mut Vec<usize>, use_or_opt: bool) -> f64 {
        let mut total = self.two_opt(order);
        if !use_or_opt {
            return total;
        }
        while !self.expired() {
            let Some(mv) = self.best_or_opt(order) else { break };
            apply_or_opt(order, mv);
            total += mv.delta;
            total += self.two_opt(order);
        }
        total
    }
}

/// Reverses `order[i + 1..=j]`.
pub fn apply_two_opt(order: &mut [usize], mv: TwoOptMove) {
    order[mv.i + 1..=mv.j].reverse();
}

pub fn apply_or_opt(order: &mut Vec<usize>, mv: OrOptMove) {
    let n = order.len();
    let mut segment: Vec<usize> = (0..mv.len).map(|k| order[(mv.start + k) % n]).collect();
    if mv.reversed {
        segment.reverse();
    }
    let anchor = order[mv.after];
    let mut rest: Vec<usize> = (0..n - mv.len)
        .map(|k| order[(mv.start + mv.len + k) % n])
        .collect();
    let pos = rest.iter().position(|&c| c == anchor).expect("anchor outside segment");
    rest.splice(pos + 1..pos + 1, segment);
    *order = rest;
}

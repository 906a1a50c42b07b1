use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::instances::DistanceMatrix;

/// A closed tour: a permutation of the cities and its cycle length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

impl Tour {
    /// Builds a tour from an order, checking it is a permutation of `0..n`.
    pub fn new(order: Vec<usize>, dm: &DistanceMatrix) -> Result<Self> {
        check_permutation(&order, dm.n())?;
        let length = cycle_length(&order, dm);
        Ok(Self { order, length })
    }

    pub(crate) fn from_order(order: Vec<usize>, dm: &DistanceMatrix) -> Self {
        let length = cycle_length(&order, dm);
        Self { order, length }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Rotates the tour to start at city 0 and picks the direction whose
    /// second city has the smaller index. The length is recomputed in that
    /// order, so equal cycles always carry bit-identical lengths.
    pub fn canonical(&self, dm: &DistanceMatrix) -> Self {
        Self::from_order(canonical_order(&self.order), dm)
    }

    /// Undirected edges `(min, max)` of the cycle, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.order.len();
        let mut e: Vec<(usize, usize)> = (0..n)
            .map(|k| {
                let a = self.order[k];
                let b = self.order[(k + 1) % n];
                (a.min(b), a.max(b))
            })
            .collect();
        e.sort_unstable();
        e
    }

    pub fn to_text(&self) -> String {
        let order: Vec<String> = self.order.iter().map(|c| c.to_string()).collect();
        format!("LENGTH: {:.16e}\n{}\n", self.length, order.join(" "))
    }

    pub fn parse(text: &str, dm: &DistanceMatrix) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().unwrap_or_default();
        let len_str = first.strip_prefix("LENGTH:").ok_or_else(|| Error::Parse {
            line: 1,
            msg: "expected 'LENGTH: <float>'".into(),
        })?;
        let stated: f64 = len_str.trim().parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad length '{}'", len_str.trim()),
        })?;
        let order = lines
            .next()
            .unwrap_or_default()
            .split_whitespace()
            .map(|s| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line: 2,
                    msg: format!("bad city index '{s}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tour = Tour::new(order, dm)?;
        if (tour.length - stated).abs() > 1e-9 * tour.length.max(1.0) {
            return Err(Error::Structure(format!(
                "stated length {stated} disagrees with recomputed {}",
                tour.length
            )));
        }
        Ok(tour)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, dm: &DistanceMatrix) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dm)
    }
}

pub fn cycle_length(order: &[usize], dm: &DistanceMatrix) -> f64 {
    let n = order.len();
    (0..n).map(|k| dm.get(order[k], order[(k + 1) % n])).sum()
}

pub fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Structure(format!("tour visits {} cities, expected {n}", order.len())));
    }
    let mut seen = vec![false; n];
    for &c in order {
        if c >= n || std::mem::replace(&mut seen[c], true) {
            return Err(Error::Structure(format!("tour is not a permutation (city {c})")));
        }
    }
    Ok(())
}

pub fn canonical_order(order: &[usize]) -> Vec<usize> {
    let n = order.len();
    let start = order.iter().position(|&c| c == 0).unwrap_or(0);
    let forward: Vec<usize> = (0..n).map(|k| order[(start + k) % n]).collect();
    if n > 2 && forward[1] > forward[n - 1] {
        let mut rev = Vec::with_capacity(n);
        rev.push(forward[0]);
        rev.extend(forward[1..].iter().rev());
        rev
    } else {
        forward
    }
}

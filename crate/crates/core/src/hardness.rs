//! Phase-transition hardness: `tau = l_opt / sqrt(n * A)` and its
//! distance to the critical value 0.78.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{generate, DistributionKind, Family, TspInstance};
use crate::oracle::{approx_opt, held_karp, SolverKind, HELD_KARP_MAX_N, REFERENCE_RESTARTS};

pub const CRITICAL_TAU: f64 = 0.78;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaMode {
    /// Axis-aligned bounding box.
    #[default]
    Bbox,
    Hull,
}

impl AreaMode {
    pub fn name(self) -> &'static str {
        match self {
            AreaMode::Bbox => "bbox",
            AreaMode::Hull => "hull",
        }
    }
}

impl std::str::FromStr for AreaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbox" => Ok(AreaMode::Bbox),
            "hull" => Ok(AreaMode::Hull),
            other => Err(Error::Parameter(format!("unknown area mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardnessReport {
    pub tau: f64,
    pub area: f64,
    pub l_ref: f64,
    pub solver: SolverKind,
    pub n: usize,
    pub t_c: f64,
    pub delta_to_critical: f64,
}

pub fn bbox_area(coords: &[(f64, f64)]) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in coords {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    (x1 - x0) * (y1 - y0)
}

/// Area of the convex hull (Andrew's monotone chain + shoelace).
pub fn hull_area(coords: &[(f64, f64)]) -> f64 {
    let mut pts = coords.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let k = hull.len();
    let twice: f64 = (0..k)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % k]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() / 2.0
}

pub fn area(coords: &[(f64, f64)], mode: AreaMode) -> f64 {
    match mode {
        AreaMode::Bbox => bbox_area(coords),
        AreaMode::Hull => hull_area(coords),
    }
}

/// Builds a report from a known reference length.
pub fn report_from_length(inst: &TspInstance, l_ref: f64, solver: SolverKind, mode: AreaMode) -> Result<HardnessReport> {
    let a = area(&inst.coords, mode);
    if !(a > 0.0) {
        return Err(Error::Geometry(format!("instance {} covers zero area", inst.id)));
    }
    let n = inst.n();
    let tau = l_ref / (n as f64 * a).sqrt();
    Ok(HardnessReport {
        tau,
        area: a,
        l_ref,
        solver,
        n,
        t_c: CRITICAL_TAU,
        delta_to_critical: (tau - CRITICAL_TAU).abs(),
    })
}

/// `tau` with the requested solver; the approximate solver uses
/// `seed` for its restart order.
pub fn compute_tau(inst: &TspInstance, solver: SolverKind, mode: AreaMode, seed: u64) -> Result<HardnessReport> {
    let n = inst.n();
    if n < 3 {
        return Err(Error::Parameter("tau needs at least 3 cities".into()));
    }
    if solver == SolverKind::Exact && n > HELD_KARP_MAX_N {
        return Err(Error::SizeLimit(format!("exact tau supports n <= {HELD_KARP_MAX_N}, got {n}")));
    }
    // reject degenerate instances before spending time on the solver
    if !(area(&inst.coords, mode) > 0.0) {
        return Err(Error::Geometry(format!("instance {} covers zero area", inst.id)));
    }
    let dm = inst.distance_matrix();
    let tour = match solver {
        SolverKind::Exact => held_karp(&dm)?,
        SolverKind::Approx => approx_opt(&dm, seed, REFERENCE_RESTARTS),
    };
    report_from_length(inst, tour.length, solver, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kinds: Vec<DistributionKind>,
    pub sizes: Vec<usize>,
    pub count: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub area_mode: AreaMode,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: Family,
    pub n: usize,
    pub count: usize,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub solver: SolverKind,
    pub area_mode: AreaMode,
}

pub const SWEEP_HEADER: &str = "kind,n,count,mean_tau,std_tau,solver,area_mode";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kind,
            self.n,
            self.count,
            self.mean_tau,
            self.std_tau,
            self.solver.name(),
            self.area_mode.name()
        )
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Per (kind, n) cell: `count` instances with seeds `seed, seed + 1, ...`.
pub fn hardness_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.count < 1 || spec.workers < 1 {
        return Err(Error::Parameter("count and workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    for kind in &spec.kinds {
        for &n in &spec.sizes {
            let one = |k: usize| -> Result<f64> {
                let s = spec.seed.wrapping_add(k as u64);
                let inst = generate(kind, n, s)?;
                Ok(compute_tau(&inst, spec.solver, spec.area_mode, s)?.tau)
            };
            let taus: Vec<f64> = if spec.workers > 1 {
                pool.install(|| (0..spec.count).into_par_iter().map(one).collect::<Result<_>>())?
            } else {
                (0..spec.count).map(one).collect::<Result<_>>()?
            };
            let (mean_tau, std_tau) = mean_std(&taus);
            rows.push(SweepRow {
                kind: kind.family,
                n,
                count: spec.count,
                mean_tau,
                std_tau,
                solver: spec.solver,
                area_mode: spec.area_mode,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TspInstance {
        TspInstance::new("sq", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn unit_square_tau_is_two() {
        let r = compute_tau(&square(), SolverKind::Exact, AreaMode::Bbox, 0).unwrap();
        assert_eq!(r.tau, 2.0);
        assert_eq!(r.area, 1.0);
        assert!((r.delta_to_critical - 1.22).abs() < 1e-12);
    }

    #[test]
    fn hull_of_square_and_triangle() {
        assert_eq!(hull_area(&square().coords), 1.0);
        let mut pts = square().coords;
        pts.push((0.5, 0.5));
        assert_eq!(hull_area(&pts), 1.0);
        assert_eq!(hull_area(&[(0.0, 0.0), (2.0, 0.0), (0.0, 1.0)]), 1.0);
    }

    #[test]
    fn errors() {
        let line = TspInstance::new("l", vec![(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]).unwrap();
        assert!(matches!(compute_tau(&line, SolverKind::Exact, AreaMode::Bbox, 0), Err(Error::Geometry(_))));
        let big = generate(&DistributionKind::uniform(), 19, 0).unwrap();
        assert!(matches!(compute_tau(&big, SolverKind::Exact, AreaMode::Bbox, 0), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn single_sample_has_zero_std() {
        let spec = SweepSpec {
            kinds: vec![DistributionKind::uniform()],
            sizes: vec![12],
            count: 1,
            seed: 3,
            solver: SolverKind::Approx,
            area_mode: AreaMode::Bbox,
            workers: 1,
        };
        let rows = hardness_sweep(&spec).unwrap();
        assert_eq!(rows[0].std_tau, 0.0);
        assert_eq!(hardness_sweep(&spec).unwrap(), rows);
    }
}

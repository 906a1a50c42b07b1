//! Heat-map-guided tour construction and candidate-restricted local search.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::heatmap::{build_heatmap, overlap_ratio, sparsify, CandidateSet};
use crate::instances::{DistanceMatrix, TspInstance};
use crate::local::LocalSearch;
use crate::hardness::mean_std;
use crate::oracle::{eval_reference, held_karp, EXACT_REFERENCE_MAX_N};
use crate::tour::{canonical_order, Tour};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    /// Perturb-and-reoptimize rounds without improvement tolerated before a
    /// restart is abandoned; 0 disables perturbation.
    pub max_no_improve: usize,
    pub time_budget_ms: Option<u64>,
    pub seed: u64,
    pub use_or_opt: bool,
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_no_improve: 5,
            time_budget_ms: None,
            seed: 0,
            use_or_opt: true,
            workers: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 || self.workers < 1 {
            return Err(Error::Parameter("restarts and workers must be at least 1".into()));
        }
        if self.time_budget_ms == Some(0) {
            return Err(Error::Parameter("time budget must be positive".into()));
        }
        Ok(())
    }
}

/// Follows the heaviest candidate edge to an unvisited city, falling back to
/// the nearest unvisited city. Weight ties go to the smaller index.
pub fn greedy_construct(cs: &CandidateSet, dm: &DistanceMatrix, start: usize) -> Tour {
    let n = dm.n();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let mut next: Option<(usize, f64)> = None;
        for &(c, w) in cs.neighbors(cur) {
            if !visited[c] && next.map_or(true, |(_, bw)| w > bw) {
                next = Some((c, w));
            }
        }
        let c = match next {
            Some((c, _)) => c,
            None => (0..n)
                .filter(|&c| !visited[c])
                .min_by(|&a, &b| dm.get(cur, a).total_cmp(&dm.get(cur, b)))
                .expect("unvisited city remains"),
        };
        visited[c] = true;
        order.push(c);
        cur = c;
    }
    Tour::from_order(order, dm)
}

fn deadline_of(cfg: &SearchConfig, started: Instant) -> Option<Instant> {
    cfg.time_budget_ms.map(|ms| started + Duration::from_millis(ms))
}

/// Best-improvement 2-opt admitting only moves whose two new edges are
/// candidates (every move when the set is complete), plus Or-opt when
/// enabled.
pub fn two_opt_guided(tour: &Tour, cs: &CandidateSet, dm: &DistanceMatrix, cfg: &SearchConfig) -> Tour {
    two_opt_until(tour, cs, dm, cfg, deadline_of(cfg, Instant::now()))
}

fn two_opt_until(
    tour: &Tour,
    cs: &CandidateSet,
    dm: &DistanceMatrix,
    cfg: &SearchConfig,
    deadline: Option<Instant>,
) -> Tour {
    let mut order = tour.order.clone();
    if cs.is_complete() {
        LocalSearch::new(dm, |_, _| true)
            .with_deadline(deadline)
            .optimize(&mut order, cfg.use_or_opt);
    } else {
        LocalSearch::new(dm, |a, b| cs.contains(a, b))
            .with_deadline(deadline)
            .optimize(&mut order, cfg.use_or_opt);
    }
    let out = Tour::from_order(order, dm);
    if out.length <= tour.length {
        out
    } else {
        tour.clone()
    }
}

/// Random double-bridge reconnection.
fn double_bridge(order: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let n = order.len();
    if n < 8 {
        let mut o = order.to_vec();
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        o.swap(i, j);
        return o;
    }
    let mut cuts = [rng.gen_range(1..n), rng.gen_range(1..n), rng.gen_range(1..n)];
    cuts.sort_unstable();
    let [a, b, c] = cuts;
    let mut o = Vec::with_capacity(n);
    o.extend_from_slice(&order[..a]);
    o.extend_from_slice(&order[b..c]);
    o.extend_from_slice(&order[a..b]);
    o.extend_from_slice(&order[c..]);
    o
}

/// Cities ordered by descending candidate row sum, ties to the smaller index.
pub fn restart_cities(cs: &CandidateSet) -> Vec<usize> {
    let mut cities: Vec<usize> = (0..cs.n()).collect();
    let sums: Vec<f64> = cities.iter().map(|&c| cs.row_sum(c)).collect();
    cities.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    cities
}

fn better(a: &Tour, b: &Tour) -> bool {
    a.length < b.length || (a.length == b.length && a.order < b.order)
}

/// Multi-start guided search over a candidate set.
///
/// Restart r starts from the r-th city by candidate row sum (random cities
/// once those run out), runs greedy construction and guided local search,
/// then perturbs with double-bridge kicks until `max_no_improve`
/// consecutive kicks fail. Each restart seeds its own generator from
/// `(cfg.seed, r)`, so the result does not depend on `workers` unless a
/// time budget cuts restarts short.
pub fn search_candidates(cs: &CandidateSet, dm: &DistanceMatrix, cfg: &SearchConfig) -> Result<Tour> {
    cfg.validate()?;
    if cs.n() != dm.n() {
        return Err(Error::Structure(format!("candidate set has {} cities, distances {}", cs.n(), dm.n())));
    }
    let started = Instant::now();
    let deadline = deadline_of(cfg, started);
    let ranked = restart_cities(cs);
    let n = dm.n();

    let run = |r: usize| -> Option<Tour> {
        if r > 0 && deadline.is_some_and(|d| Instant::now() >= d) {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(r as u64));
        let start = if r < n { ranked[r] } else { rng.gen_range(0..n) };
        let mut best = two_opt_until(&greedy_construct(cs, dm, start), cs, dm, cfg, deadline);
        let mut failures = 0;
        while failures < cfg.max_no_improve && !deadline.is_some_and(|d| Instant::now() >= d) {
            let kicked = Tour::from_order(double_bridge(&best.order, &mut rng), dm);
            let cand = two_opt_until(&kicked, cs, dm, cfg, deadline);
            if cand.length < best.length - 1e-12 {
                best = cand;
                failures = 0;
            } else {
                failures += 1;
            }
        }
        Some(Tour::from_order(canonical_order(&best.order), dm))
    };

    let results: Vec<Option<Tour>> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.restarts).into_par_iter().map(run).collect())
    } else {
        (0..cfg.restarts).map(run).collect()
    };
    results
        .into_iter()
        .flatten()
        .reduce(|a, b| if better(&b, &a) { b } else { a })
        .ok_or_else(|| Error::Parameter("no restart completed".into()))
}

/// One evaluated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub n: usize,
    pub m: usize,
    pub top_m: usize,
    pub length: f64,
    pub opt_length: Option<f64>,
    pub gap: Option<f64>,
    pub overlap_ratio: Option<f64>,
    pub wall_ms: f64,
    pub seed: u64,
}

pub const EVAL_HEADER: &str = "instance_id,n,m,top_m,length,opt_length,gap,overlap_ratio,wall_ms,seed";

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{}",
            self.instance_id,
            self.n,
            self.m,
            self.top_m,
            self.length,
            opt(self.opt_length),
            opt(self.gap),
            opt(self.overlap_ratio),
            self.wall_ms,
            self.seed
        )
    }
}

/// `(l - l_opt) / l_opt`.
pub fn gap(length: f64, opt_length: f64) -> f64 {
    (length - opt_length) / opt_length
}

/// Exact reference tour when the instance is small enough for Held-Karp.
pub fn exact_reference(inst: &TspInstance) -> Option<Tour> {
    (inst.n() <= EXACT_REFERENCE_MAX_N).then(|| held_karp(&inst.distance_matrix()).expect("size checked"))
}

/// The full pipeline: encoder, heat map, top-M candidates, guided search.
/// `top_m` is clamped to `n - 1`.
pub fn solve(inst: &TspInstance, model: &EncoderModel, top_m: usize, cfg: &SearchConfig) -> Result<(Tour, EvalRecord)> {
    let reference = exact_reference(inst);
    solve_with_reference(inst, model, top_m, cfg, reference.as_ref())
}

pub fn solve_with_reference(
    inst: &TspInstance,
    model: &EncoderModel,
    top_m: usize,
    cfg: &SearchConfig,
    reference: Option<&Tour>,
) -> Result<(Tour, EvalRecord)> {
    let started = Instant::now();
    let dm = inst.distance_matrix();
    let effective = top_m.clamp(1, inst.n() - 1);
    let heat = build_heatmap(&model.forward(inst)?);
    let cs = sparsify(&heat, effective)?;
    let tour = search_candidates(&cs, &dm, cfg)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let (opt_length, gap_value, overlap) = match reference {
        Some(opt) => (
            Some(opt.length),
            Some(gap(tour.length, opt.length)),
            Some(overlap_ratio(&cs, opt)?),
        ),
        None => (None, None, None),
    };
    let record = EvalRecord {
        instance_id: inst.id.clone(),
        n: inst.n(),
        m: model.config.m,
        top_m: effective,
        length: tour.length,
        opt_length,
        gap: gap_value,
        overlap_ratio: overlap,
        wall_ms,
        seed: cfg.seed,
    };
    Ok((tour, record))
}

/// Mean/std gap and mean overlap ratio for one `top_m` over a set of
/// evaluated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub top_m: usize,
    pub count: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_overlap: f64,
}

pub const SUMMARY_HEADER: &str = "top_m,count,mean_gap_pct,std_gap_pct,mean_overlap_pct";

impl EvalSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4}",
            self.top_m,
            self.count,
            100.0 * self.mean_gap,
            100.0 * self.std_gap,
            100.0 * self.mean_overlap
        )
    }
}

/// Solves every instance at every requested `top_m` against a reference
/// from [`eval_reference`] (exact up to n = 16, strong heuristic beyond).
/// Records are grouped by instance, then by `top_m` in the given order.
pub fn evaluate(
    instances: &[TspInstance],
    model: &EncoderModel,
    top_ms: &[usize],
    cfg: &SearchConfig,
) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::with_capacity(instances.len() * top_ms.len());
    for inst in instances {
        let (reference, _) = eval_reference(&inst.distance_matrix(), cfg.seed);
        for &top_m in top_ms {
            let (_, rec) = solve_with_reference(inst, model, top_m, cfg, Some(&reference))?;
            records.push(rec);
        }
    }
    Ok(records)
}

/// Groups records by their requested `top_m` position (records must come
/// from [`evaluate`] with the same `top_ms`).
pub fn summarize(records: &[EvalRecord], top_ms: &[usize]) -> Vec<EvalSummary> {
    top_ms
        .iter()
        .enumerate()
        .map(|(k, &top_m)| {
            let group: Vec<&EvalRecord> = records.iter().skip(k).step_by(top_ms.len()).collect();
            let gaps: Vec<f64> = group.iter().filter_map(|r| r.gap).collect();
            let overlaps: Vec<f64> = group.iter().filter_map(|r| r.overlap_ratio).collect();
            let (mean_gap, std_gap) = if gaps.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&gaps) };
            let mean_overlap = if overlaps.is_empty() { f64::NAN } else { mean_std(&overlaps).0 };
            EvalSummary { top_m, count: group.len(), mean_gap, std_gap, mean_overlap }
        })
        .collect()
}

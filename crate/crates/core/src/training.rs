//! Surrogate loss on the heat map, its gradient, and the training loop.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{build_graph, EncoderConfig, EncoderModel, Params};
use crate::error::{Error, Result};
use crate::heatmap::{heatmap_backward, heatmap_of, HeatMap, Rescale};
use crate::instances::{DistanceMatrix, TspInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Row- and column-sum penalty on H plus the distance term.
    #[default]
    Generalized,
    /// Row-sum penalty on T, self-loop penalty on H, plus the distance term.
    Legacy,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generalized" => Ok(LossVariant::Generalized),
            "legacy" => Ok(LossVariant::Legacy),
            other => Err(Error::Parameter(format!("unknown loss variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 100.0, lambda2: 0.0, variant: LossVariant::Generalized }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Parameter("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub constraint_term: f64,
    pub distance_term: f64,
    /// `sum_i H_ii`; only weighted into `total` by the legacy variant.
    pub self_loop_term: f64,
}

fn check_square(h: ArrayView2<f64>, dm: &DistanceMatrix) -> Result<()> {
    let n = dm.n();
    if h.dim() != (n, n) {
        return Err(Error::Structure(format!("heat map is {:?}, distances are {n}x{n}", h.dim())));
    }
    Ok(())
}

fn distance_term(h: ArrayView2<f64>, dm: &DistanceMatrix) -> f64 {
    (&h * dm.as_array()).sum()
}

/// Generalized loss: `l1 * [sum_j (1 - colsum_j)^2 + sum_i (1 - rowsum_i)^2] + <D, H>`.
pub fn loss(h: &HeatMap, dm: &DistanceMatrix, cfg: &LossConfig) -> Result<LossReport> {
    if cfg.variant == LossVariant::Legacy {
        return Err(Error::Parameter("the legacy loss needs T; use legacy_loss".into()));
    }
    generalized_loss(h.h.view(), dm, cfg)
}

fn generalized_loss(h: ArrayView2<f64>, dm: &DistanceMatrix, cfg: &LossConfig) -> Result<LossReport> {
    check_square(h, dm)?;
    let rows = h.sum_axis(Axis(1));
    let cols = h.sum_axis(Axis(0));
    let constraint: f64 = cols.iter().map(|c| (1.0 - c).powi(2)).sum::<f64>()
        + rows.iter().map(|r| (1.0 - r).powi(2)).sum::<f64>();
    let distance = distance_term(h, dm);
    let self_loops = h.diag().sum();
    Ok(LossReport {
        total: cfg.lambda1 * constraint + distance,
        constraint_term: constraint,
        distance_term: distance,
        self_loop_term: self_loops,
    })
}

/// Legacy loss: `l1 * sum_i (rowsum_i(T) - 1)^2 + l2 * tr(H) + <D, H>`.
pub fn legacy_loss(t: ArrayView2<f64>, h: &HeatMap, dm: &DistanceMatrix, cfg: &LossConfig) -> Result<LossReport> {
    check_square(h.h.view(), dm)?;
    if t.nrows() != dm.n() {
        return Err(Error::Structure(format!("T has {} rows, expected {}", t.nrows(), dm.n())));
    }
    let constraint: f64 = t.sum_axis(Axis(1)).iter().map(|r| (r - 1.0).powi(2)).sum();
    let distance = distance_term(h.h.view(), dm);
    let self_loops = h.h.diag().sum();
    Ok(LossReport {
        total: cfg.lambda1 * constraint + cfg.lambda2 * self_loops + distance,
        constraint_term: constraint,
        distance_term: distance,
        self_loop_term: self_loops,
    })
}

/// `dL/dH_ij = D_ij - 2 l1 (1 - colsum_j) - 2 l1 (1 - rowsum_i)` for the
/// generalized loss.
pub fn loss_backward(h: &HeatMap, dm: &DistanceMatrix, cfg: &LossConfig) -> Result<Array2<f64>> {
    generalized_backward(h.h.view(), dm, cfg)
}

fn generalized_backward(h: ArrayView2<f64>, dm: &DistanceMatrix, cfg: &LossConfig) -> Result<Array2<f64>> {
    check_square(h, dm)?;
    let rows = h.sum_axis(Axis(1));
    let cols = h.sum_axis(Axis(0));
    let mut g = dm.as_array().clone();
    let l2 = 2.0 * cfg.lambda1;
    for ((i, j), v) in g.indexed_iter_mut() {
        *v -= l2 * (1.0 - cols[j]) + l2 * (1.0 - rows[i]);
    }
    Ok(g)
}

/// Loss of one instance under `model`, with parameter gradients when
/// `with_grad` is set.
pub fn instance_objective(
    model: &EncoderModel,
    inst: &TspInstance,
    cfg: &LossConfig,
    rescale: Rescale,
    with_grad: bool,
) -> Result<(LossReport, Option<Params>)> {
    let dm = inst.distance_matrix();
    let graph = build_graph(inst, &model.config);
    let cache = model.forward_cached(inst, &graph)?;
    let (n, m) = cache.t.dim();
    let factor = rescale.total_factor(n, m);
    let h = heatmap_of(cache.t.view()) * factor;
    let heat = HeatMap { h, m_source: m };

    let report = match cfg.variant {
        LossVariant::Generalized => generalized_loss(heat.h.view(), &dm, cfg)?,
        LossVariant::Legacy => {
            let t_scaled = &cache.t * rescale.t_factor(n, m);
            legacy_loss(t_scaled.view(), &heat, &dm, cfg)?
        }
    };
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            id: inst.id.clone(),
            detail: format!("{report:?}"),
        });
    }
    if !with_grad {
        return Ok((report, None));
    }

    let gh = match cfg.variant {
        LossVariant::Generalized => generalized_backward(heat.h.view(), &dm, cfg)?,
        LossVariant::Legacy => {
            let mut g = dm.as_array().clone();
            for i in 0..n {
                g[[i, i]] += cfg.lambda2;
            }
            g
        }
    };
    let mut gt = heatmap_backward(cache.t.view(), gh.view())? * factor;
    if cfg.variant == LossVariant::Legacy {
        let tf = rescale.t_factor(n, m);
        let rows = cache.t.sum_axis(Axis(1));
        for i in 0..n {
            let g = 2.0 * cfg.lambda1 * (tf * rows[i] - 1.0) * tf;
            gt.row_mut(i).mapv_inplace(|v| v + g);
        }
    }
    let grads = model.backward_cached(&cache, &graph, gt.view())?;
    Ok((report, Some(grads)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub workers: usize,
    pub rescale: Rescale,
    /// Write `epoch_<k>.model` every this many epochs into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            workers: 1,
            rescale: Rescale::None,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.workers < 1 {
            return Err(Error::Parameter("epochs, batch_size and workers must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Parameter("invalid optimizer hyperparameters".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Parameter("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Params,
    second: Params,
    steps: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        Self {
            first: Params::zeros_like(params),
            second: Params::zeros_like(params),
            steps: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.first.tensors)
            .zip(&mut self.second.tensors)
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_constraint: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub history: Vec<EpochStats>,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_total,mean_constraint,mean_distance\n");
    for s in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            s.epoch, s.mean_total, s.mean_constraint, s.mean_distance
        ));
    }
    out
}

pub fn write_history(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

fn checkpoint_meta(cfg: &TrainConfig, loss: &LossConfig, epoch: usize) -> Vec<(String, String)> {
    vec![
        ("epoch".into(), epoch.to_string()),
        (
            "optimizer".into(),
            format!("adam lr={} beta1={} beta2={} eps={}", cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
        ),
        (
            "loss".into(),
            format!("{:?} lambda1={} lambda2={}", loss.variant, loss.lambda1, loss.lambda2).to_lowercase(),
        ),
        ("seed".into(), cfg.seed.to_string()),
    ]
}

/// Writes a checkpoint carrying the training metadata as comment lines.
pub fn save_checkpoint(
    model: &EncoderModel,
    train: &TrainConfig,
    loss: &LossConfig,
    epoch: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = model.to_text_with_meta(&checkpoint_meta(train, loss, epoch));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains from a model initialized with `train.seed`.
pub fn train(
    dataset: &[TspInstance],
    encoder: EncoderConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = EncoderModel::init(encoder, train_cfg.seed)?;
    train_from(model, dataset, loss_cfg, train_cfg)
}

/// Mini-batch training with mean-reduced loss. Batches are drawn from a
/// per-epoch shuffle seeded by `train.seed`; with several workers the
/// per-instance gradients are computed in parallel but summed in dataset
/// order.
pub fn train_from(
    mut model: EncoderModel,
    dataset: &[TspInstance],
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Parameter("training dataset is empty".into()));
    }
    loss_cfg.validate()?;
    train_cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(train_cfg.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_ba7c);
    let mut adam = Adam::new(&model.params, train_cfg);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        for batch in order.chunks(train_cfg.batch_size) {
            let results: Vec<Result<(LossReport, Option<Params>)>> = if train_cfg.workers > 1 {
                pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&k| instance_objective(&model, &dataset[k], loss_cfg, train_cfg.rescale, true))
                        .collect()
                })
            } else {
                batch
                    .iter()
                    .map(|&k| instance_objective(&model, &dataset[k], loss_cfg, train_cfg.rescale, true))
                    .collect()
            };
            let mut grads = Params::zeros_like(&model.params);
            for (r, &k) in results.into_iter().zip(batch) {
                let (report, g) = r.map_err(|e| match e {
                    Error::Numeric(detail) => Error::NonFiniteLoss { id: dataset[k].id.clone(), detail },
                    other => other,
                })?;
                sum.total += report.total;
                sum.constraint_term += report.constraint_term;
                sum.distance_term += report.distance_term;
                grads.add_assign(&g.expect("gradient requested"));
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads);
            if !model.params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    id: dataset[batch[0]].id.clone(),
                    detail: format!("parameters diverged at epoch {epoch}"),
                });
            }
        }
        let count = dataset.len() as f64;
        history.push(EpochStats {
            epoch,
            mean_total: sum.total / count,
            mean_constraint: sum.constraint_term / count,
            mean_distance: sum.distance_term / count,
        });
        if let (Some(every), Some(dir)) = (train_cfg.checkpoint_every, &train_cfg.checkpoint_dir) {
            if epoch % every == 0 {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                save_checkpoint(&model, train_cfg, loss_cfg, epoch, dir.join(format!("epoch_{epoch}.model")))?;
            }
        }
    }
    Ok(TrainOutcome { model, history })
}

/// Mean loss of `model` over a dataset, without gradients.
pub fn evaluate_loss(model: &EncoderModel, dataset: &[TspInstance], cfg: &LossConfig, rescale: Rescale) -> Result<LossReport> {
    let mut sum = LossReport::default();
    for inst in dataset {
        let (r, _) = instance_objective(model, inst, cfg, rescale, false)?;
        sum.total += r.total;
        sum.constraint_term += r.constraint_term;
        sum.distance_term += r.distance_term;
        sum.self_loop_term += r.self_loop_term;
    }
    let c = dataset.len().max(1) as f64;
    Ok(LossReport {
        total: sum.total / c,
        constraint_term: sum.constraint_term / c,
        distance_term: sum.distance_term / c,
        self_loop_term: sum.self_loop_term / c,
    })
}

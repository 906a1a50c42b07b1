use std::fs;
use std::path::Path;
use std::time::Instant;

use utsplab::encoder::{EncoderConfig, EncoderModel};
use utsplab::hardness::{hardness_sweep, sweep_csv, SweepSpec};
use utsplab::heatmap::{build_heatmap, overlap_ratio, sparsify, CandidateSet};
use utsplab::instances::{self, DistributionKind, Family, TspInstance};
use utsplab::search::{
    evaluate, exact_reference, gap, search_candidates, solve, summarize, EvalRecord, SearchConfig, EVAL_HEADER,
    SUMMARY_HEADER,
};
use utsplab::training::{save_checkpoint, train, write_history, LossConfig, TrainConfig};

use crate::config::{
    overlay, parse_value, required, Common, EvalArgs, ExperimentConfig, GenArgs, HeatmapArgs, Resolved, SearchArgs,
    TauArgs, TrainArgs,
};
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn existing(path: &Path) -> CliResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingFile(format!("{} not found", path.display())))
    }
}

fn load_file_config(common: &Common) -> CliResult<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn gen(common: &Common, flags: &GenArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.gen, flags)?;
    let family: Family = parse_value(args.dist.as_deref().unwrap_or("uniform"))?;
    let mut kind = DistributionKind::new(family);
    if let Some(c) = &args.center {
        kind.center = Some((c[0], c[1]));
    }
    kind.radius = args.radius.unwrap_or(kind.radius);
    kind.strength = args.strength.unwrap_or(kind.strength);
    let n = required(&args.n, "n")?;
    let count = args.count.unwrap_or(1);

    create_dir(&run.out)?;
    let rows = instances::generate_batch(&kind, n, count, run.seed, &run.out)?;
    run.record(|c| c.gen = Some(args)).save_into(&run.out)?;
    println!("wrote {} instances and {}", rows.len(), run.out.join(instances::MANIFEST_FILE).display());
    Ok(())
}

pub fn train_cmd(common: &Common, flags: &TrainArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.train, flags)?;
    let manifest = required(&args.manifest, "manifest")?;
    let dataset = instances::load_manifest_instances(existing(&manifest)?)?;

    let mut enc = EncoderConfig::new(args.m.unwrap_or(20));
    enc.layers = args.layers.unwrap_or(enc.layers);
    enc.hidden = args.hidden.unwrap_or(enc.hidden);
    enc.knn_k = args.knn;
    enc.kernel_sigma = args.sigma;
    let mut loss = LossConfig::default();
    loss.lambda1 = args.lambda1.unwrap_or(loss.lambda1);
    loss.lambda2 = args.lambda2.unwrap_or(loss.lambda2);
    if let Some(v) = &args.loss {
        loss.variant = parse_value(v)?;
    }
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        lr: args.lr.unwrap_or(defaults.lr),
        seed: run.seed,
        workers: run.workers,
        rescale: match &args.rescale {
            Some(r) => parse_value(r)?,
            None => defaults.rescale,
        },
        checkpoint_every: args.checkpoint_every,
        checkpoint_dir: Some(run.out.join("checkpoints")),
        ..defaults
    };

    create_dir(&run.out)?;
    let outcome = train(&dataset, enc, &loss, &cfg)?;
    save_checkpoint(&outcome.model, &cfg, &loss, cfg.epochs, run.out.join("model.ckpt"))?;
    write_history(&outcome.history, run.out.join("history.csv"))?;
    run.record(|c| c.train = Some(args)).save_into(&run.out)?;
    let (first, last) = (outcome.history.first().unwrap(), outcome.history.last().unwrap());
    println!(
        "trained {} epochs on {} instances; mean loss {:.6} -> {:.6}",
        cfg.epochs,
        dataset.len(),
        first.mean_total,
        last.mean_total
    );
    Ok(())
}

pub fn heatmap(common: &Common, flags: &HeatmapArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.heatmap, flags)?;
    let model = EncoderModel::load(existing(&required(&args.model, "model")?)?)?;
    let inst = instances::load(existing(&required(&args.instance, "instance")?)?)?;
    let top_m = args.top_m.unwrap_or(5);

    let cs = sparsify(&build_heatmap(&model.forward(&inst)?), top_m)?;
    create_dir(&run.out)?;
    let path = run.out.join(format!("{}.heat", inst.id));
    cs.save(&path)?;
    run.record(|c| c.heatmap = Some(args)).save_into(&run.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn search_config(
    run: &Resolved,
    restarts: Option<usize>,
    max_no_improve: Option<usize>,
    budget: Option<u64>,
    or_opt: Option<bool>,
) -> SearchConfig {
    let d = SearchConfig::default();
    SearchConfig {
        restarts: restarts.unwrap_or(d.restarts),
        max_no_improve: max_no_improve.unwrap_or(d.max_no_improve),
        time_budget_ms: budget.or(d.time_budget_ms),
        seed: run.seed,
        use_or_opt: or_opt.unwrap_or(d.use_or_opt),
        workers: run.workers,
    }
}

/// Search over a candidate file instead of a model.
fn search_heatmap_file(inst: &TspInstance, cs: &CandidateSet, cfg: &SearchConfig) -> CliResult<(utsplab::Tour, EvalRecord)> {
    let started = Instant::now();
    let dm = inst.distance_matrix();
    let tour = search_candidates(cs, &dm, cfg)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let reference = exact_reference(inst);
    let overlap = match &reference {
        Some(opt) => Some(overlap_ratio(cs, opt)?),
        None => None,
    };
    let record = EvalRecord {
        instance_id: inst.id.clone(),
        n: inst.n(),
        m: cs.m_source,
        top_m: cs.top_m,
        length: tour.length,
        opt_length: reference.as_ref().map(|t| t.length),
        gap: reference.as_ref().map(|t| gap(tour.length, t.length)),
        overlap_ratio: overlap,
        wall_ms,
        seed: cfg.seed,
    };
    Ok((tour, record))
}

pub fn search(common: &Common, flags: &SearchArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.search, flags)?;
    let cfg = search_config(&run, args.restarts, args.max_no_improve, args.time_budget_ms, args.or_opt);

    let instances: Vec<TspInstance> = match (&args.instance, &args.manifest) {
        (Some(p), None) => vec![instances::load(existing(p)?)?],
        (None, Some(p)) => instances::load_manifest_instances(existing(p)?)?,
        _ => return Err(CliError::Usage("give exactly one of --instance or --manifest".into())),
    };
    let tour_dir = run.out.join("tours");
    create_dir(&tour_dir)?;
    let mut records = Vec::new();
    if let Some(heat) = &args.heatmap {
        if args.model.is_some() || args.manifest.is_some() {
            return Err(CliError::Usage("--heatmap takes a single --instance and no --model".into()));
        }
        let cs = CandidateSet::load(existing(heat)?)?;
        let (tour, record) = search_heatmap_file(&instances[0], &cs, &cfg)?;
        tour.save(tour_dir.join(format!("{}.top{}.tour", record.instance_id, record.top_m)))?;
        records.push(record);
    } else {
        let model = EncoderModel::load(existing(&required(&args.model, "model")?)?)?;
        let top_ms = args.top_m.clone().unwrap_or_else(|| vec![5]);
        for inst in &instances {
            for &top_m in &top_ms {
                let (tour, record) = solve(inst, &model, top_m, &cfg)?;
                tour.save(tour_dir.join(format!("{}.top{}.tour", inst.id, record.top_m)))?;
                records.push(record);
            }
        }
    }
    write(&run.out.join("records.csv"), &records_csv(&records))?;
    run.record(|c| c.search = Some(args)).save_into(&run.out)?;
    println!("searched {} instance(s); wrote {}", instances.len(), run.out.join("records.csv").display());
    Ok(())
}

pub fn eval(common: &Common, flags: &EvalArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.eval, flags)?;
    let cfg = search_config(&run, args.restarts, args.max_no_improve, args.time_budget_ms, args.or_opt);
    let model = EncoderModel::load(existing(&required(&args.model, "model")?)?)?;
    let instances = instances::load_manifest_instances(existing(&required(&args.manifest, "manifest")?)?)?;
    let top_ms = args.top_m.clone().unwrap_or_else(|| vec![5, 20]);
    if top_ms.is_empty() {
        return Err(CliError::Usage("--top-m needs at least one value".into()));
    }

    let records = evaluate(&instances, &model, &top_ms, &cfg)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for s in summarize(&records, &top_ms) {
        summary.push_str(&s.csv_row());
        summary.push('\n');
    }
    create_dir(&run.out)?;
    write(&run.out.join("records.csv"), &records_csv(&records))?;
    write(&run.out.join("summary.csv"), &summary)?;
    run.record(|c| c.eval = Some(args)).save_into(&run.out)?;
    print!("{summary}");
    Ok(())
}

pub fn tau(common: &Common, flags: &TauArgs) -> CliResult<()> {
    let file = load_file_config(common)?;
    let run = Resolved::from(common, &file)?;
    let args = overlay(file.tau, flags)?;
    let kinds = match &args.dist {
        Some(names) => names
            .iter()
            .map(|d| parse_value::<Family>(d).map(DistributionKind::new))
            .collect::<CliResult<Vec<_>>>()?,
        None => Family::ALL.iter().map(|&f| DistributionKind::new(f)).collect(),
    };
    let spec = SweepSpec {
        kinds,
        sizes: args.n.clone().unwrap_or_else(|| vec![50]),
        count: args.count.unwrap_or(100),
        seed: run.seed,
        solver: parse_value(args.solver.as_deref().unwrap_or("approx"))?,
        area_mode: parse_value(args.area.as_deref().unwrap_or("bbox"))?,
        workers: run.workers,
    };
    let csv = sweep_csv(&hardness_sweep(&spec)?);
    create_dir(&run.out)?;
    write(&run.out.join("sweep.csv"), &csv)?;
    run.record(|c| c.tau = Some(args)).save_into(&run.out)?;
    print!("{csv}");
    Ok(())
}

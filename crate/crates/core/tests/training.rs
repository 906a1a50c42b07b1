use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use utsplab::encoder::{EncoderConfig, EncoderModel};
use utsplab::heatmap::{build_heatmap, HeatMap, Rescale, SoftAssignment};
use utsplab::instances::{generate, DistributionKind, TspInstance};
use utsplab::training::{
    history_csv, instance_objective, legacy_loss, loss, loss_backward, train, LossConfig, LossVariant, TrainConfig,
};

fn random_t(n: usize, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut t = Array2::from_shape_fn((n, m), |_| rng.gen::<f64>());
    for s in 0..m {
        let total: f64 = (0..n).map(|i| t[[i, s]]).sum();
        for i in 0..n {
            t[[i, s]] /= total;
        }
    }
    t
}

/// Loss written out term by term over explicit index loops.
fn loss_loops(t: &Array2<f64>, d: &Array2<f64>, lambda1: f64) -> f64 {
    let (n, m) = t.dim();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for s in 0..m {
                h[i][j] += t[[i, s]] * t[[j, (s + 1) % m]];
            }
        }
    }
    let mut constraint = 0.0;
    for k in 0..n {
        let (mut row, mut col) = (0.0, 0.0);
        for l in 0..n {
            row += h[k][l];
            col += h[l][k];
        }
        constraint += (1.0 - row) * (1.0 - row) + (1.0 - col) * (1.0 - col);
    }
    let mut distance = 0.0;
    for i in 0..n {
        for j in 0..n {
            distance += d[[i, j]] * h[i][j];
        }
    }
    lambda1 * constraint + distance
}

#[test]
fn total_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let inst = generate(&DistributionKind::uniform(), 7, case).unwrap();
        let dm = inst.distance_matrix();
        let t = random_t(7, 5, &mut rng);
        let h = build_heatmap(&SoftAssignment::new(t.clone()).unwrap());
        let report = loss(&h, &dm, &LossConfig::default()).unwrap();
        let oracle = loss_loops(&t, dm.as_array(), 100.0);
        assert!((report.total - oracle).abs() <= 1e-12, "{} vs {oracle}", report.total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn report_decomposes(n in 3usize..=16, m in 2usize..=16, seed in any::<u64>(), l1 in 0.0f64..500.0, l2 in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = generate(&DistributionKind::uniform(), n, seed).unwrap().distance_matrix();
        let t = random_t(n, m, &mut rng);
        let h = build_heatmap(&SoftAssignment::new(t.clone()).unwrap());
        let g = LossConfig { lambda1: l1, lambda2: l2, variant: LossVariant::Generalized };
        let r = loss(&h, &dm, &g).unwrap();
        prop_assert_eq!(r.total, l1 * r.constraint_term + r.distance_term);
        let lg = LossConfig { variant: LossVariant::Legacy, ..g };
        let r = legacy_loss(t.view(), &h, &dm, &lg).unwrap();
        prop_assert_eq!(r.total, l1 * r.constraint_term + l2 * r.self_loop_term + r.distance_term);
    }

    #[test]
    fn loss_gradient_matches_central_differences(seed in any::<u64>()) {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = generate(&DistributionKind::uniform(), n, seed).unwrap().distance_matrix();
        let h0 = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..0.4));
        let cfg = LossConfig { lambda1: 3.0, ..LossConfig::default() };
        let at = |h: Array2<f64>| loss(&HeatMap { h, m_source: 4 }, &dm, &cfg).unwrap().total;
        let g = loss_backward(&HeatMap { h: h0.clone(), m_source: 4 }, &dm, &cfg).unwrap();
        let step = 1e-6;
        for i in 0..n {
            for j in 0..n {
                let mut p = h0.clone();
                p[[i, j]] += step;
                let mut q = h0.clone();
                q[[i, j]] -= step;
                let fd = (at(p) - at(q)) / (2.0 * step);
                prop_assert!((fd - g[[i, j]]).abs() <= 1e-6 * g[[i, j]].abs().max(1.0));
            }
        }
    }
}

fn dataset(count: u64, n: usize, base: u64) -> Vec<TspInstance> {
    (0..count).map(|s| generate(&DistributionKind::uniform(), n, base + s).unwrap()).collect()
}

#[test]
fn large_lambda_drives_constraint_down() {
    let data = dataset(4, 10, 50);
    let enc = EncoderConfig { hidden: 32, ..EncoderConfig::new(8) };
    let loss_cfg = LossConfig { lambda1: 1e4, ..LossConfig::default() };
    let cfg = TrainConfig { epochs: 10, batch_size: 4, lr: 1e-3, seed: 3, ..TrainConfig::default() };
    let out = train(&data, enc, &loss_cfg, &cfg).unwrap();
    let c: Vec<f64> = out.history.iter().map(|e| e.mean_constraint).collect();
    for w in c.windows(2) {
        assert!(w[1] < w[0], "constraint term did not decrease: {c:?}");
    }
}

#[test]
fn small_run_lowers_the_loss() {
    let data = dataset(200, 20, 0);
    let cfg = TrainConfig { epochs: 100, lr: 1e-3, seed: 2, ..TrainConfig::default() };
    let enc = EncoderConfig { hidden: 32, ..EncoderConfig::new(12) };
    let out = train(&data, enc, &LossConfig::default(), &cfg).unwrap();
    assert!(out.history.last().unwrap().mean_total < out.history[0].mean_total);
}

#[test]
fn single_worker_training_is_reproducible() {
    let data = dataset(10, 12, 9);
    let enc = EncoderConfig { hidden: 16, ..EncoderConfig::new(6) };
    let cfg = TrainConfig { epochs: 4, batch_size: 3, seed: 11, ..TrainConfig::default() };
    let a = train(&data, enc, &LossConfig::default(), &cfg).unwrap();
    let b = train(&data, enc, &LossConfig::default(), &cfg).unwrap();
    assert_eq!(a.model.to_text(), b.model.to_text());
    assert_eq!(history_csv(&a.history), history_csv(&b.history));

    let parallel = TrainConfig { workers: 3, ..cfg };
    let c = train(&data, enc, &LossConfig::default(), &parallel).unwrap();
    for (x, y) in a.model.params.iter().zip(c.model.params.iter()) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn legacy_gradient_matches_central_differences() {
    let model = EncoderModel::init(EncoderConfig { hidden: 16, ..EncoderConfig::new(5) }, 8).unwrap();
    let inst = generate(&DistributionKind::uniform(), 8, 8).unwrap();
    let cfg = LossConfig { lambda1: 2.0, lambda2: 0.5, variant: LossVariant::Legacy };
    let (_, g) = instance_objective(&model, &inst, &cfg, Rescale::None, true).unwrap();
    let g = g.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = 1e-5;
    for _ in 0..100 {
        let k = rng.gen_range(0..model.params.len());
        let mut p = model.clone();
        p.params.set(k, model.params.get(k) + step);
        let mut q = model.clone();
        q.params.set(k, model.params.get(k) - step);
        let f = |m: &EncoderModel| instance_objective(m, &inst, &cfg, Rescale::None, false).unwrap().0.total;
        let fd = (f(&p) - f(&q)) / (2.0 * step);
        let an = g.get(k);
        assert!((fd - an).abs() / an.abs().max(fd.abs()).max(1e-6) <= 1e-4, "coordinate {k}: {fd} vs {an}");
    }
}

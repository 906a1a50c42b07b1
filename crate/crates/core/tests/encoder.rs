use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use utsplab::encoder::{EncoderConfig, EncoderModel};
use utsplab::instances::{generate, DistributionKind, Family};

fn small(m: usize) -> EncoderConfig {
    EncoderConfig { hidden: 24, ..EncoderConfig::new(m) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn columns_sum_to_one(n in 3usize..=40, m in 2usize..=24, seed in any::<u64>()) {
        let model = EncoderModel::init(small(m), seed).unwrap();
        let t = model.forward(&generate(&DistributionKind::uniform(), n, seed).unwrap()).unwrap();
        for col in t.matrix().columns() {
            prop_assert!((col.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(col.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn relabeling_permutes_rows(n in 3usize..=32, seed in any::<u64>()) {
        let model = EncoderModel::init(small(8), seed).unwrap();
        let inst = generate(&DistributionKind::new(Family::Explosion), n, seed).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let t = model.forward(&inst).unwrap();
        let pt = model.forward(&inst.relabeled(&perm)).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            for s in 0..8 {
                prop_assert!((pt.matrix()[[k, s]] - t.matrix()[[p, s]]).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn one_model_serves_every_size() {
    let model = EncoderModel::init(EncoderConfig::new(16), 5).unwrap();
    for n in 5..=64 {
        let t = model.forward(&generate(&DistributionKind::uniform(), n, n as u64).unwrap()).unwrap();
        assert_eq!((t.n(), t.m()), (n, 16));
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    let model = EncoderModel::init(EncoderConfig::new(6), 17).unwrap();
    let inst = generate(&DistributionKind::uniform(), 10, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let g = Array2::from_shape_fn((10, 6), |_| rng.gen_range(-1.0..1.0));
    let grads = model.backward(&inst, g.view()).unwrap();
    let f = |m: &EncoderModel| (m.forward(&inst).unwrap().matrix() * &g).sum();
    let step = 1e-5;
    let mut checked = 0;
    for _ in 0..300 {
        let k = rng.gen_range(0..model.params.len());
        let mut plus = model.clone();
        plus.params.set(k, model.params.get(k) + step);
        let mut minus = model.clone();
        minus.params.set(k, model.params.get(k) - step);
        let fd = (f(&plus) - f(&minus)) / (2.0 * step);
        let an = grads.get(k);
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
        assert!(rel <= 1e-4, "coordinate {k}: fd {fd} analytic {an}");
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn names_cover_every_parameter() {
    let model = EncoderModel::init(EncoderConfig::new(4), 0).unwrap();
    let names = model.parameter_names();
    assert_eq!(names.len(), 2 * 3 + 2);
    assert!(names.iter().all(|n| !n.is_empty()));
}

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use utsplab::heatmap::{build_heatmap, heatmap_backward, heatmap_of, overlap_ratio, sparsify, HeatMap, SoftAssignment};
use utsplab::instances::{generate, DistributionKind};
use utsplab::oracle::brute_force;

fn column_stochastic(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Array2::from_shape_fn((n, m), |_| rng.gen::<f64>() + 1e-3);
    for mut col in t.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        col /= s;
    }
    t
}

/// Direct quadruple loop over H_ij = sum_t T_it T_j(t+1).
fn heatmap_loops(t: &Array2<f64>) -> Array2<f64> {
    let (n, m) = t.dim();
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            for s in 0..m {
                h[[i, j]] += t[[i, s]] * t[[j, (s + 1) % m]];
            }
        }
    }
    h
}

#[test]
fn small_case_matches_loop_oracle() {
    let t = column_stochastic(6, 4, 3);
    let h = build_heatmap(&SoftAssignment::new(t.clone()).unwrap()).h;
    let oracle = heatmap_loops(&t);
    for (a, b) in h.iter().zip(oracle.iter()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn eight_city_overlap_by_edge_scan() {
    let inst = generate(&DistributionKind::uniform(), 8, 8).unwrap();
    let dm = inst.distance_matrix();
    let opt = brute_force(&dm).unwrap();
    let t = column_stochastic(8, 5, 21);
    let cs = sparsify(&build_heatmap(&SoftAssignment::new(t).unwrap()), 2).unwrap();
    let dense = cs.to_dense();
    let covered = (0..8)
        .filter(|&k| {
            let (a, b) = (opt.order[k], opt.order[(k + 1) % 8]);
            dense[[a, b]] > 0.0
        })
        .count();
    assert_eq!(overlap_ratio(&cs, &opt).unwrap(), covered as f64 / 8.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_equals_m(n in 2usize..=32, m in 2usize..=32, seed in any::<u64>()) {
        let h = build_heatmap(&SoftAssignment::new(column_stochastic(n, m, seed)).unwrap());
        prop_assert!((h.h.sum() - m as f64).abs() <= 1e-6);
    }

    #[test]
    fn relabeling_conjugates(n in 2usize..=20, m in 2usize..=20, seed in any::<u64>()) {
        let t = column_stochastic(n, m, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let pt = t.select(Axis(0), &perm);
        let h = heatmap_of(t.view());
        let ph = heatmap_of(pt.view());
        for a in 0..n {
            for b in 0..n {
                prop_assert!((ph[[a, b]] - h[[perm[a], perm[b]]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn overlap_grows_with_top_m(n in 4usize..=9, m in 2usize..=12, seed in any::<u64>()) {
        let inst = generate(&DistributionKind::uniform(), n, seed).unwrap();
        let opt = brute_force(&inst.distance_matrix()).unwrap();
        let h = build_heatmap(&SoftAssignment::new(column_stochastic(n, m, seed)).unwrap());
        let mut prev = 0.0;
        for top in 1..n {
            let r = overlap_ratio(&sparsify(&h, top).unwrap(), &opt).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn backward_matches_central_differences(seed in any::<u64>()) {
        let (n, m) = (7, 5);
        let t = column_stochastic(n, m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let g = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let analytic = heatmap_backward(t.view(), g.view()).unwrap();
        let f = |x: &Array2<f64>| (&heatmap_loops(x) * &g).sum();
        let step = 1e-6;
        for i in 0..n {
            for s in 0..m {
                let mut p = t.clone();
                p[[i, s]] += step;
                let mut q = t.clone();
                q[[i, s]] -= step;
                let fd = (f(&p) - f(&q)) / (2.0 * step);
                let a = analytic[[i, s]];
                prop_assert!((fd - a).abs() <= 1e-6 * a.abs().max(1.0), "fd {} analytic {}", fd, a);
            }
        }
    }
}

#[test]
fn sparsify_rejects_out_of_range_top_m() {
    let h = HeatMap { h: Array2::from_elem((4, 4), 0.25), m_source: 4 };
    assert!(sparsify(&h, 0).is_err());
    assert!(sparsify(&h, 4).is_err());
    assert!(sparsify(&h, 3).unwrap().is_complete());
}

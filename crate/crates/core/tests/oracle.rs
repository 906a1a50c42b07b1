use proptest::prelude::*;

use utsplab::instances::{generate, DistributionKind, Family};
use utsplab::oracle::{approx_opt, brute_force, held_karp};
use utsplab::tour::cycle_length;

#[test]
fn held_karp_equals_brute_force_at_n9() {
    for s in 0..50 {
        let dm = generate(&DistributionKind::uniform(), 9, 900 + s).unwrap().distance_matrix();
        let hk = held_karp(&dm).unwrap();
        let bf = brute_force(&dm).unwrap();
        assert!((hk.length - bf.length).abs() <= 1e-12, "seed {s}: {} vs {}", hk.length, bf.length);
    }
}

#[test]
fn approx_is_within_two_percent_at_n10() {
    for s in 0..50 {
        let dm = generate(&DistributionKind::uniform(), 10, 1000 + s).unwrap().distance_matrix();
        let opt = brute_force(&dm).unwrap();
        let approx = approx_opt(&dm, s, 20);
        assert!(approx.length <= 1.02 * opt.length, "seed {s}");
    }
}

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn returned_tours_are_consistent(f in family(), n in 3usize..=9, seed in any::<u64>()) {
        let dm = generate(&DistributionKind::new(f), n, seed).unwrap().distance_matrix();
        for tour in [held_karp(&dm).unwrap(), brute_force(&dm).unwrap(), approx_opt(&dm, seed, 3)] {
            let mut sorted = tour.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            prop_assert!((tour.length - cycle_length(&tour.order, &dm)).abs() <= 1e-12);
        }
    }

    #[test]
    fn more_restarts_never_hurt(n in 5usize..=40, seed in any::<u64>(), r in 1usize..8) {
        let dm = generate(&DistributionKind::uniform(), n, seed).unwrap().distance_matrix();
        prop_assert!(approx_opt(&dm, seed, r + 1).length <= approx_opt(&dm, seed, r).length);
    }
}

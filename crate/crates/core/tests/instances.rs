use proptest::prelude::*;

use utsplab::instances::{self, generate, generate_traced, DistributionKind, Family};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn coordinates_stay_in_unit_square(f in family(), n in 3usize..=200, seed in any::<u64>()) {
        let inst = generate(&DistributionKind::new(f), n, seed).unwrap();
        prop_assert_eq!(inst.n(), n);
        for &(x, y) in &inst.coords {
            prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn generation_is_a_pure_function(f in family(), n in 3usize..=60, seed in any::<u64>()) {
        let kind = DistributionKind::new(f);
        prop_assert_eq!(generate(&kind, n, seed).unwrap(), generate(&kind, n, seed).unwrap());
    }

    #[test]
    fn distance_matrix_is_a_metric_view_of_the_coordinates(f in family(), n in 3usize..=40, seed in 0u64..1000) {
        let inst = generate(&DistributionKind::new(f), n, seed).unwrap();
        let dm = inst.distance_matrix();
        for i in 0..n {
            prop_assert_eq!(dm.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(dm.get(i, j), dm.get(j, i));
                let (a, b) = (inst.coords[i], inst.coords[j]);
                let direct = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                prop_assert!((dm.get(i, j) - direct).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn tsplib_round_trip_is_lossless(f in family(), n in 3usize..=80, seed in any::<u64>()) {
        let inst = generate(&DistributionKind::new(f), n, seed).unwrap();
        let back = instances::parse_tsplib(&instances::to_tsplib(&inst)).unwrap();
        prop_assert_eq!(back, inst);
    }
}

#[test]
fn explosion_disk_is_empty() {
    let kind = DistributionKind::new(Family::Explosion);
    let trace = generate_traced(&kind, 100, 1).unwrap();
    let (cx, cy) = trace.center;
    let nearest = trace
        .instance
        .coords
        .iter()
        .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min);
    assert!(nearest >= kind.radius, "closest point {nearest} inside radius {}", kind.radius);
}

#[test]
fn implosion_moves_disk_points_toward_center() {
    let kind = DistributionKind::new(Family::Implosion);
    let trace = generate_traced(&kind, 100, 1).unwrap();
    let (cx, cy) = trace.center;
    let dist = |(x, y): (f64, f64)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
    let mut inside = 0;
    for (&before, &after) in trace.base.iter().zip(&trace.instance.coords) {
        if dist(before) < kind.radius {
            inside += 1;
            assert!(dist(after) < dist(before));
        }
    }
    assert!(inside > 0);
}

#[test]
fn manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let rows = instances::generate_batch(&DistributionKind::new(Family::Expansion), 20, 8, 11, dir.path()).unwrap();
    assert_eq!(rows.len(), 8);
    let loaded = instances::load_manifest_instances(dir.path().join(instances::MANIFEST_FILE)).unwrap();
    for (k, inst) in loaded.iter().enumerate() {
        assert_eq!(inst, &generate(&DistributionKind::new(Family::Expansion), 20, 11 + k as u64).unwrap());
    }
}

mod common;

use common::{brute_dispersion_2d, exact_dispersion_3d, witness_ok};
use drivecov::coverage::{
    covering_family_size, dispersion_estimate, dispersion_exact, k_epsilon_report, kwise_coverage,
};
use drivecov::orchestrator::ScenarioConfig;
use drivecov::sampler::{halton_point, sample_mixed, Strategy, StrategyKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, grid: Option<u32>) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| match grid {
                    Some(g) => rng.random_range(0..=g) as f64 / g as f64,
                    None => rng.random::<f64>(),
                })
                .collect()
        })
        .collect()
}

#[test]
fn exact_matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let n = rng.random_range(0..=20);
        let grid = (case % 3 == 0).then_some(6);
        let pts = random_points(&mut rng, n, 2, grid);
        let r = dispersion_exact(&pts, 2).unwrap();
        assert_eq!(r.value, brute_dispersion_2d(&pts), "case {case}: {pts:?}");
        assert!(witness_ok(&pts, &r), "case {case}");
    }
}

#[test]
fn exact_one_dimensional_is_largest_gap() {
    let pts = vec![vec![0.2], vec![0.9], vec![0.5]];
    let r = dispersion_exact(&pts, 1).unwrap();
    assert!((r.value - 0.4).abs() < 1e-15);
    assert!(witness_ok(&pts, &r));
}

#[test]
fn empty_set_has_unit_dispersion() {
    assert_eq!(dispersion_exact(&[], 2).unwrap().value, 1.0);
}

#[test]
fn points_outside_the_cube_are_rejected() {
    assert!(dispersion_exact(&[vec![0.5, 1.5]], 2).is_err());
    assert!(dispersion_exact(&[vec![0.5]], 2).is_err());
    assert!(dispersion_exact(&[vec![0.5, 0.5, 0.5]], 3).is_err());
}

#[test]
fn estimate_never_exceeds_exact_in_3d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..25 {
        let n = rng.random_range(1..=14);
        let pts = random_points(&mut rng, n, 3, None);
        let exact = exact_dispersion_3d(&pts);
        let est = dispersion_estimate(&pts, 3, 4000, case).unwrap();
        assert!(est.value <= exact + 1e-12, "case {case}: {} > {exact}", est.value);
        assert!(est.value >= 0.5 * exact, "case {case}: estimate {} far below {exact}", est.value);
        assert!(witness_ok(&pts, &est), "case {case}");
    }
}

#[test]
fn estimate_is_seeded() {
    let pts: Vec<Vec<f64>> = (1..=60).map(|i| halton_point(i, &[2, 3, 5]).unwrap()).collect();
    let a = dispersion_estimate(&pts, 3, 2000, 9).unwrap();
    let b = dispersion_estimate(&pts, 3, 2000, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn halton_3d_estimate_tracks_exact() {
    let pts: Vec<Vec<f64>> = (1..=100).map(|i| halton_point(i, &[2, 3, 5]).unwrap()).collect();
    let exact = exact_dispersion_3d(&pts);
    assert!((exact - 0.0704).abs() < 1e-3, "{exact}");
    let est = drivecov::coverage::dispersion_of(&pts, 3).unwrap();
    assert!(est.value <= exact + 1e-12 && est.value > 0.8 * exact, "{} vs {exact}", est.value);
}

/// The expected 0.043 is below the exact dispersion of this set
/// (0.0704), so no lower-bound estimator can land in this band.
#[test]
#[ignore]
fn acc_dispersion_band() {
    let cfg = ScenarioConfig::load(&common::scenario_path("acc.json")).unwrap();
    let set = sample_mixed(&cfg.params, &Strategy::plain(StrategyKind::Halton, 100), 1).unwrap();
    let r = k_epsilon_report(&set, 3).unwrap();
    let eps = r.dispersion.unwrap().value;
    assert!((0.035..=0.055).contains(&eps), "{eps}");
}

fn brute_kwise(bits: &[Vec<bool>], k: usize) -> u64 {
    let n = bits[0].len();
    let mut covered = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let pos: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        for pattern in 0u32..(1 << k) {
            let hit = bits.iter().any(|b| pos.iter().enumerate().all(|(j, &p)| b[p] == (pattern >> j & 1 == 1)));
            covered += hit as u64;
        }
    }
    covered
}

#[test]
fn kwise_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..60 {
        let n = rng.random_range(2..=7);
        let k = rng.random_range(1..=n.min(3));
        let m = rng.random_range(1..=12);
        let bits: Vec<Vec<bool>> = (0..m).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let r = kwise_coverage(&bits, k).unwrap();
        assert_eq!(r.covered, brute_kwise(&bits, k));
        assert_eq!(r.covered + r.missing.len() as u64, r.total_combinations);
        assert_eq!(r.is_covering_family, r.missing.is_empty());
    }
}

#[test]
fn exhaustive_vectors_cover_everything() {
    let bits: Vec<Vec<bool>> = (0u32..16).map(|m| (0..4).map(|i| m >> i & 1 == 1).collect()).collect();
    let r = kwise_coverage(&bits, 3).unwrap();
    assert!(r.is_covering_family);
    assert_eq!(r.total_combinations, 4 * 8);
}

#[test]
fn covering_size_formula() {
    assert_eq!(covering_family_size(3, 10, 0.05).unwrap(), 80);
    assert!(covering_family_size(3, 10, 0.0).is_err());
    assert!(covering_family_size(4, 3, 0.1).is_err());
}

proptest! {
    #[test]
    fn dispersion_bounds(pts in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 0..30)) {
        let r = dispersion_exact(&pts, 2).unwrap();
        prop_assert!(r.value > 0.0 && r.value <= 1.0);
        prop_assert!(r.value >= 1.0 / (pts.len() as f64 + 1.0) - 1e-12);
        prop_assert!(witness_ok(&pts, &r));
    }

    #[test]
    fn adding_a_point_never_raises_dispersion(
        pts in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 0..20),
        extra in prop::collection::vec(0.0f64..=1.0, 2),
    ) {
        let before = dispersion_exact(&pts, 2).unwrap().value;
        let mut more = pts.clone();
        more.push(extra);
        prop_assert!(dispersion_exact(&more, 2).unwrap().value <= before);
    }

    #[test]
    fn point_order_is_irrelevant(mut pts in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 1..20)) {
        let a = dispersion_exact(&pts, 2).unwrap().value;
        pts.reverse();
        prop_assert_eq!(a, dispersion_exact(&pts, 2).unwrap().value);
    }

    #[test]
    fn kwise_is_monotone_in_rows(
        bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..10),
        extra in prop::collection::vec(any::<bool>(), 5),
    ) {
        let a = kwise_coverage(&bits, 2).unwrap().covered;
        let mut more = bits.clone();
        more.push(extra);
        prop_assert!(kwise_coverage(&more, 2).unwrap().covered >= a);
    }
}

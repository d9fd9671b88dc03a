mod common;

use drivecov::param_space::{ParamDecl, ParameterSpace, TestVector};
use drivecov::sampler::{
    halton_point, local_search, primes, radical_inverse, read_points_csv, sample_mixed, Objective, Origin, Strategy,
    StrategyKind,
};
use proptest::prelude::*;

fn mixed_space() -> ParameterSpace {
    ParameterSpace::new(vec![
        ParamDecl::Interval { name: "speed".into(), low: 2.0, high: 10.0 },
        ParamDecl::Enum { name: "color".into(), values: vec!["red".into(), "green".into(), "blue".into()] },
        ParamDecl::Interval { name: "gap".into(), low: -5.0, high: 5.0 },
        ParamDecl::Enum { name: "lanes".into(), values: vec!["2".into(), "4".into()] },
    ])
    .unwrap()
}

/// Digit reversal through the base-b expansion written out as digits.
fn reversed_digits(base: u64, mut index: u64) -> f64 {
    let mut digits = Vec::new();
    while index > 0 {
        digits.push(index % base);
        index /= base;
    }
    digits.iter().enumerate().map(|(i, &d)| d as f64 / (base as f64).powi(i as i32 + 1)).sum()
}

#[test]
fn halton_fixture_rows() {
    let text = std::fs::read_to_string(common::fixture_path("halton_camera.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let space = ParameterSpace::new(vec![
        ParamDecl::Interval { name: "camera_height".into(), low: 1.9, high: 2.2 },
        ParamDecl::Interval { name: "camera_pitch".into(), low: 10.0, high: 12.0 },
        ParamDecl::Interval { name: "focal_length".into(), low: 18.0, high: 22.0 },
    ])
    .unwrap();
    let set = sample_mixed(&space, &Strategy::plain(StrategyKind::Halton, 100), 0).unwrap();
    let mut rows = 0;
    for (rec, s) in r.deserialize::<(usize, f64, f64, f64)>().zip(&set.samples) {
        let (index, focal, height, pitch) = rec.unwrap();
        assert_eq!(index, s.index);
        assert!((s.vector.real("focal_length").unwrap() - focal).abs() <= 5e-4, "row {index}");
        assert!((s.vector.real("camera_height").unwrap() - height).abs() <= 5e-4, "row {index}");
        assert!((s.vector.real("camera_pitch").unwrap() - pitch).abs() <= 5e-4, "row {index}");
        rows += 1;
    }
    assert_eq!(rows, 100);
}

#[test]
fn first_primes() {
    assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
}

#[test]
fn halton_uses_primes_in_declaration_order_of_continuous_params() {
    let set = sample_mixed(&mixed_space(), &Strategy::plain(StrategyKind::Halton, 5), 3).unwrap();
    for s in &set.samples {
        let i = s.index as u64;
        assert_eq!(s.origin, Origin::Halton { halton_index: i });
        let speed = 2.0 + 8.0 * reversed_digits(2, i);
        let gap = -5.0 + 10.0 * reversed_digits(3, i);
        assert!((s.vector.real("speed").unwrap() - speed).abs() < 1e-12);
        assert!((s.vector.real("gap").unwrap() - gap).abs() < 1e-12);
    }
}

#[test]
fn random_draws_depend_on_seed() {
    let space = mixed_space();
    let a = sample_mixed(&space, &Strategy::plain(StrategyKind::Random, 20), 1).unwrap();
    let b = sample_mixed(&space, &Strategy::plain(StrategyKind::Random, 20), 1).unwrap();
    let c = sample_mixed(&space, &Strategy::plain(StrategyKind::Random, 20), 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn csv_round_trip_keeps_values_to_six_decimals() {
    let space = mixed_space();
    let set = sample_mixed(&space, &Strategy::plain(StrategyKind::Halton, 30), 4).unwrap();
    let mut buf = Vec::new();
    set.write_csv(&mut buf).unwrap();
    let back = read_points_csv(&space, buf.as_slice()).unwrap();
    assert_eq!(back.len(), 30);
    for (a, b) in set.samples.iter().zip(&back.samples) {
        assert_eq!(a.index, b.index);
        assert_eq!(a.vector.discrete, b.vector.discrete);
        for (k, x) in &a.vector.continuous {
            assert!((x - b.vector.real(k).unwrap()).abs() <= 5e-7);
        }
    }
}

#[test]
fn csv_with_unknown_symbol_is_rejected() {
    let text = "speed,color,gap,lanes\n3.0,purple,0.0,2\n";
    assert!(read_points_csv(&mixed_space(), text.as_bytes()).is_err());
}

fn score(v: &TestVector) -> f64 {
    -(v.real("speed").unwrap() - 7.3).powi(2) - (v.real("gap").unwrap() - 1.1).powi(2)
}

#[test]
fn local_search_appends_budget_and_keeps_incumbent() {
    let space = mixed_space();
    let strategy = Strategy::search(StrategyKind::Halton, Objective::Maximize, 20, 4, 3);
    let mut base = sample_mixed(&space, &strategy, 8).unwrap();
    for s in &mut base.samples {
        s.score = Some(score(&s.vector));
    }
    let out = local_search(&base, |v| Ok(score(v)), &strategy, 8).unwrap();
    assert_eq!(out.len(), 20 + 4 * 3);
    assert_eq!(&out.samples[..20], &base.samples[..]);
    let best_base = base.samples.iter().filter_map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let best_all = out.samples.iter().filter_map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    assert!(best_all >= best_base);
    for s in &out.samples[20..] {
        assert!(matches!(s.origin, Origin::Search { .. }));
        assert_eq!(s.kind, StrategyKind::HaltonOpt);
        space.validate(&s.vector).unwrap();
    }
    let again = local_search(&base, |v| Ok(score(v)), &strategy, 8).unwrap();
    assert_eq!(out, again);
}

#[test]
fn local_search_tolerates_failed_evaluations() {
    let space = mixed_space();
    let strategy = Strategy::search(StrategyKind::Random, Objective::Maximize, 10, 2, 2);
    let mut base = sample_mixed(&space, &strategy, 1).unwrap();
    for s in &mut base.samples {
        s.score = Some(score(&s.vector));
    }
    let out = local_search(&base, |_| Err("boom".into()), &strategy, 1).unwrap();
    assert_eq!(out.len(), 14);
    assert!(out.samples[10..].iter().all(|s| s.failed));
}

#[test]
fn unscored_base_is_rejected() {
    let strategy = Strategy::search(StrategyKind::Halton, Objective::Maximize, 5, 1, 1);
    let base = sample_mixed(&mixed_space(), &strategy, 0).unwrap();
    assert!(local_search(&base, |v| Ok(score(v)), &strategy, 0).is_err());
}

proptest! {
    #[test]
    fn radical_inverse_reverses_digits(base in prop::sample::select(vec![2u64, 3, 5, 7, 11, 13]), index in 0u64..1_000_000) {
        let x = radical_inverse(base, index).unwrap();
        prop_assert!((0.0..1.0).contains(&x));
        prop_assert!((x - reversed_digits(base, index)).abs() < 1e-12);
    }

    #[test]
    fn halton_points_are_distinct(n in 2u64..200) {
        let pts: Vec<Vec<f64>> = (1..=n).map(|i| halton_point(i, &[2, 3]).unwrap()).collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                prop_assert!(pts[i] != pts[j]);
            }
        }
    }

    #[test]
    fn samples_stay_in_the_space(n in 0usize..60, seed in any::<u64>(), halton in any::<bool>()) {
        let kind = if halton { StrategyKind::Halton } else { StrategyKind::Random };
        let space = mixed_space();
        let set = sample_mixed(&space, &Strategy::plain(kind, n), seed).unwrap();
        prop_assert_eq!(set.len(), n);
        for (i, s) in set.samples.iter().enumerate() {
            prop_assert_eq!(s.index, i + 1);
            space.validate(&s.vector).unwrap();
            let enc = space.normalize(&s.vector).unwrap();
            prop_assert!(enc.unit.iter().all(|u| (0.0..=1.0).contains(u)));
            prop_assert_eq!(space.denormalize(&enc.bits, &enc.unit).unwrap().discrete, s.vector.discrete.clone());
        }
    }

    #[test]
    fn halton_prefix_is_stable(n in 1usize..50, m in 1usize..50, seed in any::<u64>()) {
        let space = mixed_space();
        let a = sample_mixed(&space, &Strategy::plain(StrategyKind::Halton, n), seed).unwrap();
        let b = sample_mixed(&space, &Strategy::plain(StrategyKind::Halton, n + m), seed).unwrap();
        prop_assert_eq!(&a.samples[..], &b.samples[..n]);
    }

    #[test]
    fn unit_round_trip(u in prop::collection::vec(0.0f64..=1.0, 2), i in 0usize..3, j in 0usize..2) {
        let space = mixed_space();
        let v = space.from_indices(&[i, j], &u).unwrap();
        let enc = space.normalize(&v).unwrap();
        for (a, b) in enc.unit.iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(space.indices(&v).unwrap(), vec![i, j]);
    }
}

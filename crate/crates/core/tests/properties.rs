mod common;

use std::collections::BTreeMap;
use std::path::Path;

use anthro_core::bodygen::{build_body, sample_body_spec, GenerationRanges, Sex};
use anthro_core::datakit::{split_counts, split_dataset, Split};
use anthro_core::geometry::shapes;
use anthro_core::measure::{
    circumference_at, extremal_circumference, measure_all, Extremum, MeasureConfig, CANONICAL, MEASUREMENT_NAMES,
};
use anthro_core::regressor::eval::ConstantPredictor;
use anthro_core::regressor::{compute_mae, evaluate_model, loss};
use anthro_core::screening::{classify_waist, screen_subject, waist_to_hip_ratio, ProportionThresholds};
use ndarray::Array2;
use proptest::prelude::*;

fn sex() -> impl Strategy<Value = Sex> {
    prop_oneof![Just(Sex::Male), Just(Sex::Female)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn circumference_scales_and_ignores_translation(
        r in 1.0f64..40.0,
        k in 0.2f64..5.0,
        dx in -100.0f64..100.0,
        dy in -100.0f64..100.0,
        dz in -100.0f64..100.0,
    ) {
        let mesh = shapes::frustum(r, 0.5 * r, 0.0, 10.0, 64);
        let base = circumference_at(&mesh, 3.0).unwrap();
        let scaled = circumference_at(&mesh.scaled(k), 3.0 * k).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-9 * k * base);
        let moved = circumference_at(&mesh.translated([dx, dy, dz]), 3.0 + dy).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * base);
    }

    #[test]
    fn refining_a_nested_grid_never_loses_the_extremum(n in 2usize..40, r0 in 5.0f64..20.0, r1 in 5.0f64..20.0) {
        let mesh = shapes::lathe(&[(0.0, r0), (4.0, r1), (7.0, 0.5 * (r0 + r1)), (10.0, r0)], 48);
        let (_, coarse_max) = extremal_circumference(&mesh, 0.0, 10.0, Extremum::Maximal, n).unwrap();
        let (_, fine_max) = extremal_circumference(&mesh, 0.0, 10.0, Extremum::Maximal, 2 * n - 1).unwrap();
        prop_assert!(fine_max >= coarse_max * (1.0 - 1e-12));
        let (_, coarse_min) = extremal_circumference(&mesh, 0.0, 10.0, Extremum::Minimal, n).unwrap();
        let (_, fine_min) = extremal_circumference(&mesh, 0.0, 10.0, Extremum::Minimal, 2 * n - 1).unwrap();
        prop_assert!(fine_min <= coarse_min * (1.0 + 1e-12));
    }

    #[test]
    fn split_is_a_balanced_partition(n_male in 0usize..120, n_female in 0usize..120, seed in any::<u64>()) {
        prop_assume!(n_male + n_female > 0);
        let m = common::synthetic_manifest(n_male, n_female, seed);
        let s = split_dataset(&m, [0.7, 0.15, 0.15], seed).unwrap();
        prop_assert_eq!(s.split.len(), m.records.len());
        prop_assert!(s.is_split());
        for (sex, n) in [(Sex::Male, n_male), (Sex::Female, n_female)] {
            let counts: Vec<usize> = Split::ALL
                .iter()
                .map(|sp| s.records_in(*sp).iter().filter(|r| r.sex == sex).count())
                .collect();
            prop_assert_eq!(counts, split_counts(n, [0.7, 0.15, 0.15]).to_vec());
        }
        prop_assert_eq!(&s, &split_dataset(&m, [0.7, 0.15, 0.15], seed).unwrap());
    }

    #[test]
    fn waist_class_is_monotone(sex in sex(), a in 1.0f64..200.0, b in 1.0f64..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_waist(sex, lo).unwrap() <= classify_waist(sex, hi).unwrap());
    }

    #[test]
    fn screening_is_pure_and_whr_exact(
        sex in sex(),
        waist in 40.0f64..160.0,
        pelvis in 60.0f64..160.0,
        arm in 40.0f64..90.0,
        leg in 60.0f64..120.0,
        torso in 30.0f64..80.0,
    ) {
        let values: BTreeMap<String, f64> = CANONICAL
            .iter()
            .map(|k| k.to_string())
            .zip([waist, pelvis, arm, leg, torso])
            .collect();
        let t = ProportionThresholds { arm_torso_max: Some(1.4), leg_torso_max: None };
        let a = screen_subject(&values, sex, &t).unwrap();
        prop_assert_eq!(&a, &screen_subject(&values, sex, &t).unwrap());
        prop_assert!((a.whr - waist / pelvis).abs() <= 1e-9 * (waist / pelvis));
        prop_assert_eq!(a.whr, waist_to_hip_ratio(waist, pelvis).unwrap());
    }

    #[test]
    fn mae_matches_loop_and_loss_is_mean_of_columns(seed in any::<u64>(), n in 1usize..40) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = Array2::from_shape_fn((n, 16), |_| rng.gen_range(-100.0..100.0));
        let t = Array2::from_shape_fn((n, 16), |_| rng.gen_range(-100.0..100.0));
        let mut per_column = 0.0;
        for k in 0..16 {
            let mut acc = 0.0;
            for i in 0..n {
                acc += f64::abs(p[[i, k]] - t[[i, k]]);
            }
            let mae = compute_mae(&p, &t, k).unwrap();
            prop_assert_eq!(mae, acc / n as f64);
            per_column += mae;
        }
        prop_assert!((loss(&p, &t).unwrap() - per_column / 16.0).abs() <= 1e-6);
    }

    #[test]
    fn total_mae_decomposes_by_sex(n_male in 4usize..60, n_female in 4usize..60, seed in any::<u64>(), shift in -30.0f64..30.0) {
        let m = common::synthetic_manifest(n_male, n_female, seed);
        let m = split_dataset(&m, [0.5, 0.25, 0.25], seed).unwrap();
        let mut p = ConstantPredictor::train_mean(&m).unwrap();
        p.values.iter_mut().enumerate().for_each(|(k, v)| *v += shift * (k as f64 - 7.5) / 8.0);
        let r = evaluate_model(&p, &m, Path::new("."), &MEASUREMENT_NAMES).unwrap();
        let n = (r.n_male + r.n_female) as f64;
        for row in &r.rows {
            let combined = (row.male * r.n_male as f64 + row.female * r.n_female as f64) / n;
            prop_assert!((row.total - combined).abs() <= 1e-9 * row.total.max(1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn body_measurements_follow_rigid_motion_and_scale(
        sex in sex(),
        seed in any::<u64>(),
        k in 0.5f64..2.0,
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
    ) {
        let spec = sample_body_spec(sex, seed, &GenerationRanges::default()).unwrap();
        let body = build_body(&spec, 48).unwrap();
        let cfg = MeasureConfig::default();
        let base = measure_all(&body, &cfg).unwrap();
        let moved = measure_all(&body.translated([dx, dy, 0.0]), &cfg).unwrap();
        let scaled = measure_all(&body.scaled(k), &cfg).unwrap();
        for name in MEASUREMENT_NAMES {
            let b = base.get(name).unwrap();
            prop_assert!((moved.get(name).unwrap() - b).abs() <= 1e-6 * b, "{} moved", name);
            prop_assert!((scaled.get(name).unwrap() - k * b).abs() <= 1e-6 * k * b, "{} scaled", name);
        }
    }
}

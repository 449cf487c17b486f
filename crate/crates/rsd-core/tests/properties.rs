//! Cross-module invariants: structural properties via proptest, numerical
//! properties over seeded random instance families.

use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rsd_core::model::{
    conditional_residual, conditional_variance, ActiveState, EliminationHistory,
};
use rsd_core::risk::loss;
use rsd_core::sim::{derive_seed, sample_gaussian};
use rsd_core::stepdown::{
    run_mrd, run_stepdown, select_index, StageAction, StepDownConfig, ThresholdProfile, TieRule,
};
use rsd_core::transform::{Transform, TransformSpec};
use rsd_core::verify::{
    check_interval, linspace, random_covariance, random_observation, random_thresholds,
    random_transform_spec, LineScanProfile,
};

fn rng_for(case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(0x5eed, case))
}

fn random_raw_profile(n: usize, rng: &mut impl Rng) -> ThresholdProfile {
    let mut c: f64 = rng.random_range(1.0..3.0);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(c);
        c = (c - rng.random_range(0.0..0.4)).max(0.05);
    }
    ThresholdProfile::raw(values).unwrap()
}

#[test]
fn precision_residuals_match_direct_along_chains() {
    for case in 0..200u64 {
        let mut rng = rng_for(case);
        let n = rng.random_range(2..=8);
        let model = random_covariance(n, &mut rng).unwrap();
        let x = random_observation(n, &mut rng);

        let mut state = ActiveState::full(&model).unwrap();
        loop {
            let fast = state.residuals(&x).unwrap();
            for &(j, u_fast) in &fast {
                let u_direct = conditional_residual(&model, &x, state.history(), j).unwrap();
                assert!(
                    (u_fast - u_direct).abs() <= 1e-9,
                    "case {case}: coordinate {j} fast {u_fast} vs direct {u_direct}"
                );
                let v_fast = state.conditional_variance_of(j).unwrap();
                let v_direct = conditional_variance(&model, state.history(), j).unwrap();
                assert!(
                    (v_fast - v_direct).abs() <= 1e-9 * v_direct.max(1.0),
                    "case {case}: variance routes disagree: {v_fast} vs {v_direct}"
                );
            }
            if state.active().len() == 1 {
                break;
            }
            let pick = state.active()[rng.random_range(0..state.active().len())];
            state = state.downdate(pick).unwrap();
        }
    }
}

#[test]
fn downdates_track_fresh_inversions() {
    for case in 0..100u64 {
        let mut rng = rng_for(1000 + case);
        let n = rng.random_range(2..=10);
        let model = random_covariance(n, &mut rng).unwrap();
        let mut state = ActiveState::full(&model).unwrap();
        while state.active().len() > 1 {
            let pick = state.active()[rng.random_range(0..state.active().len())];
            state = state.downdate(pick).unwrap();
            assert!(
                state.validate_against(&model) <= 1e-8,
                "case {case}: downdated precision drifted"
            );
        }
    }
}

#[test]
fn residuals_invariant_under_diagonal_rescaling() {
    for case in 0..200u64 {
        let mut rng = rng_for(2000 + case);
        let n = rng.random_range(2..=8);
        let model = random_covariance(n, &mut rng).unwrap();
        let corr_model = model.correlation_model().unwrap();
        let x = random_observation(n, &mut rng);
        let u = model.standardize(&x).unwrap();

        let hist_len = rng.random_range(0..n);
        let mut coords: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            coords.swap(i, j);
        }
        let history = EliminationHistory::new(coords[..hist_len].to_vec(), n).unwrap();
        for &j in &coords[hist_len..] {
            let a = conditional_residual(&model, &x, &history, j).unwrap();
            let b = conditional_residual(&corr_model, &u, &history, j).unwrap();
            assert!(
                (a - b).abs() <= 1e-9,
                "case {case}: residual not scale-free: {a} vs {b}"
            );
        }
    }
}

#[test]
fn stepdown_decisions_invariant_under_diagonal_rescaling() {
    for case in 0..200u64 {
        let mut rng = rng_for(3000 + case);
        let n = rng.random_range(2..=7);
        let model = Arc::new(random_covariance(n, &mut rng).unwrap());
        let corr = Arc::new(model.correlation_model().unwrap());
        let spec = random_transform_spec(n, &mut rng).unwrap();
        let x = random_observation(n, &mut rng);
        let thresholds = random_thresholds(&model, &spec, &x, &mut rng).unwrap();

        let cfg_a = StepDownConfig::new(model.clone(), spec.clone(), thresholds.clone()).unwrap();
        let cfg_b = StepDownConfig::new(corr.clone(), spec, thresholds).unwrap();
        let u = model.standardize(&x).unwrap();

        let ta = run_stepdown(&cfg_a, &x).unwrap();
        let tb = run_stepdown(&cfg_b, &u).unwrap();
        assert_eq!(ta.decision, tb.decision, "case {case}");
        let idx_a: Vec<_> = ta.records.iter().map(|r| (r.coordinate, r.action)).collect();
        let idx_b: Vec<_> = tb.records.iter().map(|r| (r.coordinate, r.action)).collect();
        assert_eq!(idx_a, idx_b, "case {case}");
    }
}

#[test]
fn identity_engine_recovers_direct_mrd() {
    for case in 0..500u64 {
        let mut rng = rng_for(4000 + case);
        let n = rng.random_range(1..=8);
        let model = Arc::new(random_covariance(n, &mut rng).unwrap());
        let thresholds = random_raw_profile(n, &mut rng);
        let theta = DVector::from_fn(n, |_, _| [0.0, 0.0, 1.0, -2.0][rng.random_range(0..4)]);
        let x = sample_gaussian(&model, &theta, &mut rng).unwrap();

        let config = StepDownConfig::new(
            model.clone(),
            TransformSpec::identity(n),
            thresholds.clone(),
        )
        .unwrap();
        let engine = run_stepdown(&config, &x).unwrap();
        let direct = run_mrd(&model, &x, &thresholds).unwrap();
        assert_eq!(engine.decision, direct.decision, "case {case}");
    }
}

#[test]
fn stagewise_conjugacy_matches_mrd() {
    // Distinct strictly increasing maps per stage; the mapped profile stays
    // non-increasing because later stages get weaker gains.
    for case in 0..200u64 {
        let mut rng = rng_for(5000 + case);
        let n = rng.random_range(2..=5);
        let model = Arc::new(random_covariance(n, &mut rng).unwrap());
        let thresholds = random_raw_profile(n, &mut rng);
        let x = random_observation(n, &mut rng);

        let mut spec = TransformSpec::uniform(
            n,
            Transform::Affine {
                slope: 1.0,
                intercept: 0.0,
            },
        )
        .unwrap();
        let mut mapped = Vec::with_capacity(n);
        for t in 1..=n {
            let slope = (n - t + 1) as f64;
            let h = Transform::Affine {
                slope,
                intercept: 0.0,
            };
            mapped.push(h.apply(thresholds.values()[t - 1]));
            spec = spec.with_stage_override(t, h).unwrap();
        }
        let config = StepDownConfig::new(
            model.clone(),
            spec,
            ThresholdProfile::score(mapped).unwrap(),
        )
        .unwrap();

        let general = run_stepdown(&config, &x).unwrap();
        let direct = run_mrd(&model, &x, &thresholds).unwrap();
        assert_eq!(general.decision, direct.decision, "case {case}");
    }
}

#[test]
fn trajectories_stop_at_first_failure() {
    for case in 0..300u64 {
        let mut rng = rng_for(6000 + case);
        let n = rng.random_range(1..=7);
        let model = Arc::new(random_covariance(n, &mut rng).unwrap());
        let spec = random_transform_spec(n, &mut rng).unwrap();
        let x = random_observation(n, &mut rng);
        let thresholds = random_thresholds(&model, &spec, &x, &mut rng).unwrap();
        let config = StepDownConfig::new(model, spec, thresholds).unwrap();
        let traj = run_stepdown(&config, &x).unwrap();

        assert!(!traj.records.is_empty());
        assert!(traj.records.len() <= n);
        for (i, rec) in traj.records.iter().enumerate() {
            assert_eq!(rec.stage, i + 1);
            let is_last = i + 1 == traj.records.len();
            match rec.action {
                StageAction::Reject => assert!(rec.score > rec.threshold),
                StageAction::Stop => {
                    assert!(rec.score <= rec.threshold);
                    assert!(is_last, "stop record must be terminal");
                }
            }
        }
        let rejects: Vec<usize> = traj
            .records
            .iter()
            .filter(|r| r.action == StageAction::Reject)
            .map(|r| r.coordinate)
            .collect();
        assert_eq!(rejects, traj.rejected);
        for j in 0..n {
            assert_eq!(traj.decision[j], traj.rejected.contains(&j));
        }
    }
}

#[test]
fn signed_residual_strictly_increases_along_shift() {
    for case in 0..200u64 {
        let mut rng = rng_for(7000 + case);
        let n = rng.random_range(2..=8);
        let model = random_covariance(n, &mut rng).unwrap();
        let x = random_observation(n, &mut rng);
        let k = rng.random_range(0..n);
        let g = model.shift_direction(k).unwrap().g;
        let history = EliminationHistory::empty();

        let mut rs: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let us: Vec<f64> = rs
            .iter()
            .map(|&r| conditional_residual(&model, &(&x + &g * r), &history, k).unwrap())
            .collect();
        for w in us.windows(2) {
            assert!(w[1] > w[0], "case {case}: residual not increasing: {us:?}");
        }
    }
}

#[test]
fn loss_totals_count_errors() {
    for case in 0..100u64 {
        let mut rng = rng_for(8000 + case);
        let n = rng.random_range(1..=6);
        let theta = DVector::from_fn(n, |_, _| [0.0, 1.5][rng.random_range(0..2)]);
        let decision: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let l = loss(&decision, &theta).unwrap();

        let type1 = (0..n).filter(|&j| theta[j] == 0.0 && decision[j]).count();
        let type2 = (0..n).filter(|&j| theta[j] != 0.0 && !decision[j]).count();
        let total: u32 = l.iter().map(|&v| u32::from(v)).sum();
        assert_eq!(total as usize, type1 + type2, "case {case}");
    }
}

proptest! {
    #[test]
    fn select_index_agrees_with_naive_argmax(scores in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let pairs: Vec<(usize, f64)> = scores.iter().cloned().enumerate().collect();
        let picked = select_index(&pairs, TieRule::LowestIndex).unwrap();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let naive = scores.iter().position(|&s| s == best).unwrap();
        prop_assert_eq!(picked, naive);
    }

    #[test]
    fn interval_checker_matches_contiguity(bits in prop::collection::vec(prop::bool::ANY, 1..40)) {
        let profile = LineScanProfile {
            coordinate: 0,
            base: DVector::zeros(1),
            grid: (0..bits.len()).map(|i| i as f64).collect(),
            decisions: bits.clone(),
            stop_stages: vec![0; bits.len()],
            trajectories: None,
        };
        let report = check_interval(&profile);
        let accepts: Vec<usize> = bits
            .iter()
            .enumerate()
            .filter(|(_, &d)| !d)
            .map(|(i, _)| i)
            .collect();
        let contiguous = accepts.windows(2).all(|w| w[1] == w[0] + 1);
        prop_assert_eq!(report.pass, contiguous);
    }

    #[test]
    fn affine_and_power_transforms_validate_iff_params_legal(
        slope in -2.0f64..3.0,
        exponent in -1.0f64..3.0,
    ) {
        let affine = Transform::Affine { slope, intercept: 0.1 };
        prop_assert_eq!(affine.validate().is_ok(), slope > 0.0);
        let power = Transform::Power { exponent };
        prop_assert_eq!(power.validate().is_ok(), exponent > 0.0);
    }

    #[test]
    fn threshold_profiles_validate_iff_sorted(values in prop::collection::vec(0.1f64..5.0, 1..8)) {
        let sorted_desc = values.windows(2).all(|w| w[1] <= w[0]);
        prop_assert_eq!(ThresholdProfile::raw(values).is_ok(), sorted_desc);
    }

    #[test]
    fn linspace_is_strictly_increasing(points in 2usize..200, a in -50.0f64..0.0, w in 0.1f64..100.0) {
        let grid = linspace(a, a + w, points).unwrap();
        prop_assert_eq!(grid.len(), points);
        prop_assert!(grid.windows(2).all(|p| p[1] > p[0]));
    }
}

#[test]
fn mrd_rejects_everything_under_tiny_thresholds() {
    let mut rng = rng_for(9000);
    let model = random_covariance(4, &mut rng).unwrap();
    let x = DVector::from_vec(vec![5.0, -6.0, 7.0, -8.0]);
    let c = ThresholdProfile::raw(vec![0.01; 4]).unwrap();
    let traj = run_mrd(&model, &x, &c).unwrap();
    assert_eq!(traj.decision, vec![true; 4]);
    assert_eq!(traj.records.len(), 4);
}

#[test]
fn config_rejects_dimension_mismatches() {
    let mut rng = rng_for(9001);
    let model = Arc::new(random_covariance(3, &mut rng).unwrap());
    let bad_spec = TransformSpec::identity(2);
    assert!(StepDownConfig::new(
        model.clone(),
        bad_spec,
        ThresholdProfile::raw(vec![1.0; 3]).unwrap()
    )
    .is_err());
    assert!(StepDownConfig::new(
        model,
        TransformSpec::identity(3),
        ThresholdProfile::raw(vec![1.0; 2]).unwrap()
    )
    .is_err());
}

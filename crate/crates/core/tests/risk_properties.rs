use proptest::prelude::*;

use emu_core::risk_model::{
    build_risk_matrix, fit_expectation_curve, interpolate, threshold_crossings, Crossing, EmuLimit,
    ExpectationCurve, MatrixOptions,
};
use emu_core::TrialRecord;

/// Records on a 0.05 m × 0.05 m/s grid, one coder.
fn grid_records(min_trial: u32) -> impl Strategy<Value = Vec<TrialRecord>> {
    prop::collection::vec(
        (0u32..8, 1u32..12, min_trial..8, any::<bool>(), 0u32..40),
        1..150,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (dk, vk, trial, imo, p))| TrialRecord {
                participant: format!("P{p:02}-{i}"),
                trial_index: trial,
                distance: dk as f64 * 0.05,
                velocity: vk as f64 * 0.05,
                cues: if imo {
                    [emu_core::CueCode::BT].into_iter().collect()
                } else {
                    Default::default()
                },
                contact_perception: false,
                coder: "C1".into(),
            })
            .collect()
    })
}

fn include_all() -> MatrixOptions {
    MatrixOptions {
        exclude_first_trial: false,
        ..MatrixOptions::default()
    }
}

proptest! {
    #[test]
    fn cell_frequencies_are_exact(records in grid_records(1)) {
        let matrix = build_risk_matrix(&records, &include_all()).unwrap();
        for cell in matrix.cells() {
            let f = cell.frequency().unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(cell.n_imo <= cell.n_trials);
            prop_assert_eq!(f, cell.n_imo as f64 / cell.n_trials as f64);
            prop_assert_eq!((f * cell.n_trials as f64).round() as u64, cell.n_imo);
        }
        prop_assert_eq!(matrix.total_trials(), records.len() as u64);
    }

    #[test]
    fn exclusion_is_a_no_op_without_first_trials(records in grid_records(2)) {
        let kept = build_risk_matrix(&records, &MatrixOptions::default()).unwrap();
        let all = build_risk_matrix(&records, &include_all()).unwrap();
        prop_assert_eq!(kept, all);
    }

    #[test]
    fn matrix_document_round_trips(records in grid_records(1)) {
        let matrix = build_risk_matrix(&records, &include_all()).unwrap();
        let text = serde_json::to_string(&matrix).unwrap();
        let back: emu_core::RiskMatrix = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, matrix);
    }

    #[test]
    fn interior_crossings_hit_threshold(records in grid_records(1), q_r in 0.05f64..0.6) {
        let matrix = build_risk_matrix(&records, &include_all()).unwrap();
        let crossings = threshold_crossings(&matrix, q_r).unwrap();
        prop_assert_eq!(crossings.len(), matrix.distance_bins().len());
        for c in crossings {
            let profile = matrix.frequency_profile(c.d);
            let interior = profile.windows(2).any(|w| w[0].0 < c.v && c.v < w[1].0);
            if interior {
                let f = interpolate(&profile, c.v).unwrap();
                prop_assert!((f - q_r).abs() <= 1e-9, "f({}) = {f} at d = {}", c.v, c.d);
            }
            prop_assert!(c.v >= 0.0);
        }
    }

    #[test]
    fn fitted_curve_is_conservative(
        points in prop::collection::vec((0.0f64..0.3, 0.0f64..1.5), 2..20)
    ) {
        let crossings: Vec<Crossing> = points.iter().map(|&(d, v)| Crossing { d, v }).collect();
        let Ok(curve) = fit_expectation_curve(&crossings, 0.15, 0.30) else {
            // Only coincident distances may be rejected.
            let d0 = points[0].0;
            prop_assert!(points.iter().all(|p| p.0 == d0));
            return Ok(());
        };
        prop_assert!(curve.slope() >= 0.0 && curve.intercept() >= 0.0);
        for c in &crossings {
            prop_assert!(curve.line(c.d) <= c.v + 1e-12, "{} > {} at d = {}", curve.line(c.d), c.v, c.d);
        }
    }

    #[test]
    fn eval_is_monotone(
        a in 0.0f64..5.0,
        b in 0.0f64..1.0,
        d_max in 0.05f64..1.0,
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        let curve = ExpectationCurve::new(0.15, a, b, d_max).unwrap();
        let (lo, hi) = if x <= y { (x * d_max, y * d_max) } else { (y * d_max, x * d_max) };
        let (EmuLimit::Limit(vlo), EmuLimit::Limit(vhi)) = (curve.eval(lo).unwrap(), curve.eval(hi).unwrap()) else {
            return Err(TestCaseError::fail("no limit inside d_max"));
        };
        prop_assert!(vlo <= vhi);
        prop_assert_eq!(curve.eval(d_max * 1.0001 + 1e-9).unwrap(), EmuLimit::NoLimit);
    }
}

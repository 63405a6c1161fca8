use std::collections::BTreeSet;

use proptest::prelude::*;

use emu_core::trial_data::{
    cohen_kappa, cue_counts_by_trial_index, parse_trials, write_trials, AnnotationPair,
};
use emu_core::{CueCode, TrialRecord};

fn labels() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn kappa(a: &[bool], b: &[bool]) -> f64 {
    cohen_kappa(&AnnotationPair::from_labels(a, b)).unwrap()
}

fn cue_set() -> impl Strategy<Value = BTreeSet<CueCode>> {
    prop::collection::btree_set(prop::sample::select(CueCode::ALL.to_vec()), 0..5)
}

fn record() -> impl Strategy<Value = TrialRecord> {
    (
        "P[0-9]{2}",
        1u32..12,
        0.0f64..2.0,
        0.0f64..1.5,
        cue_set(),
        any::<bool>(),
        "C[12]",
    )
        .prop_map(
            |(participant, trial_index, distance, velocity, cues, cp, coder)| TrialRecord {
                participant,
                trial_index,
                distance,
                velocity,
                cues,
                contact_perception: cp,
                coder,
            },
        )
}

proptest! {
    #[test]
    fn kappa_symmetric_in_coders((a, b) in labels()) {
        prop_assert_eq!(kappa(&a, &b), kappa(&b, &a));
    }

    #[test]
    fn kappa_invariant_under_label_flip((a, b) in labels()) {
        let fa: Vec<bool> = a.iter().map(|x| !x).collect();
        let fb: Vec<bool> = b.iter().map(|x| !x).collect();
        prop_assert_eq!(kappa(&a, &b), kappa(&fa, &fb));
    }

    #[test]
    fn kappa_at_most_one((a, b) in labels()) {
        prop_assert!(kappa(&a, &b) <= 1.0);
    }

    #[test]
    fn kappa_identical_non_constant_is_one((a, _) in labels()) {
        prop_assume!(a.iter().any(|&x| x) && a.iter().any(|&x| !x));
        prop_assert_eq!(kappa(&a, &a), 1.0);
    }

    #[test]
    fn trials_round_trip(records in prop::collection::vec(record(), 0..30)) {
        let mut buf = Vec::new();
        write_trials(&records, &mut buf).unwrap();
        let back = parse_trials(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &records);
        let mut again = Vec::new();
        write_trials(&back, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn cue_count_totals(records in prop::collection::vec(record(), 0..30)) {
        let counts = cue_counts_by_trial_index(&records);
        let total: usize = counts.values().sum();
        prop_assert_eq!(total, records.iter().map(|r| r.cues.len()).sum::<usize>());
    }
}

mod common;

use common::{brute_force_evaluate, random_instance};
use proptest::prelude::*;
use zeroshot_nuclei::data::{Annotation, NUCLEI_CATEGORY};
use zeroshot_nuclei::evalkit::{evaluate, DEFAULT_MAX_DETS};
use zeroshot_nuclei::geometry::BBox;

#[test]
fn matches_brute_force_on_random_instances() {
    for seed in 0..200 {
        let (pred, gt) = random_instance(seed);
        let fast = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        let slow = brute_force_evaluate(&pred, &gt, DEFAULT_MAX_DETS);
        for (name, a, b) in [
            ("map", fast.map, slow.map),
            ("ap50", fast.ap50, slow.ap50),
            ("ap75", fast.ap75, slow.ap75),
            ("ar", fast.ar, slow.ar),
            ("precision50", fast.precision50, slow.precision50),
            ("recall50", fast.recall50, slow.recall50),
        ] {
            assert!((a - b).abs() <= 1e-9, "seed {seed} {name}: {a} vs {b}");
        }
    }
}

#[test]
fn small_max_dets_also_matches() {
    for seed in 0..50 {
        let (pred, gt) = random_instance(seed);
        let fast = evaluate(&pred, &gt, 3).unwrap();
        let slow = brute_force_evaluate(&pred, &gt, 3);
        assert!((fast.map - slow.map).abs() <= 1e-9, "seed {seed}");
        assert!((fast.ar - slow.ar).abs() <= 1e-9, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn invariant_under_input_permutation(seed in 0u64..10_000, rot in 0usize..10) {
        let (pred, gt) = random_instance(seed);
        let mut shuffled = pred.clone();
        for anns in shuffled.annotations.values_mut() {
            let k = rot % anns.len().max(1);
            anns.rotate_left(k);
            anns.reverse();
        }
        let a = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        let b = evaluate(&shuffled, &gt, DEFAULT_MAX_DETS).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lowest_scored_false_positive_never_raises_ap(seed in 0u64..10_000) {
        let (mut pred, gt) = random_instance(seed);
        let before = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        let min_score = pred.annotations.values().flatten().filter_map(|a| a.score).fold(1.0, f64::min);
        // Far outside every GT box, so it is a false positive at every threshold.
        let id = gt.images[0].id;
        pred.push(id, Annotation {
            bbox: BBox::new(500.0, 500.0, 5.0, 5.0).unwrap(),
            category_id: NUCLEI_CATEGORY,
            score: Some(min_score / 2.0),
        }).unwrap();
        let after = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        prop_assert!(after.map <= before.map + 1e-12);
        prop_assert!(after.ap50 <= before.ap50 + 1e-12);
        prop_assert!(after.ap75 <= before.ap75 + 1e-12);
    }

    #[test]
    fn only_score_ranking_matters(seed in 0u64..10_000) {
        let (pred, gt) = random_instance(seed);
        let mut remapped = pred.clone();
        for anns in remapped.annotations.values_mut() {
            for a in anns.iter_mut() {
                // Doubling followed by a monotone squash back into [0, 1].
                let s = 2.0 * a.score.unwrap();
                a.score = Some(s / (1.0 + s));
            }
        }
        let a = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        let b = evaluate(&remapped, &gt, DEFAULT_MAX_DETS).unwrap();
        prop_assert_eq!((a.map, a.ap50, a.ap75, a.ar), (b.map, b.ap50, b.ap75, b.ar));
        prop_assert_eq!((a.precision50, a.recall50), (b.precision50, b.recall50));
    }

    #[test]
    fn metrics_stay_in_unit_range(seed in 0u64..10_000) {
        let (pred, gt) = random_instance(seed);
        let r = evaluate(&pred, &gt, DEFAULT_MAX_DETS).unwrap();
        for v in [r.map, r.ap50, r.ap75, r.ar, r.precision50, r.recall50] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

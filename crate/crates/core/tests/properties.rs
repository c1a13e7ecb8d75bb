//! Property tests for the stated invariants of the numeric core and the
//! evaluation metrics.

use iqa_core::data::{augment, AugmentConfig, Sample};
use iqa_core::losses::{bt_probability, emd_loss, ScoreDistribution};
use iqa_core::metrics::{plcc, score_2afc, srcc, Judgment};
use iqa_core::tensor::{repeat_upsample, softmax, window_avg_pool, Tensor};
use proptest::prelude::*;

fn finite_vec(max_mag: f64, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-max_mag..max_mag, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(data in finite_vec(50.0, 2..40usize)) {
        let x = Tensor::from_vec(data);
        let s = softmax(&x, 0).unwrap();
        let total: f64 = s.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert!(s.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pooling_is_idempotent_after_upsample(
        data in prop::collection::vec(-10.0..10.0f64, 64),
        window in prop::sample::select(vec![1usize, 2, 4]),
    ) {
        // pool, repeat-upsample, pool again: a projection
        let x = Tensor::new(vec![1, 8, 8], data).unwrap();
        let once = window_avg_pool(&x, window).unwrap();
        let up = repeat_upsample(&once, window).unwrap();
        let twice = window_avg_pool(&up, window).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn plcc_invariant_under_positive_affine_maps(
        base in finite_vec(5.0, 4..30usize),
        scale in 0.1..10.0f64,
        shift in -5.0..5.0f64,
    ) {
        let other: Vec<f64> = base.iter().enumerate().map(|(i, v)| v * 0.3 + (i as f64 * 0.7).sin()).collect();
        let mapped: Vec<f64> = base.iter().map(|v| v * scale + shift).collect();
        let (Ok(a), Ok(b)) = (plcc(&base, &other, false), plcc(&mapped, &other, false)) else {
            return Ok(()); // degenerate draw
        };
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn srcc_invariant_under_strictly_monotone_maps(
        base in finite_vec(4.0, 3..30usize),
        other in finite_vec(4.0, 3..30usize),
    ) {
        let n = base.len().min(other.len());
        // quantize one side so ties appear
        let a: Vec<f64> = base[..n].iter().map(|v| (v * 2.0).round() / 2.0).collect();
        let b = &other[..n];
        let mapped: Vec<f64> = a.iter().map(|v| v.exp() + v * 3.0).collect();
        let (Ok(x), Ok(y)) = (srcc(&a, b), srcc(&mapped, b)) else {
            return Ok(());
        };
        prop_assert!((x - y).abs() <= 1e-9);
    }

    #[test]
    fn twoafc_score_invariant_under_monotone_score_maps(
        ys in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.0..1.0f64), 1..20),
    ) {
        let items: Vec<Judgment> = ys
            .iter()
            .map(|&(a, b, p)| Judgment { y_a: a, y_b: b, p_a: p, p_b: 1.0 - p })
            .collect();
        let mapped: Vec<Judgment> = items
            .iter()
            .map(|j| Judgment { y_a: j.y_a.exp(), y_b: j.y_b.exp(), ..*j })
            .collect();
        prop_assert_eq!(score_2afc(&items).unwrap(), score_2afc(&mapped).unwrap());
    }

    #[test]
    fn bt_is_a_probability_with_exact_complement(a in -20.0..20.0f64, b in -20.0..20.0f64) {
        let p = bt_probability(a, b);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p + bt_probability(b, a), 1.0);
        // lower error score means higher preference
        if a < b {
            prop_assert!(p > 0.5);
        }
    }

    #[test]
    fn emd_is_a_symmetric_nonnegative_distance_on_deltas(
        raw_a in prop::collection::vec(0.01..1.0f64, 5),
        raw_b in prop::collection::vec(0.01..1.0f64, 5),
    ) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            ScoreDistribution::new(v.iter().map(|x| x / s).collect()).unwrap()
        };
        let (a, b) = (norm(&raw_a), norm(&raw_b));
        let ab = emd_loss(&a, &b).unwrap();
        let ba = emd_loss(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(emd_loss(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn augmentation_never_changes_labels(
        label in 0.0..1.0f64,
        crop in 2..8usize,
        hp in 0.0..1.0f64,
        vp in 0.0..1.0f64,
        stream in 0u64..64,
    ) {
        let image = Tensor::<f64>::new(
            vec![3, 8, 8],
            (0..192).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let sample = Sample::MosFr {
            distorted: image.clone(),
            reference: image,
            label,
        };
        let cfg = AugmentConfig { crop_h: crop, crop_w: crop, hflip_prob: hp, vflip_prob: vp, resize_shorter_range: None, seed: 5 };
        let out = augment(&sample, &cfg, stream).unwrap();
        let Sample::MosFr { label: out_label, distorted, reference } = out else { unreachable!() };
        prop_assert_eq!(out_label, label);
        prop_assert_eq!(distorted.shape(), &[3, crop, crop]);
        prop_assert_eq!(reference.shape(), &[3, crop, crop]);
    }
}

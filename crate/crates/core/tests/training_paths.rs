//! End-to-end training over each label family: the loss is selected by
//! the dataset kind and the evaluation protocol reduces predictions to
//! scalars accordingly.

use iqa_core::attention::HeadKind;
use iqa_core::backbone::BackboneConfig;
use iqa_core::data::{Dataset, ManifestKind, Sample};
use iqa_core::model::{init_params, Mode, ModelConfig};
use iqa_core::tensor::Tensor;
use iqa_core::trainer::{evaluate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor<f32> {
    Tensor::new(
        vec![3, side, side],
        (0..3 * side * side).map(|_| rng.gen::<f32>()).collect(),
    )
    .unwrap()
}

fn nr_cfg(head: HeadKind) -> ModelConfig {
    let mut cfg = ModelConfig::no_reference(BackboneConfig::new(vec![2, 3]), 16, 16);
    cfg.token_dim = 8;
    cfg.glp_hidden = 2;
    cfg.head = head;
    cfg
}

fn quick_train_cfg() -> TrainConfig {
    let mut tcfg = TrainConfig::default_for(Mode::NoReference);
    tcfg.max_epochs = 2;
    tcfg.patience = 5;
    tcfg.batch_size = 2;
    tcfg.lr = 1e-3;
    tcfg
}

#[test]
fn distribution_training_and_expectation_reduction() {
    let cfg = nr_cfg(HeadKind::Distribution(5));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<Sample<f32>> = (0..6)
        .map(|i| {
            let mut probs = vec![0.05; 5];
            probs[i % 5] = 0.8;
            Sample::Distribution { image: random_image(&mut rng, 16), probs }
        })
        .collect();
    let data = Dataset { kind: ManifestKind::Distribution(5), samples, mos_range: None };
    let out = train(&cfg, &quick_train_cfg(), &data, &data).unwrap();
    assert_eq!(out.log.rows.len(), 2);
    assert!(out.log.rows.iter().all(|r| r.train_loss.is_finite()));

    let report = evaluate(&cfg, &out.params, &data).unwrap();
    assert_eq!(report.n_samples, 6);
    assert!(report.twoafc.is_none());

    // labels reduce through the bin expectation: a one-hot on bin 3 of
    // five maps to the scalar 3
    assert_eq!(iqa_core::metrics::bin_expectation(&[0.0, 0.0, 1.0, 0.0, 0.0]), 3.0);
}

#[test]
fn twoafc_training_reports_consistency_score() {
    let mut cfg = ModelConfig::full_reference(BackboneConfig::new(vec![2, 3]), 16, 16);
    cfg.token_dim = 8;
    cfg.glp_hidden = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = random_image(&mut rng, 16);
    let samples: Vec<Sample<f32>> = (0..5)
        .map(|i| Sample::TwoAfc {
            reference: reference.clone(),
            a: random_image(&mut rng, 16),
            b: random_image(&mut rng, 16),
            p_ab: (i as f64 + 0.5) / 5.0,
        })
        .collect();
    let data = Dataset { kind: ManifestKind::TwoAfc, samples, mos_range: None };
    let mut tcfg = quick_train_cfg();
    tcfg.lr = 1e-4;
    let out = train(&cfg, &tcfg, &data, &data).unwrap();
    let report = evaluate(&cfg, &out.params, &data).unwrap();
    let twoafc = report.twoafc.expect("2AFC datasets report the consistency score");
    assert!((0.0..=1.0).contains(&twoafc));
}

#[test]
fn wrong_head_for_distribution_data_is_rejected() {
    let cfg = nr_cfg(HeadKind::Scalar);
    let store = init_params::<f32>(&cfg, 0).unwrap();
    let data = Dataset::<f32> {
        kind: ManifestKind::Distribution(5),
        samples: vec![Sample::Distribution {
            image: Tensor::zeros(vec![3, 16, 16]),
            probs: vec![0.2; 5],
        }],
        mos_range: None,
    };
    assert!(evaluate(&cfg, &store, &data).is_err());
}

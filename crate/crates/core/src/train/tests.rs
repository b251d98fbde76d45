use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_synthetic, GeneratorConfig};
use crate::features::FeatureSchema;
use crate::model::{build_variant, ModelHyper, ModelVariant};
use crate::tensor::{ParamSet, Tensor};

fn small_data(n: usize, seed: u64) -> (FeatureSchema, Vec<EncodedSample>) {
    let cfg = GeneratorConfig {
        num_users: 100,
        num_items: 80,
        num_impressions: n,
        max_behaviors: 8,
        history_max: 8,
        seed,
        ..GeneratorConfig::default()
    };
    let schema = cfg.schema().unwrap();
    let (raw, _) = generate_synthetic(&cfg).unwrap();
    let enc = raw.iter().map(|s| s.encode(&schema).unwrap()).collect();
    (schema, enc)
}

fn small_hyper() -> ModelHyper {
    ModelHyper {
        din_hidden: vec![8, 4],
        uin_hidden: 8,
        head_hidden: vec![16, 8],
        ..ModelHyper::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-15 * b.abs()
}

#[test]
fn default_hyperparameters_match_published_values() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr, 0.001);
    assert_eq!(cfg.decay_rate, 0.9);
    assert_eq!(cfg.alpha, 1.0);
    assert_eq!(cfg.beta, 0.8);
    assert_eq!(cfg.batch_size, 128);
    assert_eq!(cfg.decay_steps, None);
    let adam = Adam::new(&ParamSet::new());
    assert_eq!((adam.beta1, adam.beta2, adam.eps), (0.9, 0.999, 1e-8));
}

#[test]
fn learning_rate_decays_in_steps() {
    assert_eq!(lr_schedule(0, 0.001, 0.9, 100), 0.001);
    assert_eq!(lr_schedule(99, 0.001, 0.9, 100), 0.001);
    assert!(close(lr_schedule(100, 0.001, 0.9, 100), 0.0009));
    assert!(close(lr_schedule(200, 0.001, 0.9, 100), 0.00081));
    assert!(close(lr_schedule(299, 0.001, 0.9, 100), 0.00081));
}

#[test]
fn bad_train_config_is_rejected() {
    for cfg in [
        TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            decay_rate: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            beta: -1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}

fn scalar_params(value: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.add("x", Tensor::scalar(value));
    p
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let mut p = scalar_params(0.5);
    let mut adam = Adam::new(&p);
    for _ in 0..10 {
        adam.update(&mut p, &[Tensor::scalar(0.0)], 0.1).unwrap();
    }
    assert_eq!(p.tensors()[0].data(), &[0.5]);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut p = scalar_params(0.5);
    let mut adam = Adam::new(&p);
    adam.update(&mut p, &[Tensor::scalar(3.0)], 0.0).unwrap();
    assert_eq!(p.tensors()[0].data(), &[0.5]);
    assert_eq!(adam.step, 1);
}

#[test]
fn first_step_moves_by_about_lr() {
    let mut p = scalar_params(0.0);
    let mut adam = Adam::new(&p);
    adam.update(&mut p, &[Tensor::scalar(1.0)], 0.001).unwrap();
    let x = p.tensors()[0].data()[0];
    assert!((x + 0.001).abs() < 1e-10, "{x}");
}

#[test]
fn constant_gradient_gives_unit_steps() {
    let mut p = scalar_params(0.0);
    let mut adam = Adam::new(&p);
    let lr = 0.01;
    let mut prev = 0.0;
    for k in 0..2000 {
        adam.update(&mut p, &[Tensor::scalar(-0.37)], lr).unwrap();
        let x = p.tensors()[0].data()[0];
        if k > 100 {
            assert!(
                ((x - prev) / lr - 1.0).abs() < 0.01,
                "step {k}: {}",
                x - prev
            );
        }
        prev = x;
    }
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = scalar_params(0.0);
    let mut adam = Adam::new(&p);
    assert!(matches!(
        adam.update(&mut p, &[Tensor::zeros(&[2])], 0.1),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        adam.update(&mut p, &[], 0.1),
        Err(Error::Contract(_))
    ));
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
    assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    assert!(matches!(
        auc(&[0.1, 0.2], &[1, 1]),
        Err(Error::UndefinedMetric(_))
    ));
    assert!(matches!(auc(&[], &[]), Err(Error::UndefinedMetric(_))));
    assert!(auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
}

#[test]
fn fast_auc_equals_pairwise_auc_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut done = 0;
    while done < 1000 {
        let n = rng.gen_range(2..120);
        // a small score alphabet forces ties
        let levels = rng.gen_range(1..12);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / 7.0)
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        done += 1;
    }
}

proptest! {
    #[test]
    fn auc_ignores_increasing_transforms(
        raw in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..200),
        a in 0.01f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let labels: Vec<u8> = raw.iter().map(|r| r.1 as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let base = auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(auc(&exp, &labels).unwrap(), base);
        prop_assert_eq!(auc(&affine, &labels).unwrap(), base);
    }

    #[test]
    fn negated_scores_complement_the_auc(
        raw in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..200),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let labels: Vec<u8> = raw.iter().map(|r| r.1 as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let total = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn one_epoch_of_eight_samples_in_batches_of_four_is_two_steps() {
    let (schema, data) = small_data(8, 0);
    let mut model = build_variant(ModelVariant::Dihn, &schema, &small_hyper(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, None, &cfg).unwrap();
    assert_eq!(report.steps, 2);
    assert_eq!(report.history.len(), 1);
    assert_eq!(report.history[0].val_auc, None);
}

#[test]
fn training_is_bit_reproducible() {
    let (schema, data) = small_data(96, 1);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = build_variant(ModelVariant::Dihn, &schema, &small_hyper(), 5).unwrap();
        let r = train(&mut m, &data, Some(&data[..48]), &cfg).unwrap();
        (m, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert!(a.params.bit_equal(&b.params));
    assert_eq!(ra, rb);
}

#[test]
fn empty_dataset_is_a_contract_error() {
    let (schema, _) = small_data(8, 0);
    let mut model = build_variant(ModelVariant::DinBaseline, &schema, &small_hyper(), 0).unwrap();
    assert!(matches!(
        train(&mut model, &[], None, &TrainConfig::default()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn loss_falls_on_a_separable_set() {
    // the click label is a function of the target category alone
    let (schema, mut data) = small_data(512, 2);
    for s in &mut data {
        s.label = (s.target[1] % 2) as u8;
    }
    let mut model = build_variant(ModelVariant::Dihn, &schema, &small_hyper(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, None, &cfg).unwrap();
    let losses: Vec<f64> = report.history.iter().map(|r| r.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(evaluate(&model, &data, 64).unwrap().auc > 0.9);
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let (schema, data) = small_data(64, 3);
    let model = build_variant(ModelVariant::Dihn, &schema, &small_hyper(), 1).unwrap();
    let before = model.clone();
    let a = evaluate(&model, &data, 16).unwrap();
    let b = evaluate(&model, &data, 64).unwrap();
    assert!(model.params.bit_equal(&before.params));
    assert_eq!(a, b);
    assert!(a.trigger_auc.is_some());
    let din = build_variant(ModelVariant::DinBaseline, &schema, &small_hyper(), 1).unwrap();
    assert_eq!(evaluate(&din, &data, 16).unwrap().trigger_auc, None);
}

#[test]
fn untrained_models_score_near_chance() {
    let (schema, mut data) = small_data(1000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in &mut data {
        s.label = rng.gen_bool(0.5) as u8;
    }
    for seed in 0..10 {
        let model = build_variant(ModelVariant::Dihn, &schema, &small_hyper(), seed).unwrap();
        let a = evaluate(&model, &data, 128).unwrap().auc;
        assert!((0.4..=0.6).contains(&a), "seed {seed}: {a}");
    }
}

#[test]
fn ablation_grid_shape_and_determinism() {
    let (schema, data) = small_data(120, 5);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 40,
        ..TrainConfig::default()
    };
    let grid = AblationData {
        schema: &schema,
        train: &data[..80],
        val: Some(&data[80..100]),
        test: &data[100..],
    };
    let variants = [ModelVariant::Dihn, ModelVariant::DinBaseline];
    let report = run_ablation(&variants, &grid, &small_hyper(), &cfg, 3, 1).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.history.len(), 6);
    assert!(report
        .rows
        .iter()
        .all(|r| r.aucs.len() == 3 && r.seeds == vec![0, 1, 2]));
    assert_eq!(report.to_table("Synthetic").lines().count(), 3);
    assert_eq!(
        report.history_tsv().lines().next().unwrap(),
        "variant\tseed\tepoch\ttrain_loss\tval_auc"
    );

    let twice = run_ablation(
        &[ModelVariant::DinBaseline, ModelVariant::DinBaseline],
        &grid,
        &small_hyper(),
        &cfg,
        3,
        2,
    )
    .unwrap();
    assert_eq!(twice.rows[0].aucs, twice.rows[1].aucs);
    assert_eq!(twice.rows[0].aucs, report.rows[1].aucs);
    assert!(run_ablation(&variants, &grid, &small_hyper(), &cfg, 0, 1).is_err());
}

#[test]
fn mean_and_std_of_rows() {
    let (m, s) = ablation::mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert_eq!(s, 1.0);
    assert_eq!(ablation::mean_std(&[0.7]), (0.7, 0.0));
}

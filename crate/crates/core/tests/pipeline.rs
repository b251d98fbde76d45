use trigger_rec::data::{
    generate_synthetic, mine_triggers, mining_schema, parse_logs, read_dataset, split_random,
    split_temporal, write_dataset, GeneratorConfig,
};
use trigger_rec::features::EncodedSample;
use trigger_rec::model::{build_variant, Model, ModelHyper, ModelVariant};
use trigger_rec::train::{auc, evaluate, predict_all, train, TrainConfig};

#[test]
fn synthetic_data_trains_saves_and_reloads() {
    let cfg = GeneratorConfig {
        num_users: 200,
        num_items: 150,
        num_impressions: 3000,
        seed: 5,
        ..GeneratorConfig::default()
    };
    let schema = cfg.schema().unwrap();
    let (raw, oracle) = generate_synthetic(&cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.tsv");
    write_dataset(&raw, &path).unwrap();
    assert_eq!(read_dataset(&path, &schema).unwrap(), raw);

    let splits = split_random(raw, 2400, 100, 5).unwrap();
    let enc = |s: &[trigger_rec::features::RawSample]| -> Vec<EncodedSample> {
        s.iter().map(|x| x.encode(&schema).unwrap()).collect()
    };
    let (tr, va, te) = (enc(&splits.train), enc(&splits.val), enc(&splits.test));

    let mut model = build_variant(ModelVariant::Dihn, &schema, &ModelHyper::default(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.003,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &tr, Some(&va), &cfg).unwrap();
    assert_eq!(report.history.len(), 2);

    let eval = evaluate(&model, &te, 128).unwrap();
    let scores: Vec<f64> = splits
        .test
        .iter()
        .map(|s| oracle.score(s).unwrap())
        .collect();
    let labels: Vec<u8> = splits.test.iter().map(|s| s.label).collect();
    let oracle_auc = auc(&scores, &labels).unwrap();
    assert!(eval.auc > 0.55, "model AUC {}", eval.auc);
    assert!(
        eval.auc <= oracle_auc + 0.05,
        "model {} oracle {oracle_auc}",
        eval.auc
    );

    let ckpt = dir.path().join("model.json");
    model.save(&ckpt).unwrap();
    let loaded = Model::load(&ckpt, Some(&schema)).unwrap();
    let bits = |m: &Model| {
        let (p, pt) = predict_all(m, &te, 64).unwrap();
        p.iter().chain(&pt).map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(bits(&model), bits(&loaded));
}

#[test]
fn mined_logs_feed_a_baseline() {
    // user 1: click, impression 100 s later, a gap of more than four hours,
    // another click, then an impression in a new category
    let logs = parse_logs(
        "1\t3\t2\t100\t1\n\
         1\t5\t2\t200\t0\n\
         1\t6\t3\t20000\t0\n\
         1\t4\t2\t20100\t1\n\
         1\t7\t4\t20200\t1\n",
    )
    .unwrap();
    let (mined, stats) = mine_triggers(&logs, 14_400, 10).unwrap();
    assert_eq!((stats.kept, stats.dropped, stats.aux_positive), (2, 3, 1));
    assert_eq!(
        mined
            .iter()
            .map(|m| (m.impression, m.trigger))
            .collect::<Vec<_>>(),
        [(1, 0), (4, 3)]
    );
    let first = mined[0].sample.clone();
    assert_eq!((first.label, first.trigger_label), (0, 1));
    let second = mined[1].sample.clone();
    assert_eq!((second.label, second.trigger_label), (1, 0));
    assert_eq!(second.behaviors.len(), 2);

    let schema = mining_schema(&logs, 10).unwrap();
    let enc: Vec<EncodedSample> = mined
        .iter()
        .map(|m| m.sample.encode(&schema).unwrap())
        .collect();
    let mut model = build_variant(
        ModelVariant::DinBaseline,
        &schema,
        &ModelHyper::default(),
        0,
    )
    .unwrap();
    let report = train(&mut model, &enc, None, &TrainConfig::default()).unwrap();
    assert!(report.history[0].train_loss.is_finite());

    let splits = split_temporal(mined, 0.5, 0.0).unwrap();
    assert_eq!(splits.train, [first]);
    assert_eq!(splits.test, [second]);
}

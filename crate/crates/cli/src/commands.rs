use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};

use trigger_rec::data::{
    generate_synthetic, mine_triggers, mining_schema, read_dataset, read_logs, split_random,
    split_sizes, split_temporal, write_dataset, GeneratorConfig, Splits,
};
use trigger_rec::features::{pad_and_mask, EncodedSample, FeatureSchema, RawSample};
use trigger_rec::model::{build_variant, Model, ModelHyper, ModelVariant};
use trigger_rec::tensor::{grad_check, GradCheckConfig};
use trigger_rec::train::{
    ablation_threads, auc, evaluate, run_ablation, train as fit, AblationData, TrainConfig,
};

use crate::{AblateArgs, EvalArgs, GenerateArgs, GradcheckArgs, MineArgs, TrainArgs, TrainFlags};

type Outcome = Result<(), Box<dyn StdError>>;

fn write(path: &Path, text: &str) -> Result<(), Box<dyn StdError>> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn create_dir(dir: &Path) -> Result<(), Box<dyn StdError>> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()).into())
}

fn write_splits(out: &Path, splits: &Splits) -> Outcome {
    write_dataset(&splits.train, out.join("train.tsv"))?;
    write_dataset(&splits.val, out.join("val.tsv"))?;
    write_dataset(&splits.test, out.join("test.tsv"))?;
    Ok(())
}

fn rate(xs: impl Iterator<Item = u8>) -> f64 {
    let (mut n, mut s) = (0usize, 0usize);
    for x in xs {
        n += 1;
        s += x as usize;
    }
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

pub fn generate(args: &GenerateArgs) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            GeneratorConfig::from_toml_str(&text)?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(n) = args.impressions {
        cfg.num_impressions = n;
    }
    cfg.validate()?;
    let schema = cfg.schema()?;
    let (samples, oracle) = generate_synthetic(&cfg)?;
    let n = samples.len();
    let (n_train, n_val) = split_sizes(n, 0.8, 0.1)?;
    let splits = split_random(samples, n_train, n_val, cfg.seed)?;

    let scores: Vec<f64> = splits
        .test
        .iter()
        .map(|s| oracle.score(s))
        .collect::<Result<_, _>>()?;
    let labels: Vec<u8> = splits.test.iter().map(|s| s.label).collect();
    let oracle_auc = auc(&scores, &labels).map_or_else(|_| "NA".to_string(), |a| format!("{a:.4}"));
    let all = || splits.train.iter().chain(&splits.val).chain(&splits.test);

    let mut summary = format!(
        "impressions {n} (train {}, val {}, test {}); lambda {}; click rate {:.4}; trigger-click rate {:.4}; oracle test AUC {oracle_auc}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        cfg.lambda,
        rate(all().map(|s| s.label)),
        rate(all().map(|s| s.trigger_label)),
    );
    if cfg.lambda == 0.0 {
        summary.push_str("; trigger-independent regime");
    }
    create_dir(&args.out)?;
    schema.save(args.out.join("schema.toml"))?;
    write(&args.out.join("generator.toml"), &cfg.to_toml_string())?;
    write_splits(&args.out, &splits)?;
    write(&args.out.join("oracle.json"), &oracle.to_json_string()?)?;
    write(&args.out.join("summary.txt"), &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

pub fn mine(args: &MineArgs) -> Outcome {
    let logs = read_logs(&args.logs)?;
    let (mined, stats) = mine_triggers(&logs, args.window, args.max_behaviors)?;
    let schema = mining_schema(&logs, args.max_behaviors)?;
    let splits = split_temporal(mined, 0.8, 0.1)?;
    let aux_rate = if stats.kept == 0 {
        0.0
    } else {
        stats.aux_positive as f64 / stats.kept as f64
    };
    let summary = format!(
        "records {}; kept {}; dropped {}; aux-positive {} ({aux_rate:.4}); window {} s; train {}, val {}, test {}",
        stats.total,
        stats.kept,
        stats.dropped,
        stats.aux_positive,
        args.window,
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    create_dir(&args.out)?;
    schema.save(args.out.join("schema.toml"))?;
    write_splits(&args.out, &splits)?;
    write(&args.out.join("stats.txt"), &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

fn load_schema(data: &Path, schema: Option<&PathBuf>) -> Result<FeatureSchema, Box<dyn StdError>> {
    let path = schema.cloned().unwrap_or_else(|| data.join("schema.toml"));
    Ok(FeatureSchema::load(path)?)
}

fn load_split(
    data: &Path,
    name: &str,
    schema: &FeatureSchema,
) -> Result<Vec<EncodedSample>, Box<dyn StdError>> {
    let raw = read_dataset(data.join(format!("{name}.tsv")), schema)?;
    Ok(raw
        .iter()
        .map(|s| s.encode(schema))
        .collect::<Result<_, _>>()?)
}

fn load_optional_split(
    data: &Path,
    name: &str,
    schema: &FeatureSchema,
) -> Result<Option<Vec<EncodedSample>>, Box<dyn StdError>> {
    if data.join(format!("{name}.tsv")).exists() {
        Ok(Some(load_split(data, name, schema)?))
    } else {
        Ok(None)
    }
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig, Box<dyn StdError>> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lr: flags.lr.unwrap_or(d.lr),
        decay_rate: flags.decay.unwrap_or(d.decay_rate),
        epochs: flags.epochs.unwrap_or(d.epochs),
        batch_size: flags.batch_size.unwrap_or(d.batch_size),
        alpha: flags.alpha.unwrap_or(d.alpha),
        beta: flags.beta.unwrap_or(d.beta),
        seed: flags.seed.unwrap_or(d.seed),
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> Outcome {
    let schema = load_schema(&args.data, args.schema.as_ref())?;
    let variant: ModelVariant = args.variant.parse()?;
    let cfg = train_config(&args.train)?;
    let data = load_split(&args.data, "train", &schema)?;
    let val = load_optional_split(&args.data, "val", &schema)?;
    let mut model = build_variant(variant, &schema, &ModelHyper::default(), cfg.seed)?;
    let report = fit(&mut model, &data, val.as_deref(), &cfg)?;
    create_dir(&args.out)?;
    model.save(args.out.join("model.json"))?;
    write(
        &args.out.join("history.tsv"),
        &report.history_tsv(variant.name(), cfg.seed),
    )?;
    let last = report.history.last();
    let val_auc = last
        .and_then(|r| r.val_auc)
        .map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"));
    println!(
        "trained {variant} for {} epochs ({} steps); train loss {:.4}; val AUC {val_auc}",
        cfg.epochs,
        report.steps,
        last.map_or(f64::NAN, |r| r.train_loss)
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let schema = load_schema(&args.data, args.schema.as_ref())?;
    let model = Model::load(&args.checkpoint, Some(&schema))?;
    let data = load_split(&args.data, &args.split, &schema)?;
    let report = evaluate(&model, &data, 256)?;
    let trig = report
        .trigger_auc
        .map_or_else(String::new, |a| format!("; trigger AUC {a:.4}"));
    println!(
        "{} {} AUC {:.4} (n {}; log loss {:.4}{trig})",
        model.variant, args.split, report.auc, report.n, report.log_loss
    );
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Outcome {
    let schema = load_schema(&args.data, args.schema.as_ref())?;
    let variants: Vec<ModelVariant> = args
        .variants
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<Result<_, _>>()?;
    let cfg = train_config(&args.train)?;
    let train = load_split(&args.data, "train", &schema)?;
    let val = load_optional_split(&args.data, "val", &schema)?;
    let test = load_split(&args.data, "test", &schema)?;
    let data = AblationData {
        schema: &schema,
        train: &train,
        val: val.as_deref(),
        test: &test,
    };
    let report = run_ablation(
        &variants,
        &data,
        &ModelHyper::default(),
        &cfg,
        args.seeds,
        ablation_threads(),
    )?;
    let table = report.to_table("Test AUC");
    create_dir(&args.out)?;
    write(&args.out.join("ablation.tsv"), &report.to_tsv())?;
    write(&args.out.join("history.tsv"), &report.history_tsv())?;
    write(&args.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn gradcheck_batch(
    args: &GradcheckArgs,
) -> Result<(FeatureSchema, Vec<RawSample>), Box<dyn StdError>> {
    match &args.data {
        Some(dir) => {
            let schema = load_schema(dir, args.schema.as_ref())?;
            let raw = read_dataset(dir.join("train.tsv"), &schema)?;
            Ok((schema, raw.into_iter().take(4).collect()))
        }
        None => {
            let cfg = GeneratorConfig {
                num_users: 50,
                num_items: 60,
                num_impressions: 4,
                seed: args.seed,
                ..GeneratorConfig::default()
            };
            let (raw, _) = generate_synthetic(&cfg)?;
            Ok((cfg.schema()?, raw))
        }
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Outcome {
    let variant: ModelVariant = args.variant.parse()?;
    let (schema, raw) = gradcheck_batch(args)?;
    if raw.is_empty() {
        return Err("gradcheck needs at least one sample".into());
    }
    let enc: Vec<EncodedSample> = raw
        .iter()
        .map(|s| s.encode(&schema))
        .collect::<Result<_, _>>()?;
    let batch = pad_and_mask(&enc, &schema)?;
    let model = build_variant(variant, &schema, &ModelHyper::default(), args.seed)?;
    let d = TrainConfig::default();
    let report = grad_check(
        |tape, bound| Ok(model.loss(tape, bound, &batch, d.alpha, d.beta)?.1),
        &model.params,
        &GradCheckConfig::default(),
    )?;
    let worst = report.worst().map_or("-", |p| p.name.as_str());
    println!(
        "gradcheck {variant}: {} tensors, max relative error {:.3e} (worst {worst}), tolerance {:.0e}: {}",
        report.params.len(),
        report.max_rel_error,
        report.tolerance,
        if report.pass { "pass" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        Err(format!("gradient check failed for {variant}").into())
    }
}

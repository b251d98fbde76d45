use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use trigger_rec::data::{read_dataset, GroundTruthOracle};
use trigger_rec::features::FeatureSchema;
use trigger_rec::train::auc;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trigger-rec"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "trigger-rec {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["generate", "--out", p(dir), "--seed", "5"];
    if !extra.contains(&"--impressions") {
        args.extend(["--impressions", "400"]);
    }
    args.extend_from_slice(extra);
    stdout(&run(&args))
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (PathBuf::from(path.file_name().unwrap()), bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, &[]);
    generate(&b, &[]);
    let fa = files(&a);
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, files(&b));

    let c = tmp.path().join("c");
    run(&[
        "generate",
        "--out",
        p(&c),
        "--impressions",
        "400",
        "--seed",
        "6",
    ]);
    assert_ne!(
        fs::read(a.join("train.tsv")).unwrap(),
        fs::read(c.join("train.tsv")).unwrap()
    );
}

#[test]
fn generate_reports_splits_and_regime() {
    let tmp = TempDir::new().unwrap();
    let line = generate(&tmp.path().join("one"), &[]);
    assert!(
        line.contains("impressions 400 (train 320, val 40, test 40)"),
        "{line}"
    );
    assert!(!line.contains("trigger-independent"));
    let line = generate(&tmp.path().join("zero"), &["--lambda", "0"]);
    assert!(line.contains("lambda 0;"), "{line}");
    assert!(
        line.trim_end().ends_with("; trigger-independent regime"),
        "{line}"
    );
}

#[test]
fn oracle_auc_in_summary_matches_written_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    let line = generate(&dir, &["--impressions", "2000"]);
    let schema = FeatureSchema::load(dir.join("schema.toml")).unwrap();
    let oracle =
        GroundTruthOracle::from_json_str(&fs::read_to_string(dir.join("oracle.json")).unwrap())
            .unwrap();
    let test = read_dataset(dir.join("test.tsv"), &schema).unwrap();
    let scores: Vec<f64> = test.iter().map(|s| oracle.score(s).unwrap()).collect();
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let expected = format!("oracle test AUC {:.4}", auc(&scores, &labels).unwrap());
    assert!(line.contains(&expected), "{line} vs {expected}");
    assert_eq!(fs::read_to_string(dir.join("summary.txt")).unwrap(), line);
}

#[test]
fn generate_reads_config_and_flags_override_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("gen.toml");
    fs::write(&cfg, "num_impressions = 100\nlambda = 0.0\nseed = 2\n").unwrap();
    let line = stdout(&run(&[
        "generate",
        "--out",
        p(&tmp.path().join("a")),
        "--config",
        p(&cfg),
    ]));
    assert!(line.contains("impressions 100 "), "{line}");
    assert!(line.contains("trigger-independent"));
    let line = stdout(&run(&[
        "generate",
        "--out",
        p(&tmp.path().join("b")),
        "--config",
        p(&cfg),
        "--lambda",
        "0.5",
    ]));
    assert!(line.contains("lambda 0.5;"), "{line}");

    fs::write(&cfg, "num_impresions = 100\n").unwrap();
    let out = bin()
        .args([
            "generate",
            "--out",
            p(&tmp.path().join("c")),
            "--config",
            p(&cfg),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn mine_empty_log_reports_zero_counts() {
    let tmp = TempDir::new().unwrap();
    let logs = tmp.path().join("logs.tsv");
    fs::write(&logs, "").unwrap();
    let out = tmp.path().join("m");
    let line = stdout(&run(&["mine", "--logs", p(&logs), "--out", p(&out)]));
    assert_eq!(
        line.trim_end(),
        "records 0; kept 0; dropped 0; aux-positive 0 (0.0000); window 14400 s; train 0, val 0, test 0"
    );
    assert_eq!(fs::read_to_string(out.join("train.tsv")).unwrap(), "");
}

#[test]
fn mine_uses_default_window_boundary() {
    let tmp = TempDir::new().unwrap();
    let logs = tmp.path().join("logs.tsv");
    // user, item, category, timestamp, clicked
    let text = [
        "1\t5\t2\t1000\t1",
        "1\t7\t2\t2000\t0",  // kept, same category
        "1\t8\t3\t15400\t1", // exactly 14400 s after the click: kept, other category
        "1\t9\t3\t29801\t0", // 14401 s after the last click: dropped
        "2\t4\t1\t500\t0",   // no earlier click: dropped
    ]
    .join("\n");
    fs::write(&logs, text).unwrap();
    let out = tmp.path().join("m");
    let line = stdout(&run(&["mine", "--logs", p(&logs), "--out", p(&out)]));
    assert!(
        line.starts_with("records 5; kept 2; dropped 3; aux-positive 1 (0.5000); window 14400 s;"),
        "{line}"
    );

    let line = stdout(&run(&[
        "mine",
        "--logs",
        p(&logs),
        "--out",
        p(&out),
        "--window",
        "20000",
    ]));
    assert!(line.starts_with("records 5; kept 3; dropped 2;"), "{line}");
}

#[test]
fn mine_rejects_unsorted_logs() {
    let tmp = TempDir::new().unwrap();
    let logs = tmp.path().join("logs.tsv");
    fs::write(&logs, "1\t5\t2\t1000\t1\n1\t7\t2\t900\t0\n").unwrap();
    let out = bin()
        .args([
            "mine",
            "--logs",
            p(&logs),
            "--out",
            p(&tmp.path().join("m")),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not sorted"));
}

#[test]
fn train_then_eval_prints_four_decimal_auc() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, &[]);
    let ckpt = tmp.path().join("m");
    let line = stdout(&run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--variant",
        "din_2ta",
        "--epochs",
        "2",
        "--batch-size",
        "64",
    ]));
    assert!(
        line.starts_with("trained din_2ta for 2 epochs (10 steps)"),
        "{line}"
    );
    let history = fs::read_to_string(ckpt.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 3, "{history}");

    let model = ckpt.join("model.json");
    let line = stdout(&run(&[
        "eval",
        "--checkpoint",
        p(&model),
        "--data",
        p(&data),
    ]));
    let rest = line.strip_prefix("din_2ta test AUC ").expect(&line);
    let value = rest.split_whitespace().next().unwrap();
    assert_eq!(value.len(), 6, "{line}");
    let a: f64 = value.parse().unwrap();
    assert!((0.0..=1.0).contains(&a));
    assert!(rest.contains("(n 40;"), "{line}");

    let line = stdout(&run(&[
        "eval",
        "--checkpoint",
        p(&model),
        "--data",
        p(&data),
        "--split",
        "val",
    ]));
    assert!(line.starts_with("din_2ta val AUC "), "{line}");
}

#[test]
fn train_rerun_writes_identical_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, &[]);
    for name in ["a", "b"] {
        run(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&tmp.path().join(name)),
            "--epochs",
            "1",
            "--seed",
            "3",
        ]);
    }
    assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
}

#[test]
fn eval_rejects_checkpoint_from_other_schema() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, &[]);
    let ckpt = tmp.path().join("m");
    run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--variant",
        "din",
        "--epochs",
        "1",
    ]);

    let logs = tmp.path().join("logs.tsv");
    fs::write(&logs, "1\t5\t2\t1000\t1\n1\t7\t2\t2000\t0\n").unwrap();
    let mined = tmp.path().join("mined");
    run(&["mine", "--logs", p(&logs), "--out", p(&mined)]);
    let out = bin()
        .args([
            "eval",
            "--checkpoint",
            p(&ckpt.join("model.json")),
            "--data",
            p(&mined),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    generate(&data, &[]);
    let out = tmp.path().join("a");
    let table = stdout(&run(&[
        "ablate",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--variants",
        "din,din_2ta,dihn",
        "--seeds",
        "2",
        "--epochs",
        "1",
    ]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[0].contains("Test AUC"));
    for (line, label) in lines[1..].iter().zip(["DIN ", "DIN+2TA ", "DIHN "]) {
        assert!(line.starts_with(label), "{line}");
        assert!(line.contains(" ± "), "{line}");
    }
    assert_eq!(fs::read_to_string(out.join("table.txt")).unwrap(), table);
    // header plus 3 variants x 2 seeds
    assert_eq!(
        fs::read_to_string(out.join("ablation.tsv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn gradcheck_passes_on_fresh_batch() {
    let line = stdout(&run(&["gradcheck", "--variant", "dihn"]));
    assert!(line.starts_with("gradcheck dihn: "), "{line}");
    assert!(line.trim_end().ends_with(": pass"), "{line}");
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [
        &["train", "--bogus"][..],
        &["frobnicate"][..],
        &["generate"][..],
        &["gradcheck", "--variant", "nope"][..],
    ] {
        let out = bin().args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

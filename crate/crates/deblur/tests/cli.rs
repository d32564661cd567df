mod support;

use std::fs;
use std::path::Path;

use deblur::commands::{LAST_CKPT, TRAIN_LOG, TRAIN_LOG_HEADER};
use deblur::config::ECHO_FILE;
use deblur::report::{self, HARD_NEGATIVE_TXT, HARD_POSITIVE_TXT, MINE_JSON, REPORT_CSV, SUMMARY_JSON};
use deblur::{checkpoint, ppm, CliError};
use deblur_core::ModelConfig;
use support::{code, exec, quantized_image, s, synthetic_tree, write_ppm, zero_residual_params};

fn toy_train_args<'a>(config: &'a str, data: &'a str, out: &'a str) -> Vec<String> {
    [
        "train",
        "--config",
        config,
        "--out",
        out,
        "--override",
        &format!("data.train_root={data}"),
        "--override",
        "schedule.total_iters=4",
        "--override",
        "schedule.ladder=[[0, 16, 2]]",
        "--override",
        "train.log_every=1",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

fn toy_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/toy.toml")
        .display()
        .to_string()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn train_toy_writes_checkpoint_log_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_tree(&dir.path().join("data"), 3, 16, 1);
    let out = dir.path().join("run");
    let mut a = toy_train_args(&toy_config(), s(&data), s(&out));
    a.extend(["--override".into(), "loss.lambda_freq=0".into(), "--seed".into(), "11".into()]);
    assert_eq!(code(&strs(&a)), 0);

    let (cfg, params) = checkpoint::load(&out.join(LAST_CKPT)).unwrap();
    assert_eq!(cfg, ModelConfig::toy());
    assert!(params.iter().all(|(_, t)| t.is_finite()));

    let log = fs::read_to_string(out.join(TRAIN_LOG)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(TRAIN_LOG_HEADER));
    let iters: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, [1, 2, 3, 4]);

    let echo = deblur::config::load(Some(&out.join(ECHO_FILE)), &[], None).unwrap();
    assert_eq!(echo.loss.lambda_freq, 0.0);
    assert_eq!(echo.train.seed, 11);
    assert_eq!(echo.run.command, "train");
    assert_eq!(echo.schedule.total_iters, 4);
}

#[test]
fn train_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_tree(&dir.path().join("data"), 3, 16, 2);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let a = toy_train_args(&toy_config(), s(&data), s(&out));
        assert_eq!(code(&strs(&a)), 0);
        let log = fs::read_to_string(out.join(TRAIN_LOG)).unwrap();
        // Drop the wall-clock column.
        let rows: Vec<String> = log.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect();
        (rows, fs::read(out.join(LAST_CKPT)).unwrap())
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn train_with_split_writes_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_tree(&dir.path().join("data"), 3, 16, 3);
    let split = dir.path().join("val.txt");
    fs::write(&split, "p2\n").unwrap();
    let out = dir.path().join("run");
    let mut a = toy_train_args(&toy_config(), s(&data), s(&out));
    a.extend(["--override".into(), format!("data.split_file={}", split.display())]);
    let msg = exec(&strs(&a)).unwrap();
    assert!(msg.contains("on 2 pairs") && msg.contains("validation: 1 pairs"), "{msg}");
    assert!(out.join("best.ckpt").is_file());
    let log = fs::read_to_string(out.join(TRAIN_LOG)).unwrap();
    let last = log.lines().last().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    assert!(cols[7].parse::<f64>().is_ok() && cols[8].parse::<f64>().is_ok(), "{last}");
}

#[test]
fn train_missing_dataset_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_dataset");
    let out = dir.path().join("run");
    let a = toy_train_args(&toy_config(), s(&missing), s(&out));
    let err = exec(&strs(&a)).unwrap_err();
    assert!(matches!(err, CliError::Data(_)));
    assert!(err.to_string().contains("no_such_dataset"), "{err}");
    assert_eq!(code(&strs(&a)), 2);
}

#[test]
fn train_numeric_blow_up_exits_3_and_keeps_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_tree(&dir.path().join("data"), 2, 16, 4);
    let out = dir.path().join("run");
    let mut a = toy_train_args(&toy_config(), s(&data), s(&out));
    a.extend(
        ["schedule.lr_start=1e30", "schedule.lr_end=1e30", "schedule.total_iters=8", "train.checkpoint_every=1"]
            .iter()
            .flat_map(|o| ["--override".to_string(), o.to_string()]),
    );
    let err = exec(&strs(&a)).unwrap_err();
    assert!(matches!(err, CliError::Numeric(_)), "{err}");
    assert_eq!(code(&strs(&a)), 3);
    let (_, params) = checkpoint::load(&out.join(LAST_CKPT)).unwrap();
    assert!(params.iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn config_and_usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["train", "--override", "model.nope=1", "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--out", s(&out)]), 1, "train_root unset");
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["infer", "--input", "x"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

fn write_zero_checkpoint(path: &Path) {
    let cfg = ModelConfig::toy();
    checkpoint::save(path, &cfg, &zero_residual_params(&cfg, 5)).unwrap();
}

#[test]
fn infer_with_zero_residual_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("zero.ckpt");
    write_zero_checkpoint(&ckpt);
    let input = dir.path().join("in");
    write_ppm(&input.join("a.ppm"), &quantized_image(16, 24, 1));
    write_ppm(&input.join("b odd.ppm"), &quantized_image(13, 10, 2));
    let out = dir.path().join("out");
    let msg = exec(&["infer", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out)]).unwrap();
    assert!(msg.contains("2 image"), "{msg}");
    for name in ["a.ppm", "b odd.ppm"] {
        assert_eq!(fs::read(input.join(name)).unwrap(), fs::read(out.join(name)).unwrap(), "{name}");
    }
    assert!(out.join(ECHO_FILE).is_file());
}

#[test]
fn infer_handles_sizes_off_the_multiple_of_eight() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = ModelConfig::toy();
    checkpoint::save(&ckpt, &cfg, &deblur_core::model::build(&cfg, 3).unwrap()).unwrap();
    let input = dir.path().join("in");
    write_ppm(&input.join("x.ppm"), &quantized_image(11, 21, 4));
    let out = dir.path().join("out");
    assert_eq!(code(&["infer", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out)]), 0);
    assert_eq!(ppm::read_dims(&out.join("x.ppm")).unwrap(), (11, 21));
}

#[test]
fn infer_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("zero.ckpt");
    write_zero_checkpoint(&ckpt);
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["infer", "--checkpoint", s(&ckpt), "--input", s(&empty), "--out", s(&out)]), 2);
    let missing = dir.path().join("nope.ckpt");
    assert_eq!(code(&["infer", "--checkpoint", s(&missing), "--input", s(&empty), "--out", s(&out)]), 2);
    fs::write(&missing, b"garbage").unwrap();
    assert_eq!(code(&["infer", "--checkpoint", s(&missing), "--input", s(&empty), "--out", s(&out)]), 2);
    write_ppm(&empty.join("a.ppm"), &quantized_image(8, 8, 0));
    assert_eq!(code(&["infer", "--checkpoint", s(&ckpt), "--input", s(&empty), "--out", s(&empty)]), 1);
}

fn image_dir(root: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    for i in 0..n {
        write_ppm(&root.join(format!("img{i}.ppm")), &quantized_image(16, 16, seed + i as u64));
    }
    root.to_path_buf()
}

#[test]
fn eval_identical_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let a = image_dir(&dir.path().join("a"), 3, 10);
    let out = dir.path().join("out");
    let cfg = deblur::config::EvalSection::default();
    let r = deblur::commands::cmd_eval(&a, &a, &out, &cfg).unwrap();
    assert_eq!(r.records.len(), 3);
    for rec in &r.records {
        assert_eq!(rec.psnr, f64::INFINITY);
        assert_eq!((rec.ssim, rec.mae, rec.delta_e), (1.0, 0.0, 0.0));
    }
    assert_eq!(r.aggregates.identical, 3);
    let rows = report::read_metric_csv(&out.join(REPORT_CSV)).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.psnr == f64::INFINITY && r.ssim == 1.0));
    let summary = fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(summary.contains("| 3 | inf | 1.0000 | 0.0000 | NA | 0.0000 |"), "{summary}");
}

#[test]
fn eval_summary_is_the_mean_of_its_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = image_dir(&dir.path().join("a"), 4, 20);
    let b = image_dir(&dir.path().join("b"), 4, 40);
    // One identical pair so the PSNR mean has to skip the sentinel.
    fs::copy(a.join("img0.ppm"), b.join("img0.ppm")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["eval", "--restored", s(&b), "--gt", s(&a), "--out", s(&out)]), 0);
    let rows = report::read_metric_csv(&out.join(REPORT_CSV)).unwrap();
    assert_eq!(rows.len(), 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_JSON)).unwrap()).unwrap();
    let mean = |f: fn(&deblur_core::metrics::MetricRecord) -> f64| rows.iter().map(f).sum::<f64>() / 4.0;
    let close = |key: &str, v: f64| {
        let got = summary[key].as_f64().unwrap();
        assert!((got - v).abs() <= 1e-12 * v.abs().max(1.0), "{key}: {got} vs {v}");
    };
    close("ssim", mean(|r| r.ssim));
    close("mae", mean(|r| r.mae));
    close("deltaE00", mean(|r| r.delta_e));
    let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
    assert_eq!(finite.len(), 3);
    close("psnr", finite.iter().sum::<f64>() / 3.0);
    assert_eq!(summary["lpips"], "NA");
    assert_eq!(summary["identical"], 1);
    let jsonl = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 4);
}

#[test]
fn eval_is_deterministic_under_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = image_dir(&dir.path().join("a"), 5, 50);
    let b = image_dir(&dir.path().join("b"), 5, 60);
    let cfg = deblur::config::EvalSection::default();
    let run = |threads: usize, name: &str| {
        let out = dir.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| deblur::commands::cmd_eval(&b, &a, &out, &cfg)).unwrap();
        fs::read(out.join(REPORT_CSV)).unwrap()
    };
    assert_eq!(run(1, "one"), run(4, "four"));
}

#[test]
fn eval_unmatched_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = image_dir(&dir.path().join("a"), 2, 0);
    let b = image_dir(&dir.path().join("b"), 3, 0);
    let out = dir.path().join("out");
    let err = exec(&["eval", "--restored", s(&a), "--gt", s(&b), "--out", s(&out)]).unwrap_err();
    assert!(err.to_string().contains("img2.ppm"), "{err}");
    assert_eq!(err.exit_code(), 2);
    write_ppm(&a.join("img2.ppm"), &quantized_image(8, 8, 0));
    assert_eq!(code(&["eval", "--restored", s(&a), "--gt", s(&b), "--out", s(&out)]), 2);
}

fn report_with(dir: &Path, psnrs: &[&str]) -> std::path::PathBuf {
    let path = dir.join("report.csv");
    let mut text = String::from("id,psnr,ssim,mae,lpips,deltaE00,label\n");
    for (i, p) in psnrs.iter().enumerate() {
        text += &format!("im{i},{p},0.9,0.01,NA,1.5,neither\n");
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn mine_counts_table_one_shape() {
    let dir = tempfile::tempdir().unwrap();
    let rep = report_with(dir.path(), &["15", "25", "35"]);
    let out = dir.path().join("mine");
    let m = deblur::commands::cmd_mine(&rep, &out, &Default::default()).unwrap();
    assert_eq!((m.hard_positive, m.hard_negative, m.neither, m.total), (1, 1, 1, 3));
    assert_eq!(fs::read_to_string(out.join(HARD_POSITIVE_TXT)).unwrap(), "im2\n");
    assert_eq!(fs::read_to_string(out.join(HARD_NEGATIVE_TXT)).unwrap(), "im0\n");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(MINE_JSON)).unwrap()).unwrap();
    assert_eq!(json["total"], 3);
    assert!(fs::read_to_string(out.join("mine.md")).unwrap().contains("| 1 | 1 | 3 |"));
}

#[test]
fn mine_empty_report_and_band_override() {
    let dir = tempfile::tempdir().unwrap();
    let rep = report_with(dir.path(), &[]);
    let out = dir.path().join("m");
    let m = deblur::commands::cmd_mine(&rep, &out, &Default::default()).unwrap();
    assert_eq!((m.hard_positive, m.hard_negative, m.neither, m.total), (0, 0, 0, 0));
    assert_eq!(fs::read_to_string(out.join(HARD_POSITIVE_TXT)).unwrap(), "");

    let rep = report_with(dir.path(), &["15", "25", "35", "inf", "20", "30"]);
    let msg = exec(&["mine", "--report", s(&rep), "--out", s(&out), "--override", "eval.hi_db=24"]).unwrap();
    assert!(msg.contains("hard positives 4") && msg.contains("total 6"), "{msg}");
}

#[test]
fn mine_partitions_every_report() {
    use proptest::prelude::*;
    let dir = tempfile::tempdir().unwrap();
    proptest!(ProptestConfig::with_cases(32), |(psnrs in proptest::collection::vec(0.0f64..60.0, 0..20))| {
        let cells: Vec<String> = psnrs.iter().map(|p| format!("{p}")).collect();
        let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        let rep = report_with(dir.path(), &refs);
        let m = deblur::commands::cmd_mine(&rep, &dir.path().join("m"), &Default::default()).unwrap();
        prop_assert_eq!(m.hard_positive + m.hard_negative + m.neither, m.total);
        prop_assert_eq!(m.total, psnrs.len());
    });
}

#[test]
fn mine_malformed_reports_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let bad = dir.path().join("bad.csv");
    for text in ["id,ssim\na,1\n", "id,psnr\na,abc\n", "id,psnr\na,NaN\n"] {
        fs::write(&bad, text).unwrap();
        assert_eq!(code(&["mine", "--report", s(&bad), "--out", s(&out)]), 2, "{text}");
    }
    assert_eq!(code(&["mine", "--report", s(&dir.path().join("none.csv")), "--out", s(&out)]), 2);
}

#[test]
fn arch_baseline_against_itself_is_all_zero() {
    let c = deblur::commands::cmd_arch("baseline", &ModelConfig::baseline(), "baseline", &ModelConfig::baseline(), None).unwrap();
    assert_eq!((c.param_delta_pct, c.block_delta_pct, c.size_delta_pct), (0.0, 0.0, 0.0));
    assert_eq!(c.fp32_size_ratio, 1.0);
}

#[test]
fn arch_baseline_against_improved() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("arch");
    let msg = exec(&["arch", "--a", "baseline", "--b", "improved", "--out", s(&out)]).unwrap();
    assert!(msg.contains("| Parameters |"), "{msg}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("arch.json")).unwrap()).unwrap();
    let f = |k: &str| json[k].as_f64().unwrap();
    assert!((f("param_delta_pct") + 18.4).abs() <= 1.0, "{}", f("param_delta_pct"));
    assert!((f("block_delta_pct") + 30.0).abs() <= 2.0, "{}", f("block_delta_pct"));
    assert!((f("fp32_size_ratio") - 0.816).abs() <= 0.01);
    let heads_a: Vec<u64> = json["a"]["stages"].as_array().unwrap().iter().map(|s| s[3].as_u64().unwrap()).collect();
    let heads_b: Vec<u64> = json["b"]["stages"].as_array().unwrap().iter().map(|s| s[3].as_u64().unwrap()).collect();
    assert!(heads_a.iter().zip(&heads_b).all(|(a, b)| 2 * a == *b));
    assert!(out.join("arch.md").is_file());
    assert_eq!(code(&["arch", "--a", "baseline", "--b", "/no/such.toml"]), 1);
}

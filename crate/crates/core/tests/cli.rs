//! End-to-end runs of the `diffsr` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffsr::denoiser::DenoiserConfig;
use diffsr::io::{parse_loss_log, report_from_toml, Checkpoint, DataConfig, RunConfig};
use diffsr::schedule::ScheduleParams;
use diffsr::trainer::{TrainConfig, Trainer};

fn diffsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffsr")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_sched() -> ScheduleParams {
    ScheduleParams { steps: 3, beta_start: 1e-3, beta_end: 0.05, ..ScheduleParams::default() }
}

/// An untrained checkpoint; sampling only needs shapes and a schedule.
fn checkpoint(dir: &Path, max_scale: f64, lr_size: usize) -> PathBuf {
    let model = DenoiserConfig { max_scale, ..DenoiserConfig::audit() };
    let tr = Trainer::<f32>::new(&model, &tiny_sched(), &TrainConfig::default(), lr_size).unwrap();
    let path = dir.join(format!("m{max_scale}.ckpt"));
    Checkpoint::from_trainer(&tr).save(&path).unwrap();
    path
}

fn synth(dir: &Path, count: usize, size: usize) {
    let out = diffsr(&["synth", "--dir", s(dir), "--count", &count.to_string(), "--size", &size.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn png_size(path: &Path) -> (u32, u32) {
    image::image_dimensions(path).unwrap()
}

fn train_config(dir: &Path, data: &Path, out: &Path) -> PathBuf {
    let cfg = RunConfig {
        model: DenoiserConfig { max_scale: 3.0, ..DenoiserConfig::audit() },
        schedule: tiny_sched(),
        train: TrainConfig { milestone_steps: 2, post_milestone_steps: 2, checkpoint_every: 2, seed: 3, ..TrainConfig::default() },
        data: DataConfig { train_dir: data.to_path_buf(), lr_size: 8, out_dir: out.to_path_buf() },
        ..RunConfig::default()
    };
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn sample_shapes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(dir.path(), 8.0, 16);
    synth(&dir.path().join("lr"), 1, 16);
    let input = dir.path().join("lr/shapes-000.png");
    let out = dir.path().join("x8.png");
    let run = diffsr(&["sample", "--checkpoint", s(&ckpt), "--input", s(&input), "--scale", "8", "--output", s(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "128x128");
    assert_eq!(png_size(&out), (128, 128));

    let far = dir.path().join("x10.7.png");
    let run = diffsr(&["sample", "--checkpoint", s(&ckpt), "--input", s(&input), "--scale", "10.7", "--seed", "4", "--output", s(&far)]);
    assert!(run.status.success());
    assert_eq!(png_size(&far), (171, 171));

    let again = dir.path().join("again.png");
    diffsr(&["sample", "--checkpoint", s(&ckpt), "--input", s(&input), "--scale", "10.7", "--seed", "4", "--output", s(&again)]);
    assert_eq!(std::fs::read(&far).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn sample_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(dir.path(), 4.0, 16);
    synth(&dir.path().join("lr"), 1, 16);
    let input = dir.path().join("lr/shapes-000.png");
    let out = dir.path().join("o.png");
    let code = |args: &[&str]| diffsr(args).status.code();
    assert_eq!(code(&["sample", "--checkpoint", s(&ckpt), "--input", s(&input), "--scale", "1", "--output", s(&out)]), Some(2));
    assert_eq!(code(&["sample", "--checkpoint", s(&ckpt), "--input", s(&input), "--scale", "0.5", "--output", s(&out)]), Some(2));
    let missing = dir.path().join("none.ckpt");
    assert_eq!(code(&["sample", "--checkpoint", s(&missing), "--input", s(&input), "--scale", "2", "--output", s(&out)]), Some(4));
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&["sample", "--checkpoint", s(&junk), "--input", s(&input), "--scale", "2", "--output", s(&out)]), Some(4));
    let no_image = dir.path().join("none.png");
    assert_eq!(code(&["sample", "--checkpoint", s(&ckpt), "--input", s(&no_image), "--scale", "2", "--output", s(&out)]), Some(3));
    assert!(!out.exists());
}

#[test]
fn train_writes_log_and_checkpoints_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 24);
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cfg = train_config(dir.path(), &data, &out);
        let res = diffsr(&["train", "--config", s(&cfg)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let text = std::fs::read_to_string(out.join("loss.tsv")).unwrap();
        let records = parse_loss_log(&text).unwrap();
        assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(out.join("step-00000002.ckpt").exists() && out.join("step-00000004.ckpt").exists());
        let ck = Checkpoint::load(&out.join("final.ckpt")).unwrap();
        assert_eq!(ck.meta.step, 4);
        ck.load_model().unwrap();
        logs.push(text);
    }
    assert_eq!(logs[0], logs[1]);

    // resuming from the midpoint rewrites the same second half
    let out = dir.path().join("c");
    let cfg = train_config(dir.path(), &data, &out);
    std::fs::create_dir_all(&out).unwrap();
    let half: String = logs[0].lines().take(4).map(|l| format!("{l}\n")).collect();
    std::fs::write(out.join("loss.tsv"), half).unwrap();
    let mid = dir.path().join("a/step-00000002.ckpt");
    let res = diffsr(&["train", "--config", s(&cfg), "--resume", s(&mid)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(std::fs::read_to_string(out.join("loss.tsv")).unwrap(), logs[0]);
}

#[test]
fn train_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = train_config(dir.path(), &dir.path().join("missing"), &out);
    assert_eq!(diffsr(&["train", "--config", s(&cfg)]).status.code(), Some(3));
    assert!(!out.join("final.ckpt").exists());

    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("[model]", "[model]\nwidth = 3", 1);
    std::fs::write(&bad, text).unwrap();
    assert_eq!(diffsr(&["train", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(diffsr(&["train", "--config", s(&dir.path().join("nope.toml"))]).status.code(), Some(2));
}

#[test]
fn eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(dir.path(), 4.0, 8);
    let data = dir.path().join("hr");
    synth(&data, 4, 32);
    let report = dir.path().join("report.toml");
    let run = diffsr(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--scales", "2,4", "--seed", "1", "--output", s(&report)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let r = report_from_toml(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!((r.records.len(), r.aggregates.len()), (8, 2));
    for agg in &r.aggregates {
        let group: Vec<_> = r.records.iter().filter(|x| x.scale == agg.scale).collect();
        assert_eq!(group.len(), 4);
        let mean = group.iter().map(|x| x.psnr).sum::<f64>() / 4.0;
        assert!((agg.psnr - mean).abs() < 1e-9);
        let mean = group.iter().map(|x| x.consistency).sum::<f64>() / 4.0;
        assert!((agg.consistency - mean).abs() < 1e-9);
    }

    let empty = diffsr(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--scales", "--output", s(&report)]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn init_config_writes_defaults_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    assert!(diffsr(&["init-config", "--output", s(&path)]).status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("format_version = 1"));
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
    assert_eq!(diffsr(&["init-config", "--output", s(&path)]).status.code(), Some(2));
}

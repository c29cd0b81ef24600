use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use promptfuse::audio::AudioFrontendConfig;
use promptfuse::encoder::EncoderConfig;
use promptfuse::synthetic::{write_dataset, SyntheticKind, SyntheticSpec};
use promptfuse::train::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptfuse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mmob_manifest.jsonl")
}

fn small_dataset(dir: &Path) -> PathBuf {
    let spec = SyntheticSpec {
        train_per_class: 2,
        test_per_class: 1,
        frames: 2,
        image_size: 16,
        audio_seconds: 0.1,
        sample_rate: 8000,
        ..SyntheticSpec::new(SyntheticKind::AudioSeparable, 3)
    };
    write_dataset(dir, &spec).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = TrainConfig {
        frames_per_video: 2,
        epochs: 2,
        encoder: EncoderConfig {
            width: 16,
            layers: 2,
            heads: 2,
            patch_size: 8,
            image_size: 16,
            audio_channels: vec![4],
            ..EncoderConfig::default()
        },
        audio: AudioFrontendConfig {
            clip_seconds: 0.1,
            ..AudioFrontendConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.prompt.text_tokens = 2;
    cfg.prompt.video_tokens = 2;
    cfg.prompt.text_depth = 2;
    cfg.prompt.video_depth = 2;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn validate_manifest_prints_counts() {
    let out = run(&["validate-manifest", "--manifest", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("malicious: 305"), "{text}");
    assert!(text.contains("benign: 830"), "{text}");
    assert!(text.contains("total: 1135"), "{text}");
}

#[test]
fn stub_paths_fail_the_media_check() {
    let out = run(&["validate-manifest", "--manifest", fixture().to_str().unwrap(), "--check-media"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn exit_codes_separate_io_from_validation() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = run(&["validate-manifest", "--manifest", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"v1\", \"label\": \"malicious\", \"frames_dir\": \"a\", \"audio\": \"a.wav\"}\nnot json\n").unwrap();
    let out = run(&["validate-manifest", "--manifest", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let dup = dir.path().join("dup.jsonl");
    let line = "{\"id\": \"v1\", \"label\": \"benign\", \"frames_dir\": \"a\", \"audio\": \"a.wav\"}\n";
    fs::write(&dup, line.repeat(2)).unwrap();
    let out = run(&["validate-manifest", "--manifest", dup.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("v1"));

    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn split_and_fewshot_write_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split.jsonl");
    let out = run(&[
        "split",
        "--manifest",
        fixture().to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    // round(305 * 0.2) + round(830 * 0.2)
    assert!(stdout(&out).contains("test: 227"), "{}", stdout(&out));
    let text = fs::read_to_string(&split).unwrap();
    assert_eq!(text.lines().count(), 1135);

    let few = dir.path().join("few.jsonl");
    let out = run(&[
        "fewshot",
        "--manifest",
        split.to_str().unwrap(),
        "--out",
        few.to_str().unwrap(),
        "--k",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("total: 8"));

    let out = run(&[
        "fewshot",
        "--manifest",
        split.to_str().unwrap(),
        "--out",
        few.to_str().unwrap(),
        "--k",
        "5000",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn spectrogram_dumps_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let wav = manifest.parent().unwrap().join("train_benign_0000/audio.wav");
    let csv = dir.path().join("spec.csv");
    let out = run(&["spectrogram", "--audio", wav.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 513);
    // 5 s at 44.1 kHz, hop 512: floor(220500 / 512) + 1.
    assert_eq!(text.lines().next().unwrap().split(',').count(), 431);

    let garbage = dir.path().join("noise.wav");
    fs::write(&garbage, b"not a wav").unwrap();
    let out = run(&["spectrogram", "--audio", garbage.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let config = small_config(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,split,loss,accuracy,trainable_params,fingerprint"));
    // epochs 0..=3, train and test each.
    assert_eq!(lines.count(), 8);

    let ckpt = run_dir.join("checkpoint.pfck");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let last_test = metrics.lines().filter(|l| l.contains(",test,")).next_back().unwrap();
    assert_eq!(stdout(&out).lines().nth(1), Some(last_test));

    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--k",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--lr",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let config = small_config(dir.path());
    let table = dir.path().join("modality.csv");
    let out = run(&[
        "ablate",
        "--axis",
        "modality",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "1",
        "--video-off",
        "frozen",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 5, "{text}");
    assert!(text.lines().next().unwrap().ends_with("accuracy,loss,trainable_params"));

    let out = run(&[
        "ablate",
        "--axis",
        "depth",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    // Depth 12 on a 2-layer encoder is rejected up front.
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_and_fails_on_tight_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let report = dir.path().join("grad.json");
    let args = |tol: &str| {
        vec![
            "gradcheck".to_string(),
            "--config".into(),
            config.to_str().unwrap().into(),
            "--width".into(),
            "8".into(),
            "--layers".into(),
            "1".into(),
            "--text-depth".into(),
            "1".into(),
            "--video-depth".into(),
            "1".into(),
            "--tolerance".into(),
            tol.into(),
            "--out".into(),
            report.to_str().unwrap().into(),
        ]
    };
    let out = bin().args(args("1e-3")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(json["max_relative_error"].as_f64().unwrap() < 1e-3);

    let out = bin().args(args("1e-300")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

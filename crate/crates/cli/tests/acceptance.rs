//! Acceptance suite. Runs every primary criterion at its stated tolerance
//! and prints one PASS or FAIL line each. Exits non-zero if any fail.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- spectrogram`.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use promptfuse::audio::{log_spectrogram, AudioFrontendConfig, SpectrogramConfig, Waveform};
use promptfuse::dataset::{few_shot_sample, load_manifest, DatasetSplit, FewShotSpec, Label, ManifestEntry};
use promptfuse::encoder::EncoderConfig;
use promptfuse::fusion::{contrastive_loss, fuse, temporal_pool, SimilarityMatrix};
use promptfuse::synthetic::{write_dataset, SyntheticKind, SyntheticSpec};
use promptfuse::train::trainer::{build_model, evaluate_samples, prepare_data, train_prepared};
use promptfuse::train::{gradient_check, AblationGrid, TrainConfig};

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(name: &str, elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed < budget, || {
        format!("{name} took {:.0} s, budget {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64())
    })
}

fn synthetic(dir: &Path, spec: &SyntheticSpec) -> Vec<ManifestEntry> {
    let manifest = write_dataset(dir, spec).expect("synthetic dataset");
    load_manifest(&manifest).expect("synthetic manifest loads")
}

fn freeze_invariance() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        train_per_class: 4,
        test_per_class: 0,
        frames: 4,
        ..SyntheticSpec::new(SyntheticKind::AudioSeparable, 21)
    };
    let entries = synthetic(dir.path(), &spec);
    let cfg = TrainConfig {
        frames_per_video: 4,
        seed: 21,
        ..TrainConfig::default()
    };
    check(cfg.epochs == 20, || "default epochs changed".into())?;
    let model = build_model(&cfg).map_err(|e| e.to_string())?;
    let before = model.frozen_hash();
    let initial = model.trainable_vector();
    let data = prepare_data(&cfg, &entries, &model).map_err(|e| e.to_string())?;
    let run = train_prepared(&cfg, model, &data).map_err(|e| e.to_string())?;
    let after = run.model.frozen_hash();
    check(after == before, || "frozen parameter hash changed".into())?;
    check(run.model.trainable_vector() != initial, || "trainable parameters never moved".into())?;
    within_budget("freeze run", start.elapsed(), Duration::from_secs(120))?;
    let hex: String = before[..6].iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!("20 epochs, frozen hash {hex}… unchanged"))
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let report = gradient_check(&TrainConfig::default(), 1e-3).map_err(|e| e.to_string())?;
    check(report.max_relative_error < 1e-3, || {
        format!("max relative error {:.3e} at {}", report.max_relative_error, report.worst_param)
    })?;
    check(report.params.iter().all(|p| p.relative_error.is_finite()), || "non-finite error".into())?;
    within_budget("gradient check", start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "max relative error {:.2e} ({}) over {} parameters",
        report.max_relative_error, report.worst_param, report.checked
    ))
}

fn audio_base(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        frames_per_video: 4,
        seed,
        eval_each_epoch: false,
        encoder: EncoderConfig {
            width: 32,
            layers: 2,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.prompt.text_tokens = 4;
    cfg.prompt.video_tokens = 4;
    cfg.prompt.text_depth = 2;
    cfg.prompt.video_depth = 2;
    cfg
}

fn final_test_accuracy(cfg: &TrainConfig, entries: &[ManifestEntry]) -> Result<f64, String> {
    let model = build_model(cfg).map_err(|e| e.to_string())?;
    let data = prepare_data(cfg, entries, &model).map_err(|e| e.to_string())?;
    if data.train.len() != 200 || data.test.len() != 100 {
        return Err(format!("split sizes {} / {}", data.train.len(), data.test.len()));
    }
    let run = train_prepared(cfg, model, &data).map_err(|e| e.to_string())?;
    run.metrics
        .iter()
        .rev()
        .find(|m| m.split == promptfuse::dataset::Split::Test)
        .map(|m| m.accuracy)
        .ok_or_else(|| "no test record".into())
}

fn audio_modality_benefit() -> Verdict {
    let start = Instant::now();
    let seeds = [0u64, 1, 2];
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for seed in seeds {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let entries = synthetic(dir.path(), &SyntheticSpec::new(SyntheticKind::AudioSeparable, seed));
        let cfg = audio_base(seed);
        on.push(final_test_accuracy(&cfg, &entries)?);
        let mut no_audio = cfg.clone();
        no_audio.modalities.audio = false;
        off.push(final_test_accuracy(&no_audio, &entries)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mean_on, mean_off) = (mean(&on), mean(&off));
    let detail = format!("audio on {mean_on:.1}% {on:?}, audio off {mean_off:.1}% {off:?}");
    check(mean_on >= 95.0 && mean_off <= 65.0, || detail.clone())?;
    within_budget("audio benefit", start.elapsed(), Duration::from_secs(600))?;
    Ok(detail)
}

fn depth_base(seed: u64, depth: usize) -> TrainConfig {
    let width = 32;
    let mut cfg = TrainConfig {
        frames_per_video: 2,
        seed,
        eval_each_epoch: false,
        encoder: EncoderConfig {
            width,
            layers: 12,
            // Unit-gain frozen layers; see the decisions ledger.
            init_std: 0.18,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.modalities.audio = false;
    cfg.prompt.text_tokens = 4;
    cfg.prompt.video_tokens = 4;
    cfg.prompt.text_depth = depth;
    cfg.prompt.video_depth = depth;
    cfg
}

fn depth_capacity_trend() -> Verdict {
    let tokens = 4;
    let width = 32;
    let grid = AblationGrid::depth();
    let mut counts = Vec::new();
    for point in &grid.points {
        let cfg = point.apply(&depth_base(0, 12));
        let d = cfg.prompt.text_depth;
        check(cfg.prompt.video_depth == d, || "depth point differs per branch".into())?;
        let model = build_model(&cfg).map_err(|e| e.to_string())?;
        let expected = 2 * d * tokens * width + 1;
        let got = model.trainable_param_count();
        check(got == expected, || format!("depth {d}: {got} trainable, closed form {expected}"))?;
        counts.push((d, got));
    }
    counts.sort();
    let depths: Vec<usize> = counts.iter().map(|c| c.0).collect();
    check(depths == [2, 4, 8, 12], || format!("depth points {depths:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        train_per_class: 16,
        test_per_class: 0,
        frames: 2,
        audio_seconds: 0.05,
        ..SyntheticSpec::new(SyntheticKind::VisuallySeparable, 7)
    };
    let entries = synthetic(dir.path(), &spec);
    let mut losses = [Vec::new(), Vec::new()];
    for seed in 0..5 {
        for (slot, depth) in [(0, 12), (1, 2)] {
            let cfg = depth_base(seed, depth);
            let model = build_model(&cfg).map_err(|e| e.to_string())?;
            let data = prepare_data(&cfg, &entries, &model).map_err(|e| e.to_string())?;
            let run = train_prepared(&cfg, model, &data).map_err(|e| e.to_string())?;
            let (loss, _) = evaluate_samples(&run.model, &data.train, cfg.batch_size).map_err(|e| e.to_string())?;
            losses[slot].push(loss);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (deep, shallow) = (mean(&losses[0]), mean(&losses[1]));
    let detail = format!(
        "mean final train loss depth 12 {deep:.4} vs depth 2 {shallow:.4}; counts {:?}",
        counts.iter().map(|c| c.1).collect::<Vec<_>>()
    );
    check(deep <= shallow, || detail.clone())?;
    Ok(detail)
}

fn pooling_fusion_algebra() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst_pool = 0.0f64;
    for _ in 0..1000 {
        let m = Array2::from_shape_fn((16, 512), |_| rng.random_range(-1.0..1.0));
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut rng);
        let a = temporal_pool(&m).map_err(|e| e.to_string())?;
        let b = temporal_pool(&m.select(Axis(0), &order)).map_err(|e| e.to_string())?;
        worst_pool = worst_pool.max((&a - &b).iter().fold(0.0, |w, d| w.max(d.abs())));
    }
    check(worst_pool <= 1e-6, || format!("pooling differs by {worst_pool:e}"))?;

    let mut worst_norm = 0.0f64;
    for i in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let v = Array1::from_shape_fn(512, |_| scale * rng.random_range(-1.0..1.0));
        let a = Array1::from_shape_fn(512, |_| rng.random_range(-1.0..1.0));
        let f = fuse(&v, &a, i % 2 == 0).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((f.dot(&f).sqrt() - 1.0).abs());
    }
    check(worst_norm <= 1e-6, || format!("fused norm off by {worst_norm:e}"))?;

    let sim = SimilarityMatrix {
        logits: Array2::zeros((4, 2)),
        logit_scale: 1.0,
    };
    let loss = contrastive_loss(&sim, &[0, 1, 1, 0]).map_err(|e| e.to_string())?;
    let loss_err = (loss - LN_2).abs();
    check(loss_err <= 1e-9, || format!("zero-logit loss {loss}"))?;
    Ok(format!(
        "pool max diff {worst_pool:.1e}, norm max err {worst_norm:.1e}, |loss - ln 2| {loss_err:.1e}"
    ))
}

/// Windowed power of one frame by the textbook O(N²) DFT.
fn dft_power(frame: &[f64], window: &[f64], bins: usize) -> Vec<f64> {
    let n = frame.len();
    (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (x, w)) in frame.iter().zip(window).enumerate() {
                let phase = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                re += x * w * phase.cos();
                im += x * w * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

fn spectrogram_oracle() -> Verdict {
    let cfg = SpectrogramConfig::default();
    let rate = 44_100;
    let n = 44_100;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 440.0 * i as f64 / rate as f64).sin()).collect();
    let spec = log_spectrogram(&Waveform::new(sine.clone(), rate), &cfg);
    check(spec.time_frames() == 87, || format!("{} frames for 1 s", spec.time_frames()))?;

    // Periodic Hann, independent of the library's window helper.
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / cfg.n_fft as f64).cos()))
        .collect();
    let half = cfg.n_fft / 2;
    let floor = cfg.log_floor.ln();
    let mut interior = 0;
    let mut worst = 0.0f64;
    for t in 0..spec.time_frames() {
        let centre = t * cfg.hop;
        if centre < half || centre + half > n {
            continue;
        }
        interior += 1;
        let power = dft_power(&sine[centre - half..centre + half], &window, cfg.freq_bins());
        let lib_peak = argmax(spec.values.column(t).iter().copied());
        let oracle_peak = argmax(power.iter().copied());
        check(lib_peak == 10 && oracle_peak == 10, || {
            format!("frame {t}: peak bin {lib_peak}, oracle {oracle_peak}")
        })?;
        for (f, p) in power.iter().enumerate() {
            let expect = p.max(cfg.log_floor).ln();
            if expect > floor + 1.0 {
                worst = worst.max((spec.values[[f, t]] - expect).abs());
            }
        }
    }
    check(worst <= 1e-6, || format!("log power differs from DFT oracle by {worst:e}"))?;

    let silent = log_spectrogram(&Waveform::new(vec![0.0; n], rate), &cfg);
    check(silent.values.iter().all(|&v| v == floor), || "zero signal left the floor".into())?;

    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..1000 {
        let len = rng.random_range(0..60_000usize);
        let expected = len / cfg.hop + 1;
        let wave = Waveform::new(vec![0.0; len], rate);
        let got = log_spectrogram(&wave, &cfg).time_frames();
        check(got == expected && cfg.time_frames(len) == expected, || {
            format!("length {len}: {got} frames, expected {expected}")
        })?;
    }
    Ok(format!(
        "peak bin 10 on {interior} interior frames, DFT max diff {worst:.1e}, floor exact, 1000 lengths"
    ))
}

fn few_shot_sampler() -> Verdict {
    let entry = |i: usize, label| ManifestEntry {
        id: format!("v{i:03}"),
        label,
        frames_dir: PathBuf::from(format!("v{i:03}")),
        audio_path: PathBuf::from(format!("v{i:03}.wav")),
        split: None,
    };
    let pool: Vec<ManifestEntry> = (0..40)
        .map(|i| entry(i, Label::Malicious))
        .chain((40..100).map(|i| entry(i, Label::Benign)))
        .collect();
    let train = DatasetSplit::new(pool);
    for k in [1usize, 2, 4, 8, 16] {
        for seed in 0..200 {
            let picked = few_shot_sample(&train, FewShotSpec { k, seed }).map_err(|e| e.to_string())?;
            for label in Label::ALL {
                let n = picked.class_counts[&label];
                check(n == k, || format!("k={k} seed={seed}: {n} {label}"))?;
            }
            let mut ids: Vec<&str> = picked.entries.iter().map(|e| e.id.as_str()).collect();
            check(picked.entries.iter().all(|e| train.entries.contains(e)), || {
                format!("k={k} seed={seed}: entry outside train")
            })?;
            ids.sort();
            ids.dedup();
            check(ids.len() == 2 * k, || format!("k={k} seed={seed}: duplicate pick"))?;
        }
    }

    let ten = DatasetSplit::new((0..10).map(|i| entry(i, Label::Malicious)).chain((10..20).map(|i| entry(i, Label::Benign))).collect());
    let mut hits = [0usize; 10];
    for seed in 0..1000 {
        let picked = few_shot_sample(&ten, FewShotSpec { k: 1, seed }).map_err(|e| e.to_string())?;
        for e in picked.entries.iter().filter(|e| e.label == Label::Malicious) {
            hits[e.id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    let worst = hits.iter().map(|&h| (h as f64 / 1000.0 - 0.1).abs()).fold(0.0, f64::max);
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - 100.0).powi(2) / 100.0).sum();
    check(worst <= 0.03, || format!("frequency off by {worst:.3} ({hits:?})"))?;
    // 99th percentile of chi-square with 9 degrees of freedom.
    check(chi2 < 21.666, || format!("chi-square {chi2:.2} ({hits:?})"))?;
    Ok(format!("k in 1,2,4,8,16 exact and subset; chi-square {chi2:.2}, max |freq - 0.1| {worst:.3}"))
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptfuse"))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        train_per_class: 3,
        test_per_class: 1,
        frames: 2,
        image_size: 16,
        audio_seconds: 0.2,
        ..SyntheticSpec::new(SyntheticKind::AudioSeparable, 5)
    };
    let manifest = write_dataset(dir.path(), &spec).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig {
        frames_per_video: 2,
        epochs: 4,
        batch_size: 4,
        seed: 17,
        encoder: EncoderConfig {
            width: 16,
            layers: 2,
            heads: 2,
            patch_size: 8,
            image_size: 16,
            ..EncoderConfig::default()
        },
        audio: AudioFrontendConfig {
            clip_seconds: 0.5,
            ..AudioFrontendConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.prompt.text_depth = 2;
    cfg.prompt.video_depth = 2;
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_vec(&cfg).unwrap()).map_err(|e| e.to_string())?;

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let status = cli()
            .args(["train", "--manifest"])
            .arg(&manifest)
            .arg("--out")
            .arg(&out_dir)
            .arg("--config")
            .arg(&config)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let ckpt = fs::read(out_dir.join("checkpoint.pfck")).map_err(|e| e.to_string())?;
        let csv = fs::read(out_dir.join("metrics.csv")).map_err(|e| e.to_string())?;
        outputs.push((ckpt, csv));
    }
    check(outputs[0].0 == outputs[1].0, || "checkpoints differ".into())?;
    check(outputs[0].1 == outputs[1].1, || "metrics CSVs differ".into())?;
    Ok(format!(
        "checkpoint {} bytes and metrics {} bytes identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn mmob_schema() -> Verdict {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mmob_manifest.jsonl");
    let out = cli()
        .args(["validate-manifest", "--manifest"])
        .arg(&fixture)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    let want = ["malicious: 305", "benign: 830", "total: 1135"];
    check(lines == want, || format!("reported {lines:?}"))?;
    Ok(lines.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("freeze_invariance", freeze_invariance),
        ("gradient_correctness", gradient_correctness),
        ("audio_modality_benefit", audio_modality_benefit),
        ("depth_capacity_trend", depth_capacity_trend),
        ("pooling_fusion_algebra", pooling_fusion_algebra),
        ("spectrogram_oracle", spectrogram_oracle),
        ("few_shot_sampler", few_shot_sampler),
        ("determinism", determinism),
        ("mmob_schema", mmob_schema),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

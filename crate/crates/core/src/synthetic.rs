//! On-disk synthetic datasets for tests and demos.
//!
//! Each sample is a directory of PNG frames plus a mono PCM16 WAV, listed in
//! a manifest with split tags, exactly like prepared real data.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::{encode_wav_pcm16, Waveform};
use crate::dataset::{write_manifest, Label, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Frames are class-independent noise; audio is a class-specific tone.
    AudioSeparable,
    /// Frames carry a class-specific colour bias; audio is class-independent noise.
    VisuallySeparable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub image_size: u32,
    pub audio_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 100 + 50 samples per class, i.e. 200 train / 100 test.
    pub fn new(kind: SyntheticKind, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            train_per_class: 100,
            test_per_class: 50,
            frames: 4,
            image_size: 32,
            audio_seconds: 1.0,
            sample_rate: 44_100,
            seed,
        }
    }
}

/// Tone frequency for each class in the audio-separable set.
pub fn class_tone_hz(label: Label) -> f64 {
    match label {
        Label::Malicious => 3000.0,
        Label::Benign => 440.0,
    }
}

fn frame(r: &mut rng::Rng, size: u32, kind: SyntheticKind, label: Label) -> image::RgbImage {
    let bias: [f64; 3] = match (kind, label) {
        (SyntheticKind::AudioSeparable, _) => [0.0; 3],
        (SyntheticKind::VisuallySeparable, Label::Malicious) => [0.35, -0.2, -0.2],
        (SyntheticKind::VisuallySeparable, Label::Benign) => [-0.2, -0.2, 0.35],
    };
    image::RgbImage::from_fn(size, size, |_, _| {
        let px = |c: usize, r: &mut rng::Rng| {
            let v = 0.5 + bias[c] + r.random_range(-0.3..0.3);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0, r), px(1, r), px(2, r)])
    })
}

fn audio(r: &mut rng::Rng, spec: &SyntheticSpec, label: Label) -> Waveform {
    let n = (spec.audio_seconds * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;
    let samples = match spec.kind {
        SyntheticKind::AudioSeparable => {
            let f = class_tone_hz(label) * r.random_range(0.97..1.03);
            let amp = r.random_range(0.3..0.6);
            let phase = r.random_range(0.0..TAU);
            (0..n)
                .map(|i| amp * (TAU * f * i as f64 / rate + phase).sin() + r.random_range(-0.01..0.01))
                .collect()
        }
        SyntheticKind::VisuallySeparable => (0..n).map(|_| r.random_range(-0.2..0.2)).collect(),
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes the dataset under `dir` and returns the manifest path.
/// The output is a pure function of `spec`.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    if spec.frames == 0 || spec.image_size == 0 {
        return Err(Error::Validation("synthetic spec needs frames and pixels".into()));
    }
    let mut r = rng::stream(spec.seed, rng::purpose::SYNTHETIC);
    let mut entries = Vec::new();
    for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
        for i in 0..per_class {
            for label in Label::ALL {
                let id = format!("{split}_{}_{i:04}", label.class_name().replace(' ', "_"));
                let sample_dir = dir.join(&id);
                fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
                for t in 0..spec.frames {
                    let path = sample_dir.join(format!("frame_{t:04}.png"));
                    frame(&mut r, spec.image_size, spec.kind, label)
                        .save(&path)
                        .map_err(|e| Error::Image {
                            path: path.clone(),
                            message: e.to_string(),
                        })?;
                }
                let wav_path = sample_dir.join("audio.wav");
                let wav = encode_wav_pcm16(&audio(&mut r, spec, label));
                fs::write(&wav_path, wav).map_err(|e| Error::io(&wav_path, e))?;
                entries.push(ManifestEntry {
                    id,
                    label,
                    frames_dir: sample_dir,
                    audio_path: wav_path,
                    split: Some(split),
                });
            }
        }
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}

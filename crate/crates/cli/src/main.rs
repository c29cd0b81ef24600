use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use promptfuse::audio::AudioFrontendConfig;
use promptfuse::checkpoint;
use promptfuse::dataset::{
    class_distribution, few_shot_sample, load_manifest, make_splits, resolve_splits,
    write_manifest, FewShotSpec, Label, ManifestEntry, Split,
};
use promptfuse::train::ablation::PromptMode;
use promptfuse::train::frames::list_frames;
use promptfuse::train::trainer::checkpoint_meta;
use promptfuse::train::{
    ablate, ablation_csv, evaluate, gradient_check, metrics_csv, train, AblationAxis,
    AblationGrid, TrainConfig, METRICS_HEADER,
};

/// Prompt-tuned multimodal video classifier.
#[derive(Debug, Parser)]
#[command(name = "promptfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a manifest and print per-class counts.
    ValidateManifest {
        #[arg(long)]
        manifest: PathBuf,
        /// Also check that every frame directory has images and every WAV decodes.
        #[arg(long)]
        check_media: bool,
    },
    /// Write a stratified train/test split as a tagged manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Log-power spectrogram of a WAV file as CSV (one row per frequency bin).
    Spectrogram {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train prompts and projection; writes checkpoint.pfck and metrics.csv into --out.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Few-shot training with k samples per class.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one ablation axis and write a CSV table.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// What an unlearned video branch means on the modality axis.
        #[arg(long, value_enum, default_value = "removed")]
        video_off: VideoOff,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Draw k training entries per class into a new manifest.
    Fewshot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Fail when the max relative error reaches this value.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum VideoOff {
    Removed,
    Frozen,
}

/// Overrides on top of `--config` (or the built-in defaults).
#[derive(Debug, Args)]
struct TrainOpts {
    /// JSON training config; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frames sampled per video.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    text_tokens: Option<usize>,
    #[arg(long)]
    video_tokens: Option<usize>,
    #[arg(long)]
    text_depth: Option<usize>,
    #[arg(long)]
    video_depth: Option<usize>,
    /// Transformer layers in the text and vision encoders.
    #[arg(long)]
    layers: Option<usize>,
    /// Transformer width in the text and vision encoders.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    no_audio: bool,
    #[arg(long)]
    no_video_prompts: bool,
    #[arg(long)]
    no_text_prompts: bool,
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| promptfuse::Error::Io { path: path.clone(), source: e })?;
                serde_json::from_str(&text)
                    .map_err(|e| promptfuse::Error::Validation(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.frames_per_video, self.frames);
        set(&mut cfg.encoder.layers, self.layers);
        set(&mut cfg.encoder.width, self.width);
        set(&mut cfg.prompt.text_tokens, self.text_tokens);
        set(&mut cfg.prompt.video_tokens, self.video_tokens);
        set(&mut cfg.prompt.text_depth, self.text_depth);
        set(&mut cfg.prompt.video_depth, self.video_depth);
        if self.no_audio {
            cfg.modalities.audio = false;
        }
        if self.no_video_prompts {
            cfg.prompt.enabled_video = false;
        }
        if self.no_text_prompts {
            cfg.prompt.enabled_text = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| promptfuse::Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, contents)
        .map_err(|e| promptfuse::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn print_counts(entries: &[ManifestEntry]) {
    let counts = class_distribution(entries);
    for label in Label::ALL {
        println!("{}: {}", label, counts[&label]);
    }
    println!("total: {}", entries.len());
}

fn check_media(entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        if list_frames(&e.frames_dir)?.is_empty() {
            bail!(promptfuse::Error::Data(format!("{}: no frame images", e.id)));
        }
        let bytes = fs::read(&e.audio_path)
            .map_err(|err| promptfuse::Error::Io { path: e.audio_path.clone(), source: err })?;
        promptfuse::audio::decode_wav(&bytes).with_context(|| format!("entry {}", e.id))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ValidateManifest { manifest, check_media: media } => {
            let entries = load_manifest(&manifest)?;
            if media {
                check_media(&entries)?;
            }
            print_counts(&entries);
        }
        Command::Split { manifest, out, seed, test_fraction } => {
            let entries = load_manifest(&manifest)?;
            let (train, test) = make_splits(&entries, test_fraction, seed)?;
            let mut all = train.entries;
            all.extend(test.entries);
            write_manifest(&all, &out)?;
            println!("train: {}", all.iter().filter(|e| e.split == Some(Split::Train)).count());
            println!("test: {}", all.iter().filter(|e| e.split == Some(Split::Test)).count());
        }
        Command::Spectrogram { audio, out } => {
            let frontend = AudioFrontendConfig::default();
            let spec = frontend.spectrogram_from_file(&audio)?;
            write_file(&out, spec.to_csv())?;
            println!("{} x {}", spec.freq_bins(), spec.time_frames());
        }
        Command::Train { manifest, out, k, opts } => {
            let mut cfg = opts.resolve()?;
            if let Some(k) = k {
                cfg.few_shot = Some(FewShotSpec { k, seed: cfg.seed });
            }
            let entries = load_manifest(&manifest)?;
            let run = train(&cfg, &entries)?;
            let bytes = checkpoint::to_bytes(&run.model, Some(&checkpoint_meta(&cfg)));
            write_file(&out.join("checkpoint.pfck"), bytes)?;
            write_file(&out.join("metrics.csv"), metrics_csv(&run.metrics))?;
            if let Some(last) = run.metrics.last() {
                println!("{METRICS_HEADER}\n{}", last.csv_line());
            }
        }
        Command::Eval { checkpoint: ckpt, manifest, split, out } => {
            let entries = load_manifest(&manifest)?;
            let record = evaluate(&ckpt, &entries, split)?;
            let csv = metrics_csv(std::slice::from_ref(&record));
            match out {
                Some(path) => write_file(&path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Ablate { axis, manifest, out, video_off, opts } => {
            let cfg = opts.resolve()?;
            let mode = match video_off {
                VideoOff::Removed => PromptMode::Removed,
                VideoOff::Frozen => PromptMode::Frozen,
            };
            let grid = AblationGrid::standard(axis, mode);
            let entries = load_manifest(&manifest)?;
            let rows = ablate(&grid, &cfg, &entries)?;
            let csv = ablation_csv(axis, &rows);
            write_file(&out, &csv)?;
            print!("{csv}");
        }
        Command::Fewshot { manifest, out, k, seed, test_fraction } => {
            let entries = load_manifest(&manifest)?;
            let (train, _) = resolve_splits(&entries, test_fraction, seed)?;
            let subset = few_shot_sample(&train, FewShotSpec { k, seed })?;
            write_manifest(&subset.entries, &out)?;
            print_counts(&subset.entries);
        }
        Command::Gradcheck { epsilon, tolerance, out, opts } => {
            let cfg = opts.resolve()?;
            let report = gradient_check(&cfg, epsilon)?;
            if let Some(path) = out {
                write_file(&path, serde_json::to_vec_pretty(&report)?)?;
            }
            println!(
                "max relative error {:.3e} ({}) over {} parameters",
                report.max_relative_error, report.worst_param, report.checked
            );
            if !(report.max_relative_error < tolerance) {
                bail!(promptfuse::Error::Validation(format!(
                    "gradient check failed: {:.3e} >= {tolerance:e}",
                    report.max_relative_error
                )));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<promptfuse::Error>().is_some_and(|e| e.is_io())
    });
    if io {
        2
    } else {
        1
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("PROMPTFUSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

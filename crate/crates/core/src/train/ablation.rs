//! One-axis sweeps over prompt and modality settings.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{few_shot_sample, resolve_splits, FewShotSpec, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::train::config::TrainConfig;
use crate::train::data::{prepare_samples, PreparedSample};
use crate::train::trainer::{build_model, evaluate_samples, train_prepared, MetricsRecord, PreparedData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Modality,
    Tokens,
    Depth,
    FewShot,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Modality => "modality",
            AblationAxis::Tokens => "tokens",
            AblationAxis::Depth => "depth",
            AblationAxis::FewShot => "fewshot",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(AblationAxis::Modality),
            "tokens" => Ok(AblationAxis::Tokens),
            "depth" => Ok(AblationAxis::Depth),
            "fewshot" => Ok(AblationAxis::FewShot),
            other => Err(Error::Validation(format!(
                "unknown axis {other:?}, expected modality|tokens|depth|fewshot"
            ))),
        }
    }
}

/// How a branch's prompts take part in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Learned,
    /// Present in the sequence, never updated.
    Frozen,
    /// Not in the sequence at all.
    Removed,
}

/// Changes one sweep point makes to the base config. `None` keeps the base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Override {
    pub audio: Option<bool>,
    pub text_prompts: Option<PromptMode>,
    pub video_prompts: Option<PromptMode>,
    pub text_tokens: Option<usize>,
    pub video_tokens: Option<usize>,
    pub text_depth: Option<usize>,
    pub video_depth: Option<usize>,
    pub k: Option<usize>,
}

impl Override {
    fn touches_only(&self, axis: AblationAxis) -> bool {
        let modality = self.audio.is_some() || self.text_prompts.is_some() || self.video_prompts.is_some();
        let tokens = self.text_tokens.is_some() || self.video_tokens.is_some();
        let depth = self.text_depth.is_some() || self.video_depth.is_some();
        let fewshot = self.k.is_some();
        match axis {
            AblationAxis::Modality => !tokens && !depth && !fewshot,
            AblationAxis::Tokens => !modality && !depth && !fewshot,
            AblationAxis::Depth => !modality && !tokens && !fewshot,
            AblationAxis::FewShot => !modality && !tokens && !depth,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        if let Some(a) = self.audio {
            cfg.modalities.audio = a;
        }
        let mode = |m: PromptMode, enabled: &mut bool, frozen: &mut bool| {
            *enabled = m != PromptMode::Removed;
            *frozen = m == PromptMode::Frozen;
        };
        if let Some(m) = self.text_prompts {
            mode(m, &mut cfg.prompt.enabled_text, &mut cfg.prompt.freeze_text);
        }
        if let Some(m) = self.video_prompts {
            mode(m, &mut cfg.prompt.enabled_video, &mut cfg.prompt.freeze_video);
        }
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut cfg.prompt.text_tokens, self.text_tokens);
        set(&mut cfg.prompt.video_tokens, self.video_tokens);
        set(&mut cfg.prompt.text_depth, self.text_depth);
        set(&mut cfg.prompt.video_depth, self.video_depth);
        if let Some(k) = self.k {
            cfg.few_shot = Some(FewShotSpec { k, seed: base.seed });
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub points: Vec<Override>,
}

impl AblationGrid {
    /// The four modality rows: everything learned; audio off; audio off with
    /// no video prompt learning; audio on with no video prompt learning.
    /// `video_off` picks whether unlearned video prompts are removed or frozen.
    pub fn modality(video_off: PromptMode) -> Self {
        let row = |audio, video| Override {
            audio: Some(audio),
            text_prompts: Some(PromptMode::Learned),
            video_prompts: Some(video),
            ..Default::default()
        };
        AblationGrid {
            axis: AblationAxis::Modality,
            points: vec![
                row(true, PromptMode::Learned),
                row(false, PromptMode::Learned),
                row(false, video_off),
                row(true, video_off),
            ],
        }
    }

    /// Text fixed at 10 tokens, video 10, 8, 6, 4.
    pub fn tokens() -> Self {
        AblationGrid {
            axis: AblationAxis::Tokens,
            points: [10, 8, 6, 4]
                .into_iter()
                .map(|v| Override {
                    text_tokens: Some(10),
                    video_tokens: Some(v),
                    ..Default::default()
                })
                .collect(),
        }
    }

    /// Both branches at depth 12, 8, 4, 2. Needs a 12-layer encoder.
    pub fn depth() -> Self {
        AblationGrid {
            axis: AblationAxis::Depth,
            points: [12, 8, 4, 2]
                .into_iter()
                .map(|d| Override {
                    text_depth: Some(d),
                    video_depth: Some(d),
                    ..Default::default()
                })
                .collect(),
        }
    }

    pub fn few_shot() -> Self {
        AblationGrid {
            axis: AblationAxis::FewShot,
            points: [0, 1, 2, 4, 8, 16]
                .into_iter()
                .map(|k| Override {
                    k: Some(k),
                    ..Default::default()
                })
                .collect(),
        }
    }

    pub fn standard(axis: AblationAxis, video_off: PromptMode) -> Self {
        match axis {
            AblationAxis::Modality => Self::modality(video_off),
            AblationAxis::Tokens => Self::tokens(),
            AblationAxis::Depth => Self::depth(),
            AblationAxis::FewShot => Self::few_shot(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("ablation grid has no points".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.touches_only(self.axis)) {
            return Err(Error::Validation(format!(
                "point {i} overrides settings outside the {} axis",
                self.axis
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub point: Override,
    pub config: TrainConfig,
    /// Final test-split metrics.
    pub metrics: MetricsRecord,
}

/// Trains and evaluates every grid point with the base seed. Media is
/// decoded once; the frozen backbone, and so the audio embedding, is the
/// same for every point.
pub fn ablate(grid: &AblationGrid, base: &TrainConfig, entries: &[ManifestEntry]) -> Result<Vec<AblationRow>> {
    grid.validate()?;
    let configs: Vec<TrainConfig> = grid.points.iter().map(|p| p.apply(base)).collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let (train, test) = resolve_splits(entries, base.test_fraction, base.seed)?;
    if test.is_empty() {
        return Err(Error::Data("ablation needs a non-empty test split".into()));
    }
    let with_audio = configs.iter().any(|c| c.modalities.audio);
    let backbone = build_model(base)?;
    let frames = base.frames_per_video;
    let train_samples = prepare_samples(&train.entries, &backbone, frames, with_audio)?;
    let test_samples = prepare_samples(&test.entries, &backbone, frames, with_audio)?;
    drop(backbone);
    let by_id: HashMap<&str, &PreparedSample> =
        train_samples.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut rows = Vec::with_capacity(configs.len());
    for (point, cfg) in grid.points.iter().zip(configs) {
        let model = build_model(&cfg)?;
        let metrics = match cfg.few_shot {
            Some(spec) if spec.k == 0 => {
                let (loss, accuracy) = evaluate_samples(&model, &test_samples, cfg.batch_size)?;
                MetricsRecord {
                    epoch: 0,
                    split: Split::Test,
                    loss,
                    accuracy,
                    trainable_params: model.trainable_param_count(),
                    fingerprint: cfg.fingerprint(),
                }
            }
            _ => {
                let train_subset = match cfg.few_shot {
                    Some(spec) => few_shot_sample(&train, spec)?
                        .entries
                        .iter()
                        .map(|e| by_id[e.id.as_str()].clone())
                        .collect(),
                    None => train_samples.clone(),
                };
                let data = PreparedData {
                    train: train_subset,
                    test: test_samples.clone(),
                };
                let run_cfg = TrainConfig {
                    eval_each_epoch: false,
                    ..cfg.clone()
                };
                let run = train_prepared(&run_cfg, model, &data)?;
                let mut last = run
                    .metrics
                    .into_iter()
                    .rev()
                    .find(|m| m.split == Split::Test)
                    .expect("test split evaluated");
                last.fingerprint = cfg.fingerprint();
                last
            }
        };
        rows.push(AblationRow {
            point: *point,
            config: cfg,
            metrics,
        });
    }
    Ok(rows)
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// CSV shaped like the matching results table, one line per point.
pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let head = match axis {
        AblationAxis::Modality => "text,video,audio,learn_text,learn_video,learn_audio",
        AblationAxis::Tokens => "text_tokens,video_tokens",
        AblationAxis::Depth => "text_depth,video_depth",
        AblationAxis::FewShot => "k",
    };
    let _ = writeln!(out, "{head},accuracy,loss,trainable_params");
    for row in rows {
        let c = &row.config;
        let p = &c.prompt;
        let lead = match axis {
            AblationAxis::Modality => format!(
                "yes,yes,{},{},{},{}",
                mark(c.modalities.audio),
                mark(p.enabled_text && !p.freeze_text),
                mark(p.enabled_video && !p.freeze_video),
                mark(c.modalities.audio),
            ),
            AblationAxis::Tokens => format!("{},{}", p.text_tokens, p.video_tokens),
            AblationAxis::Depth => format!("{},{}", p.text_depth, p.video_depth),
            AblationAxis::FewShot => c.few_shot.map_or(String::new(), |f| f.k.to_string()),
        };
        let m = &row.metrics;
        let _ = writeln!(out, "{lead},{:.2},{:.6},{}", m.accuracy, m.loss, m.trainable_params);
    }
    out
}

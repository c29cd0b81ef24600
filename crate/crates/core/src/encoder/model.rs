use std::collections::BTreeSet;

use ndarray::{Array1, Array4, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::Spectrogram;
use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::audio_net::AudioEncoder;
use crate::encoder::config::ModelConfig;
use crate::encoder::params::{ParamSlices, ParamSlicesMut};
use crate::encoder::prompt::PromptBank;
use crate::encoder::text::TextEncoder;
use crate::encoder::tokenizer::TokenizedText;
use crate::encoder::vision::VisionEncoder;
use crate::error::{Error, Result};
use crate::fusion::{FusionNorm, ProjectionLayer, LOG_SCALE_INIT};
use crate::rng;

mod stream {
    pub const BACKBONE: u64 = 100;
    pub const TEXT_PROMPTS: u64 = 101;
    pub const VIDEO_PROMPTS: u64 = 102;
    pub const PROJECTION: u64 = 103;
}

pub const LOGIT_SCALE_NAME: &str = "logit_scale";

/// The full classifier: three frozen encoders plus the trainable pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub text: TextEncoder,
    pub vision: VisionEncoder,
    pub audio: AudioEncoder,
    pub text_prompts: Option<PromptBank>,
    pub video_prompts: Option<PromptBank>,
    pub projection: Option<ProjectionLayer>,
    pub log_logit_scale: Array1<f64>,
    pub fusion: FusionNorm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub len: usize,
    pub trainable: bool,
}

/// Exhaustive frozen/trainable split of parameter names.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParameterPartition {
    pub frozen: BTreeSet<String>,
    pub trainable: BTreeSet<String>,
}

/// Leaves for the trainable pieces of one forward pass.
pub(crate) struct PromptLeaves {
    pub text: Vec<NodeId>,
    pub video: Vec<NodeId>,
}

impl Model {
    /// Builds a model from its config. Each component draws from its own
    /// seeded stream, so toggling prompts or audio leaves the backbone
    /// bit-identical.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let mut backbone = rng::stream(config.seed, stream::BACKBONE);
        let text = TextEncoder::init(&mut backbone, enc);
        let vision = VisionEncoder::init(&mut backbone, enc);
        let audio = AudioEncoder::init(
            &mut backbone,
            enc,
            config.audio.spectrogram_shape(),
            config.audio.spectrogram.log_floor,
        );
        let p = &config.prompt;
        let text_prompts = p.enabled_text.then(|| {
            PromptBank::init(
                &mut rng::stream(config.seed, stream::TEXT_PROMPTS),
                p.text_depth,
                p.text_tokens,
                enc.width,
            )
        });
        let video_prompts = p.enabled_video.then(|| {
            PromptBank::init(
                &mut rng::stream(config.seed, stream::VIDEO_PROMPTS),
                p.video_depth,
                p.video_tokens,
                enc.width,
            )
        });
        let projection = config
            .audio_enabled
            .then(|| ProjectionLayer::init(&mut rng::stream(config.seed, stream::PROJECTION)));
        Ok(Model {
            config,
            text,
            vision,
            audio,
            text_prompts,
            video_prompts,
            projection,
            log_logit_scale: Array1::from_elem(1, LOG_SCALE_INIT as f32 as f64),
            fusion: FusionNorm::default(),
        })
    }

    pub fn audio_enabled(&self) -> bool {
        self.projection.is_some()
    }

    pub fn logit_scale(&self) -> f64 {
        crate::fusion::logit_scale_from_log(self.log_logit_scale[0])
    }

    pub(crate) fn text_prompts_trainable(&self) -> bool {
        self.text_prompts.is_some() && !self.config.prompt.freeze_text
    }

    pub(crate) fn video_prompts_trainable(&self) -> bool {
        self.video_prompts.is_some() && !self.config.prompt.freeze_video
    }

    /// Every parameter with its trainability, in declaration order.
    pub fn param_slices(&self) -> Vec<(String, &[f64], bool)> {
        let mut frozen: ParamSlices = Vec::new();
        self.text.params("text", &mut frozen);
        self.vision.params("vision", &mut frozen);
        self.audio.params("audio", &mut frozen);
        let mut out: Vec<_> = frozen.into_iter().map(|(n, s)| (n, s, false)).collect();
        if let Some(bank) = &self.text_prompts {
            let t = self.text_prompts_trainable();
            for (i, m) in bank.layers.iter().enumerate() {
                out.push((format!("prompts.text.{i}"), m.as_slice().unwrap(), t));
            }
        }
        if let Some(bank) = &self.video_prompts {
            let t = self.video_prompts_trainable();
            for (i, m) in bank.layers.iter().enumerate() {
                out.push((format!("prompts.video.{i}"), m.as_slice().unwrap(), t));
            }
        }
        if let Some(p) = &self.projection {
            out.push(("projection.weight".into(), p.weights.as_slice().unwrap(), true));
            out.push(("projection.bias".into(), p.bias.as_slice().unwrap(), true));
        }
        out.push((LOGIT_SCALE_NAME.into(), self.log_logit_scale.as_slice().unwrap(), true));
        out
    }

    /// Mutable counterpart of [`Model::param_slices`], same order.
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64], bool)> {
        let text_t = self.text_prompts_trainable();
        let video_t = self.video_prompts_trainable();
        let mut frozen: ParamSlicesMut = Vec::new();
        self.text.params_mut("text", &mut frozen);
        self.vision.params_mut("vision", &mut frozen);
        self.audio.params_mut("audio", &mut frozen);
        let mut out: Vec<_> = frozen.into_iter().map(|(n, s)| (n, s, false)).collect();
        if let Some(bank) = &mut self.text_prompts {
            for (i, m) in bank.layers.iter_mut().enumerate() {
                out.push((format!("prompts.text.{i}"), m.as_slice_mut().unwrap(), text_t));
            }
        }
        if let Some(bank) = &mut self.video_prompts {
            for (i, m) in bank.layers.iter_mut().enumerate() {
                out.push((format!("prompts.video.{i}"), m.as_slice_mut().unwrap(), video_t));
            }
        }
        if let Some(p) = &mut self.projection {
            out.push(("projection.weight".into(), p.weights.as_slice_mut().unwrap(), true));
            out.push(("projection.bias".into(), p.bias.as_slice_mut().unwrap(), true));
        }
        out.push((
            LOGIT_SCALE_NAME.into(),
            self.log_logit_scale.as_slice_mut().unwrap(),
            true,
        ));
        out
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        self.param_slices()
            .into_iter()
            .map(|(name, s, trainable)| ParamInfo {
                name,
                len: s.len(),
                trainable,
            })
            .collect()
    }

    pub fn partition(&self) -> ParameterPartition {
        partition_parameters(self)
    }

    pub fn trainable_param_count(&self) -> usize {
        self.param_slices()
            .iter()
            .filter(|(_, _, t)| *t)
            .map(|(_, s, _)| s.len())
            .sum()
    }

    /// SHA-256 over the little-endian `f64` bytes of every frozen parameter,
    /// in declaration order.
    pub fn frozen_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (_, slice, trainable) in self.param_slices() {
            if trainable {
                continue;
            }
            for v in slice {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Flat copy of the trainable parameters, declaration order.
    pub fn trainable_vector(&self) -> Vec<f64> {
        self.param_slices()
            .into_iter()
            .filter(|(_, _, t)| *t)
            .flat_map(|(_, s, _)| s.iter().copied())
            .collect()
    }

    pub fn class_tokens(&self, class_names: &[&str]) -> Result<Vec<TokenizedText>> {
        if class_names.is_empty() {
            return Err(Error::Validation("at least one class name required".into()));
        }
        class_names.iter().map(|n| self.text.tokenize(n)).collect()
    }

    pub(crate) fn prompt_leaves(&self, g: &mut Graph<'_>, track: bool) -> PromptLeaves {
        PromptLeaves {
            text: self
                .text_prompts
                .as_ref()
                .map(|b| b.leaves(g, track && self.text_prompts_trainable()))
                .unwrap_or_default(),
            video: self
                .video_prompts
                .as_ref()
                .map(|b| b.leaves(g, track && self.video_prompts_trainable()))
                .unwrap_or_default(),
        }
    }

    /// Per-frame features `[T × 512]` on a graph, one row per frame.
    pub(crate) fn frames_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        frames: &Array4<f64>,
        video_prompts: &[NodeId],
    ) -> Result<NodeId> {
        if frames.len_of(Axis(0)) == 0 {
            return Err(Error::Shape("no frames".into()));
        }
        let rows = frames
            .outer_iter()
            .map(|frame| {
                let tokens = self.vision.input_tokens(frame)?;
                Ok(self.vision.encode_frame_graph(g, tokens, video_prompts))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat_rows(&rows))
    }

    /// Pooled video feature `[1 × 512]` on a graph.
    pub(crate) fn video_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        frames: &Array4<f64>,
        video_prompts: &[NodeId],
    ) -> Result<NodeId> {
        let per_frame = self.frames_graph(g, frames, video_prompts)?;
        Ok(g.mean_rows(per_frame))
    }
}

pub fn partition_parameters(model: &Model) -> ParameterPartition {
    let mut partition = ParameterPartition::default();
    for (name, _, trainable) in model.param_slices() {
        if trainable {
            partition.trainable.insert(name);
        } else {
            partition.frozen.insert(name);
        }
    }
    partition
}

/// Class features `[C × 512]`.
pub fn encode_text(model: &Model, class_names: &[&str]) -> Result<Matrix> {
    let tokens = model.class_tokens(class_names)?;
    let mut g = Graph::new();
    let leaves = model.prompt_leaves(&mut g, false);
    let out = model.text.encode_graph(&mut g, &tokens, &leaves.text);
    Ok(g.value(out).clone())
}

/// Per-frame features `[T × 512]` for frames shaped `[T × 3 × H × W]`.
pub fn encode_frames(model: &Model, frames: &Array4<f64>) -> Result<Matrix> {
    let rows = (0..frames.len_of(Axis(0)))
        .into_par_iter()
        .map(|t| {
            let frame = frames.index_axis(Axis(0), t);
            let tokens = model.vision.input_tokens(frame)?;
            let mut g = Graph::new();
            let leaves = model.prompt_leaves(&mut g, false);
            let out = model.vision.encode_frame_graph(&mut g, tokens, &leaves.video);
            Ok(g.value(out).row(0).to_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Shape("no frames".into()));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
}

/// 1024-d frozen audio embedding.
pub fn encode_spectrogram(model: &Model, spec: &Spectrogram) -> Result<Array1<f64>> {
    model.audio.encode(spec)
}

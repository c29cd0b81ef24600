use serde::{Deserialize, Serialize};

use crate::audio::AudioFrontendConfig;
use crate::error::{Error, Result};

/// Output width of the text and vision encoders.
pub const EMBED_DIM: usize = 512;
/// Output width of the audio encoder.
pub const AUDIO_EMBED_DIM: usize = 1024;

/// Shape of the three frozen encoders. Text and vision share width/depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub audio_channels: Vec<usize>,
    pub embed_dim: usize,
    pub audio_embed_dim: usize,
    /// Std of the frozen text/vision transformer weights and embeddings.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            width: 64,
            layers: 4,
            heads: 4,
            patch_size: 8,
            image_size: 32,
            vocab_size: 512,
            max_text_len: 16,
            audio_channels: vec![8, 16, 32, 64],
            embed_dim: EMBED_DIM,
            audio_embed_dim: AUDIO_EMBED_DIM,
            init_std: default_init_std(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return fail(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim != EMBED_DIM || self.audio_embed_dim != AUDIO_EMBED_DIM {
            return fail(format!(
                "embedding widths must be {EMBED_DIM} (text/vision) and {AUDIO_EMBED_DIM} (audio)"
            ));
        }
        if self.vocab_size < 4 {
            return fail("vocab_size must leave room for special tokens".into());
        }
        if self.max_text_len < 3 {
            return fail("max_text_len must fit start, one word and end".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std {} must be positive", self.init_std));
        }
        if self.audio_channels.is_empty() || self.audio_channels.contains(&0) {
            return fail("audio_channels must be non-empty and positive".into());
        }
        Ok(())
    }

    pub fn patches_per_frame(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub text_tokens: usize,
    pub video_tokens: usize,
    pub text_depth: usize,
    pub video_depth: usize,
    pub enabled_text: bool,
    pub enabled_video: bool,
    /// Keep the branch's prompt tokens in the sequence but out of training.
    #[serde(default)]
    pub freeze_text: bool,
    #[serde(default)]
    pub freeze_video: bool,
}

impl Default for PromptConfig {
    /// 12 tokens at depth 12 in both branches.
    fn default() -> Self {
        PromptConfig {
            text_tokens: 12,
            video_tokens: 12,
            text_depth: 12,
            video_depth: 12,
            enabled_text: true,
            enabled_video: true,
            freeze_text: false,
            freeze_video: false,
        }
    }
}

impl PromptConfig {
    /// Clamps both depths to the encoder's layer count.
    pub fn fit_to_layers(mut self, layers: usize) -> Self {
        self.text_depth = self.text_depth.min(layers);
        self.video_depth = self.video_depth.min(layers);
        self
    }

    /// Depth actually prompted in the text branch (0 when disabled).
    pub fn effective_text_depth(&self) -> usize {
        if self.enabled_text {
            self.text_depth
        } else {
            0
        }
    }

    pub fn effective_video_depth(&self) -> usize {
        if self.enabled_video {
            self.video_depth
        } else {
            0
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        for (branch, enabled, tokens, depth) in [
            ("text", self.enabled_text, self.text_tokens, self.text_depth),
            ("video", self.enabled_video, self.video_tokens, self.video_depth),
        ] {
            if !enabled {
                continue;
            }
            if depth > layers {
                return Err(Error::Validation(format!(
                    "{branch} prompt depth {depth} exceeds encoder layers {layers}"
                )));
            }
            if tokens == 0 {
                return Err(Error::Validation(format!(
                    "{branch} prompts enabled with zero tokens"
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub prompt: PromptConfig,
    pub audio: AudioFrontendConfig,
    pub audio_enabled: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let prompt = PromptConfig::default().fit_to_layers(encoder.layers);
        ModelConfig {
            encoder,
            prompt,
            audio: AudioFrontendConfig::default(),
            audio_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.prompt.validate(self.encoder.layers)?;
        self.audio.spectrogram.validate()
    }
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioFrontendConfig;
use crate::dataset::FewShotSpec;
use crate::encoder::{EncoderConfig, ModelConfig, PromptConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionNorm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub text: bool,
    pub video: bool,
    pub audio: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Modalities {
            text: true,
            video: true,
            audio: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub frames_per_video: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub modalities: Modalities,
    pub encoder: EncoderConfig,
    pub prompt: PromptConfig,
    pub audio: AudioFrontendConfig,
    pub fusion: FusionNorm,
    pub few_shot: Option<FewShotSpec>,
    /// Used only when the manifest carries no split tags.
    pub test_fraction: f64,
    /// Evaluate the test split after every epoch.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            frames_per_video: 16,
            epochs: 20,
            learning_rate: 8e-5,
            batch_size: 8,
            seed: 0,
            optimizer: Optimizer::default(),
            modalities: Modalities::default(),
            encoder: model.encoder,
            prompt: model.prompt,
            audio: model.audio,
            fusion: FusionNorm::default(),
            few_shot: None,
            test_fraction: 0.2,
            eval_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_video == 0 {
            return Err(Error::Validation("frames_per_video must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        if !self.modalities.text || !self.modalities.video {
            return Err(Error::Validation("text and video modalities are always on".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            prompt: self.prompt.clone(),
            audio: self.audio,
            audio_enabled: self.modalities.audio,
            seed: self.seed,
        }
    }

    /// First 16 hex digits of SHA-256 over the JSON form of the config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

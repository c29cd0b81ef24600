//! Frozen text, vision and audio encoders with deep prompt injection.

pub mod audio_net;
pub mod config;
pub mod model;
mod params;
pub mod prompt;
pub mod text;
pub mod tokenizer;
pub mod transformer;
pub mod vision;

pub use config::{EncoderConfig, ModelConfig, PromptConfig, AUDIO_EMBED_DIM, EMBED_DIM};
pub use model::{
    encode_frames, encode_spectrogram, encode_text, partition_parameters, Model, ParamInfo,
    ParameterPartition,
};
pub use prompt::{inject_prompts, PromptBank, TokenKind, TokenSequence};
pub use tokenizer::{tokenize_class_name, TokenizedText, Vocab};

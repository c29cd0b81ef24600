use ndarray::{Array1, Array4};
use rayon::prelude::*;

use crate::dataset::{Label, ManifestEntry};
use crate::encoder::Model;
use crate::error::Result;
use crate::train::frames::sample_frames;

/// One decoded sample: sampled frames plus the frozen audio embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub label: Label,
    /// `[T × 3 × H × W]`, values in [-1, 1].
    pub frames: Array4<f64>,
    /// 1024-d embedding; `None` when audio was not requested.
    pub audio: Option<Array1<f64>>,
}

/// Decodes frames and (optionally) audio for every entry, in parallel.
/// Output keeps entry order. The audio embedding depends only on the frozen
/// backbone, so it is computed once here rather than every epoch.
pub fn prepare_samples(
    entries: &[ManifestEntry],
    model: &Model,
    frames: usize,
    with_audio: bool,
) -> Result<Vec<PreparedSample>> {
    let size = model.config.encoder.image_size;
    entries
        .par_iter()
        .map(|e| {
            let frames = sample_frames(e, frames, size)?;
            let audio = if with_audio {
                let spec = model.config.audio.spectrogram_from_file(&e.audio_path)?;
                Some(model.audio.encode(&spec)?)
            } else {
                None
            };
            Ok(PreparedSample {
                id: e.id.clone(),
                label: e.label,
                frames,
                audio,
            })
        })
        .collect()
}

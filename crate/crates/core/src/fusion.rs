//! Temporal pooling, audio projection, additive fusion and the cosine
//! classification head.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::config::{AUDIO_EMBED_DIM, EMBED_DIM};
use crate::error::{Error, Result};
use crate::rng;

/// Initial log logit scale, `ln(1 / 0.07)`.
pub const LOG_SCALE_INIT: f64 = 2.659_260_036_932_778_4;
/// The logit scale never exceeds 100.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

const UNIT_TOLERANCE: f64 = 1e-5;

pub fn logit_scale_from_log(log_scale: f64) -> f64 {
    log_scale.min(MAX_LOGIT_SCALE.ln()).exp()
}

/// Where the L2 normalization happens around the additive fusion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionNorm {
    /// `normalize(visual + audio)`
    #[default]
    AfterSum,
    /// `normalize(normalize(visual) + normalize(audio))`
    BeforeAndAfter,
}

/// Trainable affine map from the audio embedding to the shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer {
    /// `[1024 × 512]`, applied as `x · W`.
    pub weights: Matrix,
    pub bias: Array1<f64>,
}

impl ProjectionLayer {
    pub fn init(rng: &mut rng::Rng) -> Self {
        ProjectionLayer {
            weights: Matrix::from_shape_vec(
                (AUDIO_EMBED_DIM, EMBED_DIM),
                rng::normal_f32_exact(rng, AUDIO_EMBED_DIM * EMBED_DIM, 0.02),
            )
            .expect("projection shape"),
            bias: Array1::zeros(EMBED_DIM),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// `[B × C]`
    pub logits: Matrix,
    pub logit_scale: f64,
}

/// Mean over frames: `[T × 512] → [512]`.
pub fn temporal_pool(frame_features: &Matrix) -> Result<Array1<f64>> {
    frame_features
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Validation("temporal pooling over zero frames".into()))
}

pub fn project_audio(audio_embedding: &Array1<f64>, layer: &ProjectionLayer) -> Result<Array1<f64>> {
    if audio_embedding.len() != layer.weights.nrows() {
        return Err(Error::Shape(format!(
            "audio embedding length {}, projection expects {}",
            audio_embedding.len(),
            layer.weights.nrows()
        )));
    }
    Ok(audio_embedding.dot(&layer.weights) + &layer.bias)
}

fn normalized(v: Array1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !(norm > f64::EPSILON) || !norm.is_finite() {
        return Err(Error::DegenerateFeature);
    }
    Ok(v / norm)
}

/// Adds the projected audio feature to the pooled visual one and
/// L2-normalizes; with audio off only the visual feature is normalized.
pub fn fuse(visual: &Array1<f64>, audio: &Array1<f64>, audio_enabled: bool) -> Result<Array1<f64>> {
    fuse_with(visual, audio, audio_enabled, FusionNorm::AfterSum)
}

pub fn fuse_with(
    visual: &Array1<f64>,
    audio: &Array1<f64>,
    audio_enabled: bool,
    mode: FusionNorm,
) -> Result<Array1<f64>> {
    if visual.len() != audio.len() {
        return Err(Error::Shape(format!(
            "visual length {} vs audio length {}",
            visual.len(),
            audio.len()
        )));
    }
    if !audio_enabled {
        return normalized(visual.clone());
    }
    match mode {
        FusionNorm::AfterSum => normalized(visual + audio),
        FusionNorm::BeforeAndAfter => {
            normalized(normalized(visual.clone())? + normalized(audio.clone())?)
        }
    }
}

fn check_unit_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Validation(format!(
                "{what} row {i} has norm {norm}, expected 1"
            )));
        }
    }
    Ok(())
}

/// `logits[i][j] = scale · ⟨fused_i, text_j⟩` over unit rows.
pub fn similarity_logits(fused: &Matrix, text: &Matrix, logit_scale: f64) -> Result<SimilarityMatrix> {
    if fused.ncols() != text.ncols() {
        return Err(Error::Shape(format!(
            "feature widths {} vs {}",
            fused.ncols(),
            text.ncols()
        )));
    }
    if !(logit_scale > 0.0) {
        return Err(Error::Validation("logit scale must be positive".into()));
    }
    check_unit_rows(fused, "fused")?;
    check_unit_rows(text, "text")?;
    Ok(SimilarityMatrix {
        logits: fused.dot(&text.t()) * logit_scale,
        logit_scale,
    })
}

fn check_labels(sim: &SimilarityMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != sim.logits.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            sim.logits.nrows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= sim.logits.ncols()) {
        return Err(Error::Validation(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Cross-entropy of each row's softmax against its label.
pub fn per_sample_losses(sim: &SimilarityMatrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(sim, labels)?;
    Ok(sim
        .logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect())
}

/// Batch mean of [`per_sample_losses`], summed in row order.
pub fn contrastive_loss(sim: &SimilarityMatrix, labels: &[usize]) -> Result<f64> {
    let losses = per_sample_losses(sim, labels)?;
    if losses.is_empty() {
        return Err(Error::Validation("loss over an empty batch".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn predict(sim: &SimilarityMatrix) -> Vec<usize> {
    sim.logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Leaves of the classification head inside a graph.
pub(crate) struct HeadInputs {
    /// Pooled visual features `[B × 512]`.
    pub visual: NodeId,
    /// Raw (unnormalized) class features `[C × 512]`.
    pub text: NodeId,
    /// `(audio embeddings [B × 1024], weights, bias row)`
    pub audio: Option<(NodeId, NodeId, NodeId)>,
    pub log_scale: NodeId,
}

/// Builds fusion and logits on the graph; returns the logits node.
pub(crate) fn head_graph(g: &mut Graph<'_>, inputs: &HeadInputs, mode: FusionNorm) -> NodeId {
    let fused = match inputs.audio {
        None => g.l2_normalize_rows(inputs.visual),
        Some((emb, w, b)) => {
            let projected = g.matmul(emb, w);
            let projected = g.add_row(projected, b);
            let sum = match mode {
                FusionNorm::AfterSum => g.add(inputs.visual, projected),
                FusionNorm::BeforeAndAfter => {
                    let v = g.l2_normalize_rows(inputs.visual);
                    let a = g.l2_normalize_rows(projected);
                    g.add(v, a)
                }
            };
            g.l2_normalize_rows(sum)
        }
    };
    let text = g.l2_normalize_rows(inputs.text);
    let cos = g.matmul_t(fused, text);
    let scale = g.exp_clamped(inputs.log_scale, MAX_LOGIT_SCALE.ln());
    g.scale(cos, scale)
}

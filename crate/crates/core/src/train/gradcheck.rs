//! Central-difference check of the analytic gradient.
//!
//! Each named parameter tensor is compared as a whole: the pass/fail number
//! is `‖a − n‖ / max(‖a‖, ‖n‖)`. Elementwise errors are reported too, but
//! entries whose gradient is near zero are dominated by the `O(ε²)`
//! truncation term of the difference quotient.
//!
//! The numerical side never touches the graph code. It re-runs the frozen
//! encoders with a perturbed prompt bank and scores the result with the
//! plain-array fusion functions. Projection entries use an exact shortcut:
//! perturbing `W[i][j]` only shifts column `j` of each projected row by
//! `ε · audio[b][i]`, so the loss is recomputed from cached dot products.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Graph, Matrix};
use crate::dataset::Label;
use crate::encoder::{Model, PromptBank, TokenizedText, AUDIO_EMBED_DIM};
use crate::error::{Error, Result};
use crate::fusion::{
    contrastive_loss, fuse_with, logit_scale_from_log, similarity_logits, FusionNorm,
};
use crate::rng;
use crate::train::config::TrainConfig;
use crate::train::data::PreparedSample;
use crate::train::trainer::{batch_gradient, build_model};

/// Floor for the elementwise diagnostic, so zero gradients do not divide by zero.
pub const ELEMENT_FLOOR: f64 = 1e-8;
const BATCH: usize = 2;
const FRAMES: usize = 2;

/// Result for one named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub len: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` over the whole tensor.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    /// Largest per-tensor relative error; this is the pass/fail number.
    pub max_relative_error: f64,
    pub worst_param: String,
    pub params: Vec<ParamCheck>,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// Elementwise diagnostics: largest `|a − n|`, and the largest
    /// `|a − n| / max(|a|, |n|, floor)` with the entry it came from.
    pub max_abs_error: f64,
    pub max_element_relative_error: f64,
    pub worst_element: (String, usize, f64, f64),
}

/// Norm-wise relative error of two gradient vectors; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numerical: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numerical).map(|(a, n)| a - n));
    let denom = norm(&mut analytic.iter().copied()).max(norm(&mut numerical.iter().copied()));
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

pub fn element_relative_error(analytic: f64, numerical: f64) -> f64 {
    let denom = analytic.abs().max(numerical.abs()).max(ELEMENT_FLOOR);
    (analytic - numerical).abs() / denom
}

/// Fixed two-sample batch (one per class) with random frames and audio
/// embeddings drawn from the gradcheck stream.
pub fn gradcheck_batch(model: &Model, seed: u64) -> Vec<PreparedSample> {
    let mut r = rng::stream(seed, rng::purpose::GRADCHECK);
    let size = model.config.encoder.image_size;
    Label::ALL
        .iter()
        .take(BATCH)
        .map(|&label| {
            let frames = Array4::from_shape_fn((FRAMES, 3, size, size), |_| r.random_range(-1.0..1.0));
            let audio = model.audio_enabled().then(|| {
                Array1::from_vec(rng::normal_f32_exact(&mut r, AUDIO_EMBED_DIM, 1.0))
            });
            PreparedSample {
                id: format!("gradcheck-{label}"),
                label,
                frames,
                audio,
            }
        })
        .collect()
}

struct Oracle<'m> {
    model: &'m Model,
    tokens: Vec<TokenizedText>,
    batch: &'m [PreparedSample],
    labels: Vec<usize>,
    text: Matrix,
    visual: Matrix,
    /// `[B × 512]` projected audio, when audio is on.
    projected: Option<Matrix>,
    emb: Option<Matrix>,
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    out
}

impl<'m> Oracle<'m> {
    fn new(model: &'m Model, batch: &'m [PreparedSample]) -> Result<Self> {
        let tokens = model.class_tokens(&Label::class_names())?;
        let labels = batch.iter().map(|s| s.label.index()).collect();
        let mut o = Oracle {
            model,
            tokens,
            batch,
            labels,
            text: Matrix::zeros((0, 0)),
            visual: Matrix::zeros((0, 0)),
            projected: None,
            emb: None,
        };
        o.text = o.text_features(model.text_prompts.as_ref());
        o.visual = o.visual_features(model.video_prompts.as_ref())?;
        if let Some(p) = &model.projection {
            let mut emb = Array2::zeros((batch.len(), AUDIO_EMBED_DIM));
            for (i, s) in batch.iter().enumerate() {
                emb.row_mut(i).assign(s.audio.as_ref().expect("audio in batch"));
            }
            o.projected = Some(emb.dot(&p.weights) + &p.bias);
            o.emb = Some(emb);
        }
        Ok(o)
    }

    fn text_features(&self, bank: Option<&PromptBank>) -> Matrix {
        let mut g = Graph::new();
        let leaves = bank.map(|b| b.leaves(&mut g, false)).unwrap_or_default();
        let out = self.model.text.encode_graph(&mut g, &self.tokens, &leaves);
        g.value(out).clone()
    }

    fn visual_features(&self, bank: Option<&PromptBank>) -> Result<Matrix> {
        let rows = self
            .batch
            .iter()
            .map(|s| {
                let mut g = Graph::new();
                let leaves = bank.map(|b| b.leaves(&mut g, false)).unwrap_or_default();
                let pooled = self.model.video_graph(&mut g, &s.frames, &leaves)?;
                Ok(g.value(pooled).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    fn loss(&self, text: &Matrix, visual: &Matrix, projected: Option<&Matrix>, log_scale: f64) -> Result<f64> {
        let zeros = Array1::zeros(visual.ncols());
        let mut fused = Matrix::zeros(visual.dim());
        for b in 0..visual.nrows() {
            let v = visual.row(b).to_owned();
            let row = match projected {
                Some(p) => fuse_with(&v, &p.row(b).to_owned(), true, self.model.fusion)?,
                None => fuse_with(&v, &zeros, false, self.model.fusion)?,
            };
            fused.row_mut(b).assign(&row);
        }
        let sim = similarity_logits(&fused, &unit_rows(text), logit_scale_from_log(log_scale))?;
        contrastive_loss(&sim, &self.labels)
    }

    fn base_log_scale(&self) -> f64 {
        self.model.log_logit_scale[0]
    }

    fn loss_with_text(&self, text: &Matrix) -> Result<f64> {
        self.loss(text, &self.visual, self.projected.as_ref(), self.base_log_scale())
    }

    fn loss_with_visual(&self, visual: &Matrix) -> Result<f64> {
        self.loss(&self.text, visual, self.projected.as_ref(), self.base_log_scale())
    }

    /// Loss after adding `deltas[b]` to column `j` of every projected row.
    fn loss_with_column_shift(&self, j: usize, deltas: &[f64]) -> Result<f64> {
        let base = self.projected.as_ref().expect("audio enabled");
        if self.model.fusion != FusionNorm::AfterSum {
            let mut p = base.clone();
            for (b, d) in deltas.iter().enumerate() {
                p[[b, j]] += d;
            }
            return self.loss(&self.text, &self.visual, Some(&p), self.base_log_scale());
        }
        let text = unit_rows(&self.text);
        let scale = logit_scale_from_log(self.base_log_scale());
        let mut total = 0.0;
        for (b, &d) in deltas.iter().enumerate() {
            let s = &self.visual.row(b) + &base.row(b);
            let norm = (s.dot(&s) + 2.0 * s[j] * d + d * d).sqrt();
            let logits: Vec<f64> = text
                .rows()
                .into_iter()
                .map(|t| scale * (s.dot(&t) + d * t[j]) / norm)
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse - logits[self.labels[b]];
        }
        Ok(total / deltas.len() as f64)
    }
}

fn central(eps: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(eps)? - f(-eps)?) / (2.0 * eps))
}

fn perturbed_bank(bank: &PromptBank, layer: usize, idx: usize, delta: f64) -> PromptBank {
    let mut b = bank.clone();
    b.layers[layer].as_slice_mut().expect("contiguous")[idx] += delta;
    b
}

/// Compares every trainable gradient entry against central differences on
/// one fixed batch. Read-only with respect to the model.
pub fn gradient_check(cfg: &TrainConfig, epsilon: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::Validation("epsilon must be positive".into()));
    }
    let model = build_model(cfg)?;
    let batch = gradcheck_batch(&model, cfg.seed);
    let (_, analytic) = batch_gradient(&model, &batch)?;
    let oracle = Oracle::new(&model, &batch)?;

    let mut report = GradCheckReport {
        epsilon,
        max_relative_error: 0.0,
        worst_param: String::new(),
        params: Vec::new(),
        checked: 0,
        max_abs_error: 0.0,
        max_element_relative_error: 0.0,
        worst_element: (String::new(), 0, 0.0, 0.0),
    };
    let mut offset = 0;
    for info in model.param_infos().into_iter().filter(|p| p.trainable) {
        let numerical: Vec<f64> = (0..info.len)
            .into_par_iter()
            .map(|idx| numerical_entry(&oracle, &info.name, idx, epsilon))
            .collect::<Result<_>>()?;
        let a = &analytic[offset..offset + info.len];
        let mut max_abs: f64 = 0.0;
        for (idx, (&ai, &ni)) in a.iter().zip(&numerical).enumerate() {
            max_abs = max_abs.max((ai - ni).abs());
            let e = element_relative_error(ai, ni);
            if e > report.max_element_relative_error {
                report.max_element_relative_error = e;
                report.worst_element = (info.name.clone(), idx, ai, ni);
            }
        }
        let check = ParamCheck {
            name: info.name.clone(),
            len: info.len,
            relative_error: relative_error(a, &numerical),
            max_abs_error: max_abs,
            grad_norm: a.iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        if check.relative_error > report.max_relative_error || report.worst_param.is_empty() {
            report.max_relative_error = check.relative_error;
            report.worst_param = info.name.clone();
        }
        report.max_abs_error = report.max_abs_error.max(max_abs);
        report.checked += info.len;
        report.params.push(check);
        offset += info.len;
    }
    debug_assert_eq!(offset, analytic.len());
    Ok(report)
}

fn numerical_entry(o: &Oracle<'_>, name: &str, idx: usize, eps: f64) -> Result<f64> {
    let model = o.model;
    if let Some(layer) = name.strip_prefix("prompts.text.") {
        let layer: usize = layer.parse().expect("layer index");
        let bank = model.text_prompts.as_ref().expect("text prompts");
        return central(eps, |d| {
            let text = o.text_features(Some(&perturbed_bank(bank, layer, idx, d)));
            o.loss_with_text(&text)
        });
    }
    if let Some(layer) = name.strip_prefix("prompts.video.") {
        let layer: usize = layer.parse().expect("layer index");
        let bank = model.video_prompts.as_ref().expect("video prompts");
        return central(eps, |d| {
            let visual = o.visual_features(Some(&perturbed_bank(bank, layer, idx, d)))?;
            o.loss_with_visual(&visual)
        });
    }
    match name {
        "projection.weight" => {
            let width = o.projected.as_ref().expect("audio").ncols();
            let (i, j) = (idx / width, idx % width);
            let emb = o.emb.as_ref().expect("audio");
            central(eps, |d| {
                let deltas: Vec<f64> = emb.column(i).iter().map(|e| d * e).collect();
                o.loss_with_column_shift(j, &deltas)
            })
        }
        "projection.bias" => central(eps, |d| o.loss_with_column_shift(idx, &vec![d; o.batch.len()])),
        "logit_scale" => central(eps, |d| {
            o.loss(&o.text, &o.visual, o.projected.as_ref(), o.base_log_scale() + d)
        }),
        other => Err(Error::Validation(format!("no gradient oracle for {other}"))),
    }
}

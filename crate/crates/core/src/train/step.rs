//! One batch through the model: text graph, one graph per video, and the
//! head graph, with the chain rule stitched across them.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::{Model, TokenizedText, AUDIO_EMBED_DIM};
use crate::error::{Error, Result};
use crate::fusion::{head_graph, per_sample_losses, predict, HeadInputs, SimilarityMatrix};
use crate::train::data::PreparedSample;

pub(crate) struct BatchResult {
    pub losses: Vec<f64>,
    pub predictions: Vec<usize>,
    /// Flat gradient of the mean batch loss over the trainable parameters,
    /// in declaration order.
    pub grads: Option<Vec<f64>>,
}

fn stack(rows: &[Matrix]) -> Matrix {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Pooled video feature for one sample; keeps the graph when gradients
/// have to flow back into the video prompts.
fn video_forward<'a>(
    model: &'a Model,
    sample: &PreparedSample,
    track: bool,
) -> Result<(Matrix, Option<(Graph<'a>, NodeId, Vec<NodeId>)>)> {
    let mut g = Graph::new();
    let video = model
        .video_prompts
        .as_ref()
        .map(|b| b.leaves(&mut g, track))
        .unwrap_or_default();
    let pooled = model.video_graph(&mut g, &sample.frames, &video)?;
    let value = g.value(pooled).clone();
    Ok((value, track.then_some((g, pooled, video))))
}

pub(crate) fn run_batch(
    model: &Model,
    class_tokens: &[TokenizedText],
    batch: &[&PreparedSample],
    want_grads: bool,
) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let text_t = want_grads && model.text_prompts_trainable();
    let video_t = want_grads && model.video_prompts_trainable();

    let mut tg = Graph::new();
    let text_leaves = model
        .text_prompts
        .as_ref()
        .map(|b| b.leaves(&mut tg, text_t))
        .unwrap_or_default();
    let text_out = model.text.encode_graph(&mut tg, class_tokens, &text_leaves);

    let videos = batch
        .par_iter()
        .map(|s| video_forward(model, s, video_t))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<Matrix> = videos.iter().map(|(v, _)| v.clone()).collect();

    let labels: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
    let mut hg = Graph::new();
    let visual = hg.leaf(stack(&pooled), video_t);
    let text = hg.leaf(tg.value(text_out).clone(), text_t);
    let audio = match &model.projection {
        None => None,
        Some(p) => {
            let mut emb = Array2::zeros((batch.len(), AUDIO_EMBED_DIM));
            for (i, s) in batch.iter().enumerate() {
                let a = s.audio.as_ref().ok_or_else(|| {
                    Error::Data(format!("{}: audio embedding missing", s.id))
                })?;
                emb.row_mut(i).assign(a);
            }
            let e = hg.constant(emb);
            let w = hg.leaf(p.weights.clone(), want_grads);
            let b = hg.leaf(p.bias.clone().insert_axis(Axis(0)), want_grads);
            Some((e, w, b))
        }
    };
    let log_scale = hg.leaf(
        Matrix::from_elem((1, 1), model.log_logit_scale[0]),
        want_grads,
    );
    let inputs = HeadInputs {
        visual,
        text,
        audio,
        log_scale,
    };
    let logits = head_graph(&mut hg, &inputs, model.fusion);
    let sim = SimilarityMatrix {
        logits: hg.value(logits).clone(),
        logit_scale: model.logit_scale(),
    };
    let losses = per_sample_losses(&sim, &labels)?;
    let predictions = predict(&sim);
    if !want_grads {
        return Ok(BatchResult {
            losses,
            predictions,
            grads: None,
        });
    }

    let loss = hg.cross_entropy(logits, &labels);
    let hgrads = hg.backward(&[(loss, Matrix::ones((1, 1)))]);
    let mut flat = Vec::with_capacity(model.trainable_param_count());

    if text_t {
        let seed = hgrads.get_or_zeros(text, hg.shape(text));
        let tgrads = tg.backward(&[(text_out, seed)]);
        for &leaf in &text_leaves {
            flat.extend(tgrads.get_or_zeros(leaf, tg.shape(leaf)).iter());
        }
    }
    if video_t {
        let dvisual = hgrads.get_or_zeros(visual, hg.shape(visual));
        let per_sample: Vec<Vec<Matrix>> = videos
            .into_par_iter()
            .enumerate()
            .map(|(i, (_, kept))| {
                let (g, pooled, leaves) = kept.expect("graph kept when tracking");
                let seed = dvisual.row(i).to_owned().insert_axis(Axis(0));
                let grads = g.backward(&[(pooled, seed)]);
                leaves
                    .iter()
                    .map(|&l| grads.get_or_zeros(l, g.shape(l)))
                    .collect()
            })
            .collect();
        // Summed in sample order so the result does not depend on scheduling.
        let mut total = per_sample[0].clone();
        for sample in &per_sample[1..] {
            for (acc, g) in total.iter_mut().zip(sample) {
                *acc += g;
            }
        }
        for m in &total {
            flat.extend(m.iter());
        }
    }
    if let Some((_, w, b)) = inputs.audio {
        flat.extend(hgrads.get_or_zeros(w, hg.shape(w)).iter());
        flat.extend(hgrads.get_or_zeros(b, hg.shape(b)).iter());
    }
    flat.extend(hgrads.get_or_zeros(log_scale, (1, 1)).iter());
    debug_assert_eq!(flat.len(), model.trainable_param_count());
    Ok(BatchResult {
        losses,
        predictions,
        grads: Some(flat),
    })
}

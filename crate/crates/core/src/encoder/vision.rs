use ndarray::{s, Array1, ArrayView3};

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::config::EncoderConfig;
use crate::encoder::params::{ParamSlices, ParamSlicesMut};
use crate::encoder::transformer::{normal_matrix, run_blocks, Block};
use crate::error::{Error, Result};
use crate::rng;

pub const CHANNELS: usize = 3;

/// Patch vision transformer over one RGB frame; the CLS token is the output.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionEncoder {
    /// `[3·patch² × width]`, rows ordered channel, then patch row, then column.
    pub patch_embedding: Matrix,
    pub class_embedding: Matrix,
    /// `[(1 + patches) × width]`
    pub positional: Matrix,
    pub ln_pre_gamma: Array1<f64>,
    pub ln_pre_beta: Array1<f64>,
    pub blocks: Vec<Block>,
    pub ln_post_gamma: Array1<f64>,
    pub ln_post_beta: Array1<f64>,
    pub projection: Matrix,
    pub heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
}

impl VisionEncoder {
    pub fn init(rng: &mut rng::Rng, cfg: &EncoderConfig) -> Self {
        let w = cfg.width;
        let std = cfg.init_std;
        let patch_dim = CHANNELS * cfg.patch_size * cfg.patch_size;
        VisionEncoder {
            patch_embedding: normal_matrix(rng, patch_dim, w, std),
            class_embedding: normal_matrix(rng, 1, w, std),
            positional: normal_matrix(rng, 1 + cfg.patches_per_frame(), w, std),
            ln_pre_gamma: Array1::ones(w),
            ln_pre_beta: Array1::zeros(w),
            blocks: (0..cfg.layers).map(|_| Block::init(rng, w, std)).collect(),
            ln_post_gamma: Array1::ones(w),
            ln_post_beta: Array1::zeros(w),
            projection: normal_matrix(rng, w, cfg.embed_dim, std),
            heads: cfg.heads,
            patch_size: cfg.patch_size,
            image_size: cfg.image_size,
        }
    }

    /// Flattens a `[3 × H × W]` frame into `[patches × 3·patch²]`, patches in
    /// row-major order.
    pub fn patchify(&self, frame: ArrayView3<f64>) -> Result<Matrix> {
        let (c, h, w) = frame.dim();
        if c != CHANNELS || h != self.image_size || w != self.image_size {
            return Err(Error::Shape(format!(
                "frame {c}×{h}×{w}, expected {CHANNELS}×{0}×{0}",
                self.image_size
            )));
        }
        let p = self.patch_size;
        let per_side = self.image_size / p;
        let mut out = Matrix::zeros((per_side * per_side, CHANNELS * p * p));
        for py in 0..per_side {
            for px in 0..per_side {
                let patch = frame.slice(s![.., py * p..(py + 1) * p, px * p..(px + 1) * p]);
                let row = py * per_side + px;
                for (j, v) in patch.iter().enumerate() {
                    out[[row, j]] = *v;
                }
            }
        }
        Ok(out)
    }

    /// `[CLS; patch embeddings] + positional`, `[(1 + patches) × width]`.
    pub fn input_tokens(&self, frame: ArrayView3<f64>) -> Result<Matrix> {
        let patches = self.patchify(frame)?.dot(&self.patch_embedding);
        let mut x = ndarray::concatenate![ndarray::Axis(0), self.class_embedding, patches];
        x += &self.positional;
        Ok(x)
    }

    /// CLS feature `[1 × 512]` for one frame.
    pub(crate) fn encode_frame_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        tokens: Matrix,
        prompts: &[NodeId],
    ) -> NodeId {
        let x = g.constant(tokens);
        let x = g.layer_norm(x, &self.ln_pre_gamma, &self.ln_pre_beta);
        let x = run_blocks(g, &self.blocks, x, prompts, self.heads, false);
        let cls = g.slice_rows(x, 0, 1);
        let cls = g.layer_norm(cls, &self.ln_post_gamma, &self.ln_post_beta);
        g.linear(cls, &self.projection, None)
    }

    pub(crate) fn params<'s>(&'s self, prefix: &str, out: &mut ParamSlices<'s>) {
        out.push((format!("{prefix}.patch_embedding"), self.patch_embedding.as_slice().unwrap()));
        out.push((format!("{prefix}.class_embedding"), self.class_embedding.as_slice().unwrap()));
        out.push((format!("{prefix}.positional"), self.positional.as_slice().unwrap()));
        out.push((format!("{prefix}.ln_pre.gamma"), self.ln_pre_gamma.as_slice().unwrap()));
        out.push((format!("{prefix}.ln_pre.beta"), self.ln_pre_beta.as_slice().unwrap()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.blocks.{i}"), out);
        }
        out.push((format!("{prefix}.ln_post.gamma"), self.ln_post_gamma.as_slice().unwrap()));
        out.push((format!("{prefix}.ln_post.beta"), self.ln_post_beta.as_slice().unwrap()));
        out.push((format!("{prefix}.projection"), self.projection.as_slice().unwrap()));
    }

    pub(crate) fn params_mut<'s>(&'s mut self, prefix: &str, out: &mut ParamSlicesMut<'s>) {
        out.push((format!("{prefix}.patch_embedding"), self.patch_embedding.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.class_embedding"), self.class_embedding.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.positional"), self.positional.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln_pre.gamma"), self.ln_pre_gamma.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln_pre.beta"), self.ln_pre_beta.as_slice_mut().unwrap()));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("{prefix}.blocks.{i}"), out);
        }
        out.push((format!("{prefix}.ln_post.gamma"), self.ln_post_gamma.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln_post.beta"), self.ln_post_beta.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.projection"), self.projection.as_slice_mut().unwrap()));
    }
}

use ndarray::{Array1, Axis};

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::config::EncoderConfig;
use crate::encoder::params::{ParamSlices, ParamSlicesMut};
use crate::encoder::prompt::PROMPT_OFFSET;
use crate::encoder::tokenizer::{tokenize_class_name, TokenizedText, Vocab};
use crate::encoder::transformer::{normal_matrix, run_blocks, Block};
use crate::error::Result;
use crate::rng;

/// Causal text transformer; a class is represented by its END token.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub token_embedding: Matrix,
    pub positional: Matrix,
    pub blocks: Vec<Block>,
    pub ln_final_gamma: Array1<f64>,
    pub ln_final_beta: Array1<f64>,
    /// `[width × 512]`
    pub projection: Matrix,
    pub heads: usize,
    pub vocab: Vocab,
    pub max_len: usize,
}

impl TextEncoder {
    pub fn init(rng: &mut rng::Rng, cfg: &EncoderConfig) -> Self {
        let w = cfg.width;
        let std = cfg.init_std;
        TextEncoder {
            token_embedding: normal_matrix(rng, cfg.vocab_size, w, std),
            positional: normal_matrix(rng, cfg.max_text_len, w, std),
            blocks: (0..cfg.layers).map(|_| Block::init(rng, w, std)).collect(),
            ln_final_gamma: Array1::ones(w),
            ln_final_beta: Array1::zeros(w),
            projection: normal_matrix(rng, w, cfg.embed_dim, std),
            heads: cfg.heads,
            vocab: Vocab::new(cfg.vocab_size),
            max_len: cfg.max_text_len,
        }
    }

    pub fn tokenize(&self, name: &str) -> Result<TokenizedText> {
        tokenize_class_name(name, &self.vocab, self.max_len)
    }

    /// Token plus positional embeddings, `[max_len × width]`.
    pub fn input_embeddings(&self, tokens: &TokenizedText) -> Matrix {
        let mut x = self.token_embedding.select(Axis(0), &tokens.ids);
        x += &self.positional;
        x
    }

    /// Class features `[C × 512]`. `prompts` holds one leaf per prompted layer.
    pub(crate) fn encode_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        texts: &[TokenizedText],
        prompts: &[NodeId],
    ) -> NodeId {
        let shift = prompts.first().map_or(0, |&p| g.shape(p).0);
        let rows: Vec<NodeId> = texts
            .iter()
            .map(|t| {
                let x = g.constant(self.input_embeddings(t));
                let x = run_blocks(g, &self.blocks, x, prompts, self.heads, true);
                let end = if t.end_index >= PROMPT_OFFSET {
                    t.end_index + shift
                } else {
                    t.end_index
                };
                let row = g.slice_rows(x, end, end + 1);
                g.layer_norm(row, &self.ln_final_gamma, &self.ln_final_beta)
            })
            .collect();
        let stacked = g.concat_rows(&rows);
        g.linear(stacked, &self.projection, None)
    }

    pub(crate) fn params<'s>(&'s self, prefix: &str, out: &mut ParamSlices<'s>) {
        out.push((format!("{prefix}.token_embedding"), self.token_embedding.as_slice().unwrap()));
        out.push((format!("{prefix}.positional"), self.positional.as_slice().unwrap()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.blocks.{i}"), out);
        }
        out.push((format!("{prefix}.ln_final.gamma"), self.ln_final_gamma.as_slice().unwrap()));
        out.push((format!("{prefix}.ln_final.beta"), self.ln_final_beta.as_slice().unwrap()));
        out.push((format!("{prefix}.projection"), self.projection.as_slice().unwrap()));
    }

    pub(crate) fn params_mut<'s>(&'s mut self, prefix: &str, out: &mut ParamSlicesMut<'s>) {
        out.push((format!("{prefix}.token_embedding"), self.token_embedding.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.positional"), self.positional.as_slice_mut().unwrap()));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("{prefix}.blocks.{i}"), out);
        }
        out.push((format!("{prefix}.ln_final.gamma"), self.ln_final_gamma.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln_final.beta"), self.ln_final_beta.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.projection"), self.projection.as_slice_mut().unwrap()));
    }
}

use ndarray::Array1;

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::encoder::params::{ParamSlices, ParamSlicesMut};
use crate::encoder::prompt::inject_prompts_graph;
use crate::rng;

pub(crate) const WEIGHT_STD: f64 = 0.02;

pub(crate) fn normal_matrix(rng: &mut rng::Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_shape_vec((rows, cols), rng::normal_f32_exact(rng, rows * cols, std))
        .expect("shape matches length")
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    /// `[width × 3·width]`, columns laid out as `[q | k | v]`.
    pub attn_in_weight: Matrix,
    pub attn_in_bias: Array1<f64>,
    pub attn_out_weight: Matrix,
    pub attn_out_bias: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub mlp_in_weight: Matrix,
    pub mlp_in_bias: Array1<f64>,
    pub mlp_out_weight: Matrix,
    pub mlp_out_bias: Array1<f64>,
}

impl Block {
    pub fn init(rng: &mut rng::Rng, width: usize, std: f64) -> Self {
        let hidden = 4 * width;
        Block {
            ln1_gamma: Array1::ones(width),
            ln1_beta: Array1::zeros(width),
            attn_in_weight: normal_matrix(rng, width, 3 * width, std),
            attn_in_bias: Array1::zeros(3 * width),
            attn_out_weight: normal_matrix(rng, width, width, std),
            attn_out_bias: Array1::zeros(width),
            ln2_gamma: Array1::ones(width),
            ln2_beta: Array1::zeros(width),
            mlp_in_weight: normal_matrix(rng, width, hidden, std),
            mlp_in_bias: Array1::zeros(hidden),
            mlp_out_weight: normal_matrix(rng, hidden, width, std),
            mlp_out_bias: Array1::zeros(width),
        }
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: NodeId, heads: usize, causal: bool) -> NodeId {
        let h = g.layer_norm(x, &self.ln1_gamma, &self.ln1_beta);
        let qkv = g.linear(h, &self.attn_in_weight, Some(&self.attn_in_bias));
        let attn = g.attention(qkv, heads, causal);
        let attn = g.linear(attn, &self.attn_out_weight, Some(&self.attn_out_bias));
        let x = g.add(x, attn);
        let h = g.layer_norm(x, &self.ln2_gamma, &self.ln2_beta);
        let h = g.linear(h, &self.mlp_in_weight, Some(&self.mlp_in_bias));
        let h = g.gelu(h);
        let h = g.linear(h, &self.mlp_out_weight, Some(&self.mlp_out_bias));
        g.add(x, h)
    }

    pub(crate) fn params<'s>(&'s self, prefix: &str, out: &mut ParamSlices<'s>) {
        let p = |n: &str| format!("{prefix}.{n}");
        out.push((p("ln1.gamma"), self.ln1_gamma.as_slice().unwrap()));
        out.push((p("ln1.beta"), self.ln1_beta.as_slice().unwrap()));
        out.push((p("attn.in.weight"), self.attn_in_weight.as_slice().unwrap()));
        out.push((p("attn.in.bias"), self.attn_in_bias.as_slice().unwrap()));
        out.push((p("attn.out.weight"), self.attn_out_weight.as_slice().unwrap()));
        out.push((p("attn.out.bias"), self.attn_out_bias.as_slice().unwrap()));
        out.push((p("ln2.gamma"), self.ln2_gamma.as_slice().unwrap()));
        out.push((p("ln2.beta"), self.ln2_beta.as_slice().unwrap()));
        out.push((p("mlp.in.weight"), self.mlp_in_weight.as_slice().unwrap()));
        out.push((p("mlp.in.bias"), self.mlp_in_bias.as_slice().unwrap()));
        out.push((p("mlp.out.weight"), self.mlp_out_weight.as_slice().unwrap()));
        out.push((p("mlp.out.bias"), self.mlp_out_bias.as_slice().unwrap()));
    }

    pub(crate) fn params_mut<'s>(&'s mut self, prefix: &str, out: &mut ParamSlicesMut<'s>) {
        let p = |n: &str| format!("{prefix}.{n}");
        out.push((p("ln1.gamma"), self.ln1_gamma.as_slice_mut().unwrap()));
        out.push((p("ln1.beta"), self.ln1_beta.as_slice_mut().unwrap()));
        out.push((p("attn.in.weight"), self.attn_in_weight.as_slice_mut().unwrap()));
        out.push((p("attn.in.bias"), self.attn_in_bias.as_slice_mut().unwrap()));
        out.push((p("attn.out.weight"), self.attn_out_weight.as_slice_mut().unwrap()));
        out.push((p("attn.out.bias"), self.attn_out_bias.as_slice_mut().unwrap()));
        out.push((p("ln2.gamma"), self.ln2_gamma.as_slice_mut().unwrap()));
        out.push((p("ln2.beta"), self.ln2_beta.as_slice_mut().unwrap()));
        out.push((p("mlp.in.weight"), self.mlp_in_weight.as_slice_mut().unwrap()));
        out.push((p("mlp.in.bias"), self.mlp_in_bias.as_slice_mut().unwrap()));
        out.push((p("mlp.out.weight"), self.mlp_out_weight.as_slice_mut().unwrap()));
        out.push((p("mlp.out.bias"), self.mlp_out_bias.as_slice_mut().unwrap()));
    }
}

/// Runs `blocks` over `x`, applying the deep-prompt rule before each layer.
/// `prompts.len()` is the prompt depth.
pub(crate) fn run_blocks<'a>(
    g: &mut Graph<'a>,
    blocks: &'a [Block],
    mut x: NodeId,
    prompts: &[NodeId],
    heads: usize,
    causal: bool,
) -> NodeId {
    for (layer, block) in blocks.iter().enumerate() {
        x = inject_prompts_graph(g, x, prompts, layer);
        x = block.forward(g, x, heads, causal);
    }
    x
}

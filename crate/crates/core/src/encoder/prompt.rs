//! Deep prompt tokens.
//!
//! Prompts sit right after the first token (START in text, CLS in vision).
//! Layer 0 inserts them, layers `1..depth` overwrite those rows with fresh
//! per-layer tokens, and deeper layers leave them alone so the rows carry
//! whatever the previous layer produced.

use crate::autodiff::{Graph, Matrix, NodeId};
use crate::error::{Error, Result};
use crate::rng;

/// Index of the first prompt row.
pub const PROMPT_OFFSET: usize = 1;

const PROMPT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptAction {
    Insert,
    Replace,
    Carry,
}

pub fn prompt_action(layer_index: usize, depth: usize) -> PromptAction {
    if layer_index >= depth {
        PromptAction::Carry
    } else if layer_index == 0 {
        PromptAction::Insert
    } else {
        PromptAction::Replace
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Text,
    Patch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub vectors: Matrix,
    pub kind: TokenKind,
}

/// Applies the prompt rule for one layer to a plain sequence.
pub fn inject_prompts(
    layer_input: &TokenSequence,
    prompts: &Matrix,
    layer_index: usize,
    depth: usize,
) -> Result<TokenSequence> {
    let seq = &layer_input.vectors;
    if seq.nrows() == 0 {
        return Err(Error::Shape("empty token sequence".into()));
    }
    let action = prompt_action(layer_index, depth);
    if action != PromptAction::Carry && prompts.ncols() != seq.ncols() {
        return Err(Error::Shape(format!(
            "prompt width {} vs sequence width {}",
            prompts.ncols(),
            seq.ncols()
        )));
    }
    let p = prompts.nrows();
    let rest_start = match action {
        PromptAction::Carry => return Ok(layer_input.clone()),
        PromptAction::Insert => PROMPT_OFFSET,
        PromptAction::Replace => {
            if seq.nrows() < PROMPT_OFFSET + p {
                return Err(Error::Shape("sequence shorter than its prompt rows".into()));
            }
            PROMPT_OFFSET + p
        }
    };
    let head = seq.slice(ndarray::s![..PROMPT_OFFSET, ..]);
    let tail = seq.slice(ndarray::s![rest_start.., ..]);
    let vectors = ndarray::concatenate(ndarray::Axis(0), &[head, prompts.view(), tail])
        .expect("widths checked above");
    Ok(TokenSequence {
        vectors,
        kind: layer_input.kind,
    })
}

/// Graph counterpart of [`inject_prompts`].
pub(crate) fn inject_prompts_graph(
    g: &mut Graph<'_>,
    x: NodeId,
    prompts: &[NodeId],
    layer_index: usize,
) -> NodeId {
    let rows = g.shape(x).0;
    match prompt_action(layer_index, prompts.len()) {
        PromptAction::Carry => x,
        action => {
            let p = prompts[layer_index];
            let rest_start = match action {
                PromptAction::Insert => PROMPT_OFFSET,
                _ => PROMPT_OFFSET + g.shape(p).0,
            };
            let head = g.slice_rows(x, 0, PROMPT_OFFSET);
            let tail = g.slice_rows(x, rest_start, rows);
            g.concat_rows(&[head, p, tail])
        }
    }
}

/// One `[tokens × width]` prompt matrix per prompted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub layers: Vec<Matrix>,
}

impl PromptBank {
    /// Layer `l` of a bank never depends on the depth, so a shallower bank is
    /// a prefix of a deeper one built from the same stream.
    pub fn init(rng: &mut rng::Rng, depth: usize, tokens: usize, width: usize) -> Self {
        let layers = (0..depth)
            .map(|_| {
                Matrix::from_shape_vec(
                    (tokens, width),
                    rng::normal_f32_exact(rng, tokens * width, PROMPT_INIT_STD),
                )
                .expect("shape matches length")
            })
            .collect();
        PromptBank { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn tokens(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|m| m.len()).sum()
    }

    /// Adds every layer as a leaf; `trainable` controls gradient tracking.
    pub(crate) fn leaves(&self, g: &mut Graph<'_>, trainable: bool) -> Vec<NodeId> {
        self.layers
            .iter()
            .map(|m| g.leaf(m.clone(), trainable))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn seq(rows: usize, width: usize) -> TokenSequence {
        TokenSequence {
            vectors: Array2::from_shape_fn((rows, width), |(i, j)| (i * 100 + j) as f64),
            kind: TokenKind::Text,
        }
    }

    #[test]
    fn depth_zero_is_identity() {
        let s = seq(16, 4);
        let prompts = Array2::ones((4, 4));
        for layer in 0..6 {
            assert_eq!(inject_prompts(&s, &prompts, layer, 0).unwrap(), s);
        }
    }

    #[test]
    fn layer_zero_inserts_after_first_token() {
        let s = seq(16, 4);
        let prompts = Array2::from_elem((4, 4), -1.0);
        let out = inject_prompts(&s, &prompts, 0, 2).unwrap();
        assert_eq!(out.vectors.nrows(), 20);
        assert_eq!(out.vectors.row(0), s.vectors.row(0));
        for r in 1..=4 {
            assert!(out.vectors.row(r).iter().all(|&v| v == -1.0));
        }
        assert_eq!(out.vectors.row(5), s.vectors.row(1));
        assert_eq!(out.vectors.row(19), s.vectors.row(15));
    }

    #[test]
    fn later_layers_replace_then_carry() {
        let s = seq(20, 4);
        let prompts = Array2::from_elem((4, 4), 7.0);
        let replaced = inject_prompts(&s, &prompts, 1, 2).unwrap();
        assert_eq!(replaced.vectors.nrows(), 20);
        assert!(replaced.vectors.row(3).iter().all(|&v| v == 7.0));
        assert_eq!(replaced.vectors.row(5), s.vectors.row(5));
        let carried = inject_prompts(&s, &prompts, 2, 2).unwrap();
        assert_eq!(carried, s);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let s = seq(5, 4);
        let prompts = Array2::zeros((2, 3));
        assert!(matches!(inject_prompts(&s, &prompts, 0, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn shallow_bank_is_prefix_of_deep_bank() {
        let deep = PromptBank::init(&mut rng::stream(1, 10), 12, 3, 8);
        let shallow = PromptBank::init(&mut rng::stream(1, 10), 2, 3, 8);
        assert_eq!(&deep.layers[..2], &shallow.layers[..]);
        assert_eq!(deep.param_count() - shallow.param_count(), 10 * 3 * 8);
    }

    #[test]
    fn graph_version_matches_plain() {
        let s = seq(6, 3);
        let bank = PromptBank::init(&mut rng::stream(2, 0), 2, 2, 3);
        let mut plain = s.clone();
        let mut g = Graph::new();
        let mut node = g.constant(s.vectors.clone());
        let leaves = bank.leaves(&mut g, false);
        for layer in 0..3 {
            let p = bank.layers.get(layer).cloned().unwrap_or_else(|| Array2::zeros((2, 3)));
            plain = inject_prompts(&plain, &p, layer, 2).unwrap();
            node = inject_prompts_graph(&mut g, node, &leaves, layer);
            assert_eq!(g.value(node), &plain.vectors);
        }
    }
}

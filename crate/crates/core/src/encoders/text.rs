//! Transformer text encoder: attention and positions are local to each
//! description segment; segment means are summed.

use alloc::vec::Vec;
use core::ops::Range;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::molkit::{TextDescription, MAX_TOKENS};
use crate::nn::{normal_tensor, LayerNorm, ParamId, ParamStore, TransformerBlock};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub vocab: usize,
    pub tokens: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        vocab: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        ff: usize,
    ) -> Self {
        let tokens = store.add("text.tok", normal_tensor(rng, vocab, dim, 1.0));
        let positions = store.add("text.pos", normal_tensor(rng, MAX_TOKENS, dim, 0.1));
        let blocks = (0..layers)
            .map(|l| TransformerBlock::new(store, rng, &alloc::format!("text.b{l}"), dim, heads, ff))
            .collect();
        let norm = LayerNorm::new(store, "text.ln", dim);
        TextEncoder { vocab, tokens, positions, blocks, norm, dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, texts: &[&TextDescription]) -> Result<Var> {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut segments: Vec<Range<usize>> = Vec::new();
        let mut seg_owner = Vec::new();
        let mut seg_inv = Vec::new();
        let mut token_seg = Vec::new();
        for (ti, t) in texts.iter().enumerate() {
            let mut kept = 0;
            for seg in &t.segments {
                let end = seg.end.min(MAX_TOKENS);
                if seg.start >= end {
                    continue;
                }
                let start = ids.len();
                for (p, &tok) in t.tokens[seg.start..end].iter().enumerate() {
                    if tok >= self.vocab {
                        return Err(Error::TokenOutOfVocab { token: tok, vocab: self.vocab });
                    }
                    ids.push(tok);
                    pos.push(p);
                    token_seg.push(segments.len());
                }
                seg_inv.push(1.0 / (end - seg.start) as f64);
                seg_owner.push(ti);
                segments.push(start..ids.len());
                kept += 1;
            }
            if kept == 0 {
                return Err(Error::ShapeMismatch(alloc::format!("text {ti} has no tokens")));
            }
        }
        let table = tape.param(store, self.tokens);
        let emb = tape.gather_rows(table, &ids);
        let ptable = tape.param(store, self.positions);
        let pemb = tape.gather_rows(ptable, &pos);
        let mut h = tape.add(emb, pemb);
        for block in &self.blocks {
            h = block.forward(tape, store, h, &segments);
        }
        let h = self.norm.forward(tape, store, h);
        let sums = tape.segment_sum(h, &token_seg, segments.len());
        let inv = tape.leaf(Tensor::from_vec(segments.len(), 1, seg_inv));
        let means = tape.mul_col(sums, inv);
        Ok(tape.segment_sum(means, &seg_owner, texts.len()))
    }
}

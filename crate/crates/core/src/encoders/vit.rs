//! Patch-based vision transformer with mean pooling over patch tokens.

use alloc::vec::Vec;
use core::ops::Range;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::molkit::MoleculeImage;
use crate::nn::{normal_tensor, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub patch: usize,
    pub image_size: usize,
    pub channels: usize,
    pub embed: Linear,
    pub positions: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl VitEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        image_size: usize,
        patch: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        ff: usize,
    ) -> Self {
        assert!(patch > 0 && image_size.is_multiple_of(patch), "patch size must divide the image size");
        let channels = 3;
        let n_patches = (image_size / patch) * (image_size / patch);
        let embed = Linear::new(store, rng, "vit.patch", patch * patch * channels, dim);
        let positions = store.add("vit.pos", normal_tensor(rng, n_patches, dim, 0.02));
        let blocks = (0..layers)
            .map(|l| TransformerBlock::new(store, rng, &alloc::format!("vit.b{l}"), dim, heads, ff))
            .collect();
        let norm = LayerNorm::new(store, "vit.ln", dim);
        VitEncoder { patch, image_size, channels, embed, positions, blocks, norm, dim }
    }

    pub fn n_patches(&self) -> usize {
        let side = self.image_size / self.patch;
        side * side
    }

    /// Flattened patches, `(images * n_patches) x (patch² * channels)`, each
    /// patch in (row, column, channel) order.
    pub fn patchify(&self, images: &[&MoleculeImage]) -> Result<Tensor> {
        let p = self.patch;
        let width = p * p * self.channels;
        let mut data = Vec::with_capacity(images.len() * self.n_patches() * width);
        for img in images {
            if img.height != self.image_size
                || img.width != self.image_size
                || img.height % p != 0
                || img.width % p != 0
                || img.channels != self.channels
            {
                return Err(Error::BadPatchGrid { height: img.height, width: img.width, patch: p });
            }
            for py in 0..img.height / p {
                for px in 0..img.width / p {
                    for y in 0..p {
                        let base = ((py * p + y) * img.width + px * p) * img.channels;
                        data.extend_from_slice(&img.pixels[base..base + p * img.channels]);
                    }
                }
            }
        }
        Ok(Tensor::from_vec(images.len() * self.n_patches(), width, data))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, images: &[&MoleculeImage]) -> Result<Var> {
        let patches = self.patchify(images)?;
        let np = self.n_patches();
        let x = tape.leaf(patches);
        let tokens = self.embed.forward(tape, store, x);
        let pos = tape.param(store, self.positions);
        let pos_idx: Vec<usize> = (0..images.len() * np).map(|i| i % np).collect();
        let pos = tape.gather_rows(pos, &pos_idx);
        let mut h = tape.add(tokens, pos);
        let segments: Vec<Range<usize>> = (0..images.len()).map(|i| i * np..(i + 1) * np).collect();
        for block in &self.blocks {
            h = block.forward(tape, store, h, &segments);
        }
        let h = self.norm.forward(tape, store, h);
        let owner: Vec<usize> = (0..images.len() * np).map(|i| i / np).collect();
        let pooled = tape.segment_sum(h, &owner, images.len());
        Ok(tape.affine(pooled, 1.0 / np as f64, 0.0))
    }
}

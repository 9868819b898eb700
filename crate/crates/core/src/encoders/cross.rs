//! Cross-modal molecule encoder: a molecule-level GIN whose output attends
//! over the embeddings of its substructures (encoded by a second GIN).

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use super::gin::{Gin, GraphBatch, GraphInput};
use crate::autograd::{AttnSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::molkit::{decompose, MoleculeGraph};
use crate::nn::{LayerNorm, Linear, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalInput {
    pub molecule: GraphInput,
    pub substructures: Vec<GraphInput>,
}

impl CrossModalInput {
    pub fn from_graph(g: &MoleculeGraph) -> Self {
        CrossModalInput {
            molecule: GraphInput::from_graph(g),
            substructures: decompose(g).iter().map(|s| GraphInput::from_graph(&s.graph)).collect(),
        }
    }
}

/// Query/key/value projections plus the residual layer norm.
#[derive(Debug, Clone)]
pub struct AttentionFuse {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl AttentionFuse {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, dim: usize) -> Self {
        AttentionFuse {
            q: Linear::new(store, rng, &alloc::format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &alloc::format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &alloc::format!("{name}.v"), dim, dim),
            norm: LayerNorm::new(store, &alloc::format!("{name}.ln"), dim),
            dim,
        }
    }

    /// Row `i` of `mol` attends over rows `groups[i]` of `subs`. Returns the
    /// fused rows and the attention node (for inspecting weights).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mol: Var,
        subs: Var,
        groups: &[Range<usize>],
        mask: Option<Vec<bool>>,
    ) -> Result<(Var, Var)> {
        if let Some(m) = &mask {
            if groups.iter().any(|g| g.clone().all(|j| m[j])) {
                return Err(Error::AllMasked);
            }
        }
        if groups.iter().any(|g| g.is_empty()) {
            return Err(Error::AllMasked);
        }
        let q = self.q.forward(tape, store, mol);
        let k = self.k.forward(tape, store, subs);
        let v = self.v.forward(tape, store, subs);
        let spec = AttnSpec {
            q_segments: (0..groups.len()).map(|i| i..i + 1).collect(),
            kv_segments: groups.to_vec(),
            heads: 1,
            scale: 1.0 / math::sqrt(self.dim as f64),
            key_mask: mask,
        };
        let attn = tape.attention(q, k, v, spec);
        let res = tape.add(mol, attn);
        Ok((self.norm.forward(tape, store, res), attn))
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalEncoder {
    pub mol_gin: Gin,
    pub sub_gin: Gin,
    pub fuse: AttentionFuse,
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
}

impl CrossModalEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, dim: usize, gin_layers: usize) -> Self {
        CrossModalEncoder {
            mol_gin: Gin::new(store, rng, "cross.mol_gin", dim, gin_layers),
            sub_gin: Gin::new(store, rng, "cross.sub_gin", dim, gin_layers),
            fuse: AttentionFuse::new(store, rng, "cross.fuse", dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.fuse.dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[&CrossModalInput]) -> Result<Var> {
        let mols: Vec<&GraphInput> = inputs.iter().map(|i| &i.molecule).collect();
        let mol = self.mol_gin.forward(tape, store, &GraphBatch::new(&mols))?;
        let subs_in: Vec<&GraphInput> = inputs.iter().flat_map(|i| i.substructures.iter()).collect();
        let subs = self.sub_gin.forward(tape, store, &GraphBatch::new(&subs_in))?;

        // Order each molecule's substructure rows by content so the attention
        // sum does not depend on atom numbering.
        let mut order = Vec::with_capacity(subs_in.len());
        let mut groups = Vec::with_capacity(inputs.len());
        let sv = tape.value(subs);
        let mut start = 0;
        for inp in inputs {
            let end = start + inp.substructures.len();
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&a, &b| cmp_rows(sv.row(a), sv.row(b)));
            order.extend(idx);
            groups.push(start..end);
            start = end;
        }
        let subs = tape.gather_rows(subs, &order);
        Ok(self.fuse.forward(tape, store, mol, subs, &groups, None)?.0)
    }

    /// Embeddings without a gradient tape, in batches.
    pub fn embed_all(&self, store: &ParamStore, inputs: &[&CrossModalInput], batch: usize) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(inputs.len() * self.dim());
        for chunk in inputs.chunks(batch.max(1)) {
            let mut tape = Tape::new();
            let v = self.forward(&mut tape, store, chunk)?;
            rows.extend_from_slice(&tape.value(v).data);
        }
        Ok(Tensor::from_vec(inputs.len(), self.dim(), rows))
    }
}

/// Fuse a single molecule embedding with its substructure rows; returns the
/// fused embedding and the attention weights over `subs` rows.
pub fn substructure_fuse(
    fuse: &AttentionFuse,
    store: &ParamStore,
    mol: &Tensor,
    subs: &Tensor,
    padded: &[bool],
) -> Result<(Tensor, Vec<f64>)> {
    if mol.cols != fuse.dim || subs.cols != fuse.dim || padded.len() != subs.rows {
        return Err(Error::DimensionMismatch(alloc::format!(
            "fuse expects width {} with one mask flag per row",
            fuse.dim
        )));
    }
    let mut tape = Tape::new();
    let m = tape.leaf(mol.clone());
    let s = tape.leaf(subs.clone());
    let (out, attn) = fuse.forward(&mut tape, store, m, s, &[0..subs.rows], Some(padded.to_vec()))?;
    let weights = tape.attention_probs(attn).map(<[f64]>::to_vec).unwrap_or_default();
    Ok((tape.value(out).clone(), weights))
}

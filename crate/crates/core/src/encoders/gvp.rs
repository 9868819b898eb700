//! Geometric vector perceptron encoder over a 3D conformer.
//!
//! Vector features are stored as a `3n x C` matrix: rows `3i..3i+3` hold
//! the x/y/z components of node `i`'s `C` vector channels. Channel mixing is
//! a right multiplication, so it commutes with rotations of the coordinates.

use alloc::vec::Vec;

use super::gin::GraphInput;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::molkit::{Conformer, MoleculeGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::{LayerNorm, Linear, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const RBF_COUNT: usize = 16;
pub const RBF_MAX: f64 = 4.0;
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GvpWidths {
    pub node_s: usize,
    pub node_v: usize,
    pub edge_s: usize,
    pub edge_v: usize,
    pub layers: usize,
}

impl Default for GvpWidths {
    fn default() -> Self {
        GvpWidths { node_s: 128, node_v: 64, edge_s: 32, edge_v: 1, layers: 3 }
    }
}

/// Conformer-derived inputs of one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricInput {
    pub nodes: Vec<[f64; NODE_FEATURES]>,
    pub edges: Vec<(usize, usize)>,
    /// RBF expansion of the edge length followed by the bond features.
    pub edge_scalars: Vec<[f64; RBF_COUNT + EDGE_FEATURES]>,
    /// Unit vector from source to target.
    pub edge_dirs: Vec<[f64; 3]>,
}

pub fn rbf(d: f64) -> [f64; RBF_COUNT] {
    let spacing = RBF_MAX / (RBF_COUNT - 1) as f64;
    let mut out = [0.0; RBF_COUNT];
    for (k, o) in out.iter_mut().enumerate() {
        let z = (d - k as f64 * spacing) / spacing;
        *o = math::exp(-z * z);
    }
    out
}

impl GeometricInput {
    pub fn new(graph: &MoleculeGraph, conf: &Conformer) -> Result<Self> {
        let base = GraphInput::from_graph(graph);
        let mut edge_scalars = Vec::with_capacity(base.edges.len());
        let mut edge_dirs = Vec::with_capacity(base.edges.len());
        for (&(a, b), f) in base.edges.iter().zip(&base.edge_feats) {
            let d = math::sub3(conf.coords[b], conf.coords[a]);
            let len = math::norm3(d);
            if len < 1e-6 {
                return Err(Error::DegenerateEdge(a, b));
            }
            let mut s = [0.0; RBF_COUNT + EDGE_FEATURES];
            s[..RBF_COUNT].copy_from_slice(&rbf(len));
            s[RBF_COUNT..].copy_from_slice(f);
            edge_scalars.push(s);
            edge_dirs.push([d[0] / len, d[1] / len, d[2] / len]);
        }
        Ok(GeometricInput { nodes: base.nodes, edges: base.edges, edge_scalars, edge_dirs })
    }
}

#[derive(Debug, Clone)]
pub struct GvpLayer {
    /// Vector channel mixing `W_h` (no bias).
    pub w_h: Linear,
    /// Vector output mixing `W_μ` (no bias).
    pub w_mu: Linear,
    /// Scalar perceptron over `[|W_h V| ‖ s]`.
    pub mlp: Linear,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct GvpEncoder {
    pub widths: GvpWidths,
    pub lift: Linear,
    pub edge_embed: Linear,
    pub layers: Vec<GvpLayer>,
    pub readout: Linear,
    pub dim: usize,
}

pub struct GvpOutput {
    pub embedding: Var,
    pub scalars: Var,
    pub vectors: Var,
}

impl GvpEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, widths: GvpWidths, dim: usize) -> Self {
        let lift = Linear::new(store, rng, "gvp.lift", NODE_FEATURES, widths.node_s);
        let edge_embed = Linear::new(store, rng, "gvp.edge", RBF_COUNT + EDGE_FEATURES, widths.edge_s);
        let v_in = widths.node_v + widths.edge_v;
        let hidden = v_in.max(widths.node_v);
        let layers = (0..widths.layers)
            .map(|l| GvpLayer {
                w_h: Linear::no_bias(store, rng, &alloc::format!("gvp.l{l}.wh"), v_in, hidden),
                w_mu: Linear::no_bias(store, rng, &alloc::format!("gvp.l{l}.wmu"), hidden, widths.node_v),
                mlp: Linear::new(
                    store,
                    rng,
                    &alloc::format!("gvp.l{l}.mlp"),
                    hidden + widths.node_s + widths.edge_s,
                    widths.node_s,
                ),
                norm: LayerNorm::new(store, &alloc::format!("gvp.l{l}.ln"), widths.node_s),
            })
            .collect();
        let readout = Linear::new(store, rng, "gvp.readout", widths.node_s, dim);
        GvpEncoder { widths, lift, edge_embed, layers, readout, dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &[&GeometricInput]) -> Var {
        self.forward_full(tape, store, inputs).embedding
    }

    pub fn forward_full(&self, tape: &mut Tape, store: &ParamStore, inputs: &[&GeometricInput]) -> GvpOutput {
        let w = self.widths;
        let n: usize = inputs.iter().map(|g| g.nodes.len()).sum();
        let mut x = Vec::with_capacity(n * NODE_FEATURES);
        let mut es = Vec::new();
        let mut ev = Vec::new();
        let (mut src, mut dst, mut owner) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
        let mut offset = 0;
        for (gi, g) in inputs.iter().enumerate() {
            for f in &g.nodes {
                x.extend_from_slice(f);
                owner.push(gi);
            }
            for ((&(a, b), s), d) in g.edges.iter().zip(&g.edge_scalars).zip(&g.edge_dirs) {
                src.push(offset + a);
                dst.push(offset + b);
                es.extend_from_slice(s);
                ev.extend_from_slice(d);
            }
            offset += g.nodes.len();
        }
        let e = src.len();
        let vsrc: Vec<usize> = src.iter().flat_map(|&j| [3 * j, 3 * j + 1, 3 * j + 2]).collect();
        let vdst: Vec<usize> = dst.iter().flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();

        let x = tape.leaf(Tensor::from_vec(n, NODE_FEATURES, x));
        let mut s = self.lift.forward(tape, store, x);
        let mut v = tape.leaf(Tensor::zeros(3 * n, w.node_v));
        let es = tape.leaf(Tensor::from_vec(e, RBF_COUNT + EDGE_FEATURES, es));
        let e_s = self.edge_embed.forward(tape, store, es);
        // Edge vector channel: the 3 components as a 3E x 1 column.
        let e_v = tape.leaf(Tensor::from_vec(3 * e, 1, ev));

        for layer in &self.layers {
            let sj = tape.gather_rows(s, &src);
            let s_in = tape.concat_cols(&[sj, e_s]);
            let vj = tape.gather_rows(v, &vsrc);
            let v_in = tape.concat_cols(&[vj, e_v]);
            let vh = layer.w_h.forward(tape, store, v_in);
            let norms = tape.vec_norms(vh, NORM_EPS);
            let f_sv = tape.concat_cols(&[norms, s_in]);
            let s_msg = layer.mlp.forward(tape, store, f_sv);
            let s_msg = tape.relu(s_msg);
            let f_v = layer.w_mu.forward(tape, store, vh);
            let gate = tape.vec_norms(f_v, NORM_EPS);
            let gate = tape.sigmoid(gate);
            let gate = tape.repeat3(gate);
            let v_msg = tape.mul(gate, f_v);
            let s_agg = tape.segment_sum(s_msg, &dst, n);
            let v_agg = tape.segment_sum(v_msg, &vdst, 3 * n);
            let s_new = tape.add(s, s_agg);
            s = layer.norm.forward(tape, store, s_new);
            v = tape.add(v, v_agg);
        }
        let pooled = tape.segment_sum(s, &owner, inputs.len());
        let counts: Vec<f64> =
            inputs.iter().map(|g| 1.0 / g.nodes.len().max(1) as f64).collect();
        let inv = tape.leaf(Tensor::from_vec(inputs.len(), 1, counts));
        let mean = tape.mul_col(pooled, inv);
        GvpOutput { embedding: self.readout.forward(tape, store, mean), scalars: s, vectors: v }
    }
}

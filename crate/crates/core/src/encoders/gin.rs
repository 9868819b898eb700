//! Graph isomorphism network over atom/bond features with sum readout.

use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::molkit::{edge_features, node_features, MoleculeGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::{Linear, Mlp, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Node and directed-edge features of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: Vec<[f64; NODE_FEATURES]>,
    /// Both directions of every bond: `(source, target)`.
    pub edges: Vec<(usize, usize)>,
    pub edge_feats: Vec<[f64; EDGE_FEATURES]>,
}

impl GraphInput {
    pub fn from_graph(g: &MoleculeGraph) -> Self {
        let nodes = node_features(g);
        let ef = edge_features(g);
        let mut edges = Vec::with_capacity(2 * g.bonds().len());
        let mut edge_feats = Vec::with_capacity(2 * g.bonds().len());
        for (b, f) in g.bonds().iter().zip(ef) {
            edges.push((b.a, b.b));
            edge_feats.push(f);
            edges.push((b.b, b.a));
            edge_feats.push(f);
        }
        GraphInput { nodes, edges, edge_feats }
    }
}

/// Disjoint union of several graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub x: Tensor,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_x: Tensor,
    pub node_graph: Vec<usize>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&GraphInput]) -> Self {
        let n: usize = graphs.iter().map(|g| g.nodes.len()).sum();
        let e: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut x = Vec::with_capacity(n * NODE_FEATURES);
        let mut edge_x = Vec::with_capacity(e * EDGE_FEATURES);
        let (mut src, mut dst, mut node_graph) = (Vec::with_capacity(e), Vec::with_capacity(e), Vec::with_capacity(n));
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            for f in &g.nodes {
                x.extend_from_slice(f);
                node_graph.push(gi);
            }
            for (&(a, b), f) in g.edges.iter().zip(&g.edge_feats) {
                src.push(offset + a);
                dst.push(offset + b);
                edge_x.extend_from_slice(f);
            }
            offset += g.nodes.len();
        }
        GraphBatch {
            x: Tensor::from_vec(n, NODE_FEATURES, x),
            src,
            dst,
            edge_x: Tensor::from_vec(e, EDGE_FEATURES, edge_x),
            node_graph,
            n_graphs: graphs.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GinLayer {
    pub message: Linear,
    pub eps: ParamId,
    pub combine: Mlp,
}

#[derive(Debug, Clone)]
pub struct Gin {
    pub lift: Linear,
    pub layers: Vec<GinLayer>,
    pub readout: Linear,
    pub dim: usize,
}

impl Gin {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, dim: usize, layers: usize) -> Self {
        let lift = Linear::new(store, rng, &alloc::format!("{name}.lift"), NODE_FEATURES, dim);
        let layers = (0..layers)
            .map(|l| GinLayer {
                message: Linear::new(store, rng, &alloc::format!("{name}.l{l}.msg"), dim + EDGE_FEATURES, dim),
                eps: store.add(alloc::format!("{name}.l{l}.eps"), Tensor::scalar(0.0)),
                combine: Mlp::new(store, rng, &alloc::format!("{name}.l{l}.mlp"), &[dim, dim, dim]),
            })
            .collect();
        let readout = Linear::new(store, rng, &alloc::format!("{name}.readout"), dim, dim);
        Gin { lift, layers, readout, dim }
    }

    /// One `dim`-wide row per graph in the batch.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var> {
        if batch.x.cols != self.lift.input || batch.edge_x.cols != EDGE_FEATURES {
            return Err(Error::DimensionMismatch(alloc::format!(
                "node features {} / edge features {} do not fit the encoder",
                batch.x.cols, batch.edge_x.cols
            )));
        }
        let n = batch.x.rows;
        let x = tape.leaf(batch.x.clone());
        let ex = tape.leaf(batch.edge_x.clone());
        let mut h = self.lift.forward(tape, store, x);
        for layer in &self.layers {
            let hu = tape.gather_rows(h, &batch.src);
            let m = tape.concat_cols(&[hu, ex]);
            let m = layer.message.forward(tape, store, m);
            let m = tape.relu(m);
            let agg = tape.segment_sum(m, &batch.dst, n);
            let eps = tape.param(store, layer.eps);
            let scaled = tape.scale_by(h, eps);
            let self_term = tape.add(h, scaled);
            let pre = tape.add(self_term, agg);
            h = layer.combine.forward(tape, store, pre);
        }
        let pooled = tape.segment_sum(h, &batch.node_graph, batch.n_graphs);
        Ok(self.readout.forward(tape, store, pooled))
    }
}

//! Seeded coordinate generation: layered placement, jitter and relaxation.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::graph::MoleculeGraph;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, SeededRng};

pub const BOND_TARGET: f64 = 1.5;
pub const BOND_MIN: f64 = 0.8;
pub const BOND_MAX: f64 = 2.0;
pub const MAX_JITTER: f64 = 0.2;
pub const RELAX_STEPS: usize = 200;

const REPULSION_RADIUS: f64 = 2.4;
const BOND_STIFFNESS: f64 = 1.0;
const REPULSION_STIFFNESS: f64 = 0.3;
const STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub coords: Vec<[f64; 3]>,
    pub seed: u64,
}

impl Conformer {
    pub fn bond_lengths(&self, graph: &MoleculeGraph) -> Vec<f64> {
        graph
            .bonds()
            .iter()
            .map(|b| math::dist3(self.coords[b.a], self.coords[b.b]))
            .collect()
    }
}

pub fn generate_conformer(graph: &MoleculeGraph, seed: u64) -> Result<Conformer> {
    let mut r = rng::stream(seed, rng::streams::CONFORMER);
    let coords = layout(graph, &mut r, true);
    let conf = Conformer { coords, seed };
    for (i, len) in conf.bond_lengths(graph).into_iter().enumerate() {
        if !(BOND_MIN..=BOND_MAX).contains(&len) {
            return Err(Error::RelaxationFailure { bond: i, length: len });
        }
    }
    Ok(conf)
}

/// Breadth-first placement from atom 0 followed by spring/repulsion
/// relaxation. With `three_d == false` every z coordinate stays 0.
pub(crate) fn layout(graph: &MoleculeGraph, rng: &mut SeededRng, three_d: bool) -> Vec<[f64; 3]> {
    let n = graph.atom_count();
    let mut pos = vec![[0.0f64; 3]; n];
    let mut heading = vec![0.0f64; n];
    let mut depth = vec![0usize; n];
    let mut placed = vec![false; n];
    placed[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let children: Vec<usize> =
            graph.neighbors(u).iter().map(|&(v, _)| v).filter(|&v| !placed[v]).collect();
        let base = if u == 0 { -PI } else { heading[u] + PI };
        let spread = if u == 0 { children.len() } else { children.len() + 1 };
        for (k, &v) in children.iter().enumerate() {
            let slot = if u == 0 { k } else { k + 1 };
            let angle = base + 2.0 * PI * slot as f64 / spread.max(1) as f64;
            let lift = if three_d {
                if depth[u].is_multiple_of(2) { 0.45 } else { -0.45 }
            } else {
                0.0
            };
            let dir = [math::cos(angle), math::sin(angle), lift];
            let norm = math::norm3(dir);
            let jitter = jitter(rng, three_d);
            for c in 0..3 {
                pos[v][c] = pos[u][c] + BOND_TARGET * dir[c] / norm + jitter[c];
            }
            heading[v] = angle;
            depth[v] = depth[u] + 1;
            placed[v] = true;
            queue.push_back(v);
        }
    }
    relax(graph, &mut pos);
    pos
}

fn jitter(rng: &mut SeededRng, three_d: bool) -> [f64; 3] {
    let mut d = [rng::normal(rng), rng::normal(rng), if three_d { rng::normal(rng) } else { 0.0 }];
    let norm = math::norm3(d).max(1e-12);
    let magnitude = rng::uniform(rng, 0.0, MAX_JITTER);
    for c in d.iter_mut() {
        *c *= magnitude / norm;
    }
    d
}

fn relax(graph: &MoleculeGraph, pos: &mut [[f64; 3]]) {
    let n = pos.len();
    if n < 2 {
        return;
    }
    let mut bonded = vec![false; n * n];
    for b in graph.bonds() {
        bonded[b.a * n + b.b] = true;
        bonded[b.b * n + b.a] = true;
    }
    let mut grad = vec![[0.0f64; 3]; n];
    for _ in 0..RELAX_STEPS {
        for g in grad.iter_mut() {
            *g = [0.0; 3];
        }
        for b in graph.bonds() {
            let d = math::sub3(pos[b.a], pos[b.b]);
            let len = math::norm3(d).max(1e-9);
            let coef = 2.0 * BOND_STIFFNESS * (len - BOND_TARGET) / len;
            for c in 0..3 {
                grad[b.a][c] += coef * d[c];
                grad[b.b][c] -= coef * d[c];
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if bonded[i * n + j] {
                    continue;
                }
                let d = math::sub3(pos[i], pos[j]);
                let len = math::norm3(d).max(1e-9);
                if len >= REPULSION_RADIUS {
                    continue;
                }
                let coef = -2.0 * REPULSION_STIFFNESS * (REPULSION_RADIUS - len) / len;
                for c in 0..3 {
                    grad[i][c] += coef * d[c];
                    grad[j][c] -= coef * d[c];
                }
            }
        }
        for (p, g) in pos.iter_mut().zip(grad.iter()) {
            for c in 0..3 {
                p[c] -= STEP * g[c];
            }
        }
    }
}

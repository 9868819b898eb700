//! TransE knowledge-graph embeddings trained with a margin ranking loss.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::molkit::KgTriple;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

pub const MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KgEmbedding {
    pub entities: Tensor,
    pub relations: Tensor,
    /// Entity ids that occur in the training triples, sorted.
    pub registered: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TransEConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig { dim: 64, epochs: 200, lr: 0.05, seed: 0 }
    }
}

fn clamp_row(t: &mut Tensor, r: usize) {
    let row = t.row_mut(r);
    let n = math::sqrt(row.iter().map(|x| x * x).sum());
    if n > 1.0 {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
}

impl KgEmbedding {
    /// `‖h + r − t‖₂`.
    pub fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        let (hv, rv, tv) = (self.entities.row(h), self.relations.row(r), self.entities.row(t));
        math::sqrt(hv.iter().zip(rv).zip(tv).map(|((a, b), c)| (a + b - c) * (a + b - c)).sum())
    }

    pub fn max_entity_norm(&self) -> f64 {
        (0..self.entities.rows)
            .map(|i| math::sqrt(self.entities.row(i).iter().map(|x| x * x).sum()))
            .fold(0.0, f64::max)
    }

    pub fn lookup(&self, entity: usize) -> Result<&[f64]> {
        if self.registered.binary_search(&entity).is_ok() {
            Ok(self.entities.row(entity))
        } else {
            Err(Error::UnknownEntity(alloc::format!("entity {entity}")))
        }
    }
}

fn init(n_entities: usize, n_relations: usize, dim: usize, rng: &mut SeededRng) -> (Tensor, Tensor) {
    let bound = 6.0 / math::sqrt(dim as f64);
    let mut ent = Tensor::from_vec(
        n_entities,
        dim,
        (0..n_entities * dim).map(|_| rng::uniform(rng, -bound, bound)).collect(),
    );
    let mut rel = Tensor::from_vec(
        n_relations,
        dim,
        (0..n_relations * dim).map(|_| rng::uniform(rng, -bound, bound)).collect(),
    );
    for r in 0..n_relations {
        let row = rel.row_mut(r);
        let n = math::sqrt(row.iter().map(|x| x * x).sum()).max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
    }
    for e in 0..n_entities {
        clamp_row(&mut ent, e);
    }
    (ent, rel)
}

/// Stochastic gradient descent over the triples, one corrupted negative per
/// positive per epoch. Entity rows are clamped to norm ≤ 1 after every step.
pub fn transe_train(
    triples: &[KgTriple],
    n_entities: usize,
    n_relations: usize,
    config: &TransEConfig,
) -> Result<KgEmbedding> {
    if triples.is_empty() {
        return Err(Error::EmptyKg);
    }
    let mut r = rng::stream(config.seed, rng::streams::TRANSE);
    let (mut ent, mut rel) = init(n_entities, n_relations, config.dim, &mut r);
    let mut registered: Vec<usize> = triples.iter().flat_map(|t| [t.head, t.tail]).collect();
    registered.sort_unstable();
    registered.dedup();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let d = config.dim;
    let mut diff_p = alloc::vec![0.0; d];
    let mut diff_n = alloc::vec![0.0; d];
    for _ in 0..config.epochs {
        rng::shuffle(&mut r, &mut order);
        for &i in &order {
            let t = triples[i];
            let corrupt_head = rng::uniform(&mut r, 0.0, 1.0) < 0.5;
            let mut other = registered[r.random_range(0..registered.len())];
            if other == if corrupt_head { t.head } else { t.tail } {
                other = registered[(registered.binary_search(&other).unwrap_or(0) + 1) % registered.len()];
            }
            let (nh, nt) = if corrupt_head { (other, t.tail) } else { (t.head, other) };
            for k in 0..d {
                diff_p[k] = ent.get(t.head, k) + rel.get(t.relation, k) - ent.get(t.tail, k);
                diff_n[k] = ent.get(nh, k) + rel.get(t.relation, k) - ent.get(nt, k);
            }
            let sp = math::sqrt(diff_p.iter().map(|x| x * x).sum());
            let sn = math::sqrt(diff_n.iter().map(|x| x * x).sum());
            if MARGIN + sp - sn <= 0.0 {
                continue;
            }
            let (sp, sn) = (sp.max(1e-12), sn.max(1e-12));
            for k in 0..d {
                let gp = diff_p[k] / sp;
                let gn = diff_n[k] / sn;
                let lr = config.lr;
                ent.data[t.head * d + k] -= lr * gp;
                ent.data[t.tail * d + k] += lr * gp;
                rel.data[t.relation * d + k] -= lr * (gp - gn);
                ent.data[nh * d + k] += lr * gn;
                ent.data[nt * d + k] -= lr * gn;
            }
            for e in [t.head, t.tail, nh, nt] {
                clamp_row(&mut ent, e);
            }
        }
    }
    Ok(KgEmbedding { entities: ent, relations: rel, registered })
}

//! Synthetic knowledge graph linking molecules to class, target and
//! indication entities derived from binned descriptors.

use alloc::vec::Vec;

use super::descriptors::PropertyVector;
use super::graph::Fnv;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Treats = 0,
    Binds = 1,
    ClassOf = 2,
}

impl Relation {
    pub const COUNT: usize = 3;
}

pub const CLASS_ENTITIES: usize = 16;
pub const TARGET_ENTITIES: usize = 24;
pub const INDICATION_ENTITIES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KgTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    /// Molecule entities occupy `0..n_molecules`; tail entities follow.
    pub n_molecules: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub triples: Vec<KgTriple>,
}

impl KnowledgeGraph {
    pub fn triples_of(&self, molecule: usize) -> impl Iterator<Item = &KgTriple> {
        self.triples.iter().filter(move |t| t.head == molecule)
    }
}

fn bucket(seed: u64, tag: u8, key: &[i64], modulo: usize) -> u64 {
    let mut h = Fnv::new();
    h.write_u64(seed);
    h.write(&[tag]);
    for k in key {
        h.write(&k.to_le_bytes());
    }
    h.finish() % modulo as u64
}

/// One to three triples per molecule. Entity choice depends only on the
/// binned descriptors and the seed, so molecules with equal descriptors get
/// equal tails.
pub fn synth_kg(molecules: &[PropertyVector], seed: u64) -> KnowledgeGraph {
    let n = molecules.len();
    let class_base = n;
    let target_base = class_base + CLASS_ENTITIES;
    let indication_base = target_base + TARGET_ENTITIES;
    let mut triples = Vec::new();
    for (m, p) in molecules.iter().enumerate() {
        let mw_bin = math::floor(p.molecular_weight / 30.0) as i64;
        let class_key = [mw_bin, p.aromatic_rings as i64];
        triples.push(KgTriple {
            head: m,
            relation: Relation::ClassOf as usize,
            tail: class_base + bucket(seed, 0, &class_key, CLASS_ENTITIES) as usize,
        });
        if p.hba + p.hbd > 0 {
            let key = [p.hba as i64, p.hbd as i64];
            triples.push(KgTriple {
                head: m,
                relation: Relation::Binds as usize,
                tail: target_base + bucket(seed, 1, &key, TARGET_ENTITIES) as usize,
            });
        }
        let key = [math::floor(p.psa / 20.0) as i64, p.aromatic_rings as i64, math::floor(p.molecular_weight / 60.0) as i64];
        if bucket(seed, 2, &key, 2) == 1 {
            triples.push(KgTriple {
                head: m,
                relation: Relation::Treats as usize,
                tail: indication_base + bucket(seed, 3, &key, INDICATION_ENTITIES) as usize,
            });
        }
    }
    KnowledgeGraph {
        n_molecules: n,
        n_entities: indication_base + INDICATION_ENTITIES,
        n_relations: Relation::COUNT,
        triples,
    }
}

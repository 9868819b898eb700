//! Rule-based fragmentation into substructures.
//!
//! A bond is cut when it is acyclic, single and non-aromatic, and either
//! exactly one endpoint is a ring atom or an endpoint carries a double or
//! triple bond. Connected components of what remains are the substructures.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{BondOrder, MoleculeGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct Substructure {
    /// Parent atom indices, ascending.
    pub atoms: Vec<usize>,
    pub graph: MoleculeGraph,
}

pub fn cuttable_bonds(graph: &MoleculeGraph) -> Vec<bool> {
    let ring = graph.ring_bonds();
    let atoms = graph.atoms();
    let bonds = graph.bonds();
    let near_unsaturation = |atom: usize, except: usize| {
        graph
            .neighbors(atom)
            .iter()
            .any(|&(_, b)| b != except && matches!(bonds[b].order, BondOrder::Double | BondOrder::Triple))
    };
    bonds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if ring[i] || b.order != BondOrder::Single {
                return false;
            }
            let ring_boundary = atoms[b.a].in_ring != atoms[b.b].in_ring;
            ring_boundary || near_unsaturation(b.a, i) || near_unsaturation(b.b, i)
        })
        .collect()
}

pub fn decompose(graph: &MoleculeGraph) -> Vec<Substructure> {
    let cut = cuttable_bonds(graph);
    if !cut.iter().any(|&c| c) {
        return vec![Substructure { atoms: (0..graph.atom_count()).collect(), graph: graph.clone() }];
    }
    let n = graph.atom_count();
    let mut component = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        component[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, b) in graph.neighbors(u) {
                if !cut[b] && component[v] == usize::MAX {
                    component[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        let sub = graph.induced(&members).expect("components are connected");
        out.push(Substructure { atoms: members, graph: sub });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molkit::parse_smiles;

    #[test]
    fn nothing_to_cut() {
        for s in ["C", "CCCC", "c1ccccc1"] {
            let g = parse_smiles(s).unwrap();
            let subs = decompose(&g);
            assert_eq!(subs.len(), 1, "{s}");
            assert_eq!(subs[0].atoms.len(), g.atom_count());
        }
    }

    #[test]
    fn ring_and_chain_split() {
        let g = parse_smiles("c1ccccc1CC").unwrap();
        let subs = decompose(&g);
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].atoms, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(subs[1].atoms, vec![6, 7]);
    }

    #[test]
    fn conjugation_boundary() {
        let subs = decompose(&parse_smiles("C=CCC").unwrap());
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].atoms, vec![0, 1]);
        assert_eq!(subs[1].atoms, vec![2, 3]);
    }
}

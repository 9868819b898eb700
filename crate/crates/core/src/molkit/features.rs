//! Per-atom and per-bond feature vectors.
//!
//! Node channels, in order:
//! 0 element-class index, 1 degree, 2 formal charge, 3 chirality flag
//! (always 0 for this grammar), 4 implicit-H count, 5 hybridization class
//! (1 = sp, 2 = sp2, 3 = sp3), 6 aromatic flag, 7 in-ring flag,
//! 8 atomic mass / 100.
//!
//! Bond channels: one-hot order (single, double, triple, aromatic), one-hot
//! stereo (none, cis, trans), conjugation flag.

use alloc::vec::Vec;

use super::graph::{BondOrder, MoleculeGraph};

pub const NODE_FEATURES: usize = 9;
pub const EDGE_FEATURES: usize = 8;

pub fn hybridization(graph: &MoleculeGraph, atom: usize) -> u8 {
    let mut doubles = 0;
    let mut triple = false;
    let mut aromatic = graph.atoms()[atom].aromatic;
    for &(_, b) in graph.neighbors(atom) {
        match graph.bonds()[b].order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triple = true,
            BondOrder::Aromatic => aromatic = true,
            BondOrder::Single => {}
        }
    }
    if triple || doubles >= 2 {
        1
    } else if doubles == 1 || aromatic {
        2
    } else {
        3
    }
}

pub fn node_features(graph: &MoleculeGraph) -> Vec<[f64; NODE_FEATURES]> {
    graph
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            [
                a.element.class_index() as f64,
                graph.degree(i) as f64,
                a.charge as f64,
                0.0,
                a.implicit_h as f64,
                hybridization(graph, i) as f64,
                a.aromatic as u8 as f64,
                a.in_ring as u8 as f64,
                a.element.mass() / 100.0,
            ]
        })
        .collect()
}

pub fn edge_features(graph: &MoleculeGraph) -> Vec<[f64; EDGE_FEATURES]> {
    graph
        .bonds()
        .iter()
        .map(|b| {
            let mut f = [0.0; EDGE_FEATURES];
            f[b.order.index()] = 1.0;
            f[4 + b.stereo.index()] = 1.0;
            f[7] = b.conjugated as u8 as f64;
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molkit::parse_smiles;

    #[test]
    fn methane_channels() {
        let f = node_features(&parse_smiles("C").unwrap());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0][1], 0.0);
        assert_eq!(f[0][4], 4.0);
        assert_eq!(f[0][6], 0.0);
        assert_eq!(f[0][5], 3.0);
    }

    #[test]
    fn benzene_atom() {
        let f = node_features(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(f[0][1], 2.0);
        assert_eq!(f[0][6], 1.0);
        assert_eq!(f[0][7], 1.0);
        assert_eq!(f[0][5], 2.0);
    }

    #[test]
    fn oxygen_class_and_mass() {
        let f = node_features(&parse_smiles("O").unwrap());
        assert_eq!(f[0][0], 3.0);
        assert!((f[0][8] - 0.15999).abs() < 1e-12);
    }

    #[test]
    fn bond_encodings() {
        let single = edge_features(&parse_smiles("CC").unwrap());
        assert_eq!(single[0], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let arom = edge_features(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(arom[0], [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let double = edge_features(&parse_smiles("C=C").unwrap());
        assert_eq!(&double[0][..4], &[0.0, 1.0, 0.0, 0.0]);
        let conj = parse_smiles("C=CC=C").unwrap();
        assert!(conj.bonds().iter().all(|b| b.conjugated));
    }
}

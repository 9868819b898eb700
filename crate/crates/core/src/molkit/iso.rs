//! Backtracking isomorphism test for small labelled molecular graphs.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{BondOrder, MoleculeGraph};

fn atom_label(g: &MoleculeGraph, i: usize) -> (usize, i8, bool, u8, usize) {
    let a = &g.atoms()[i];
    (a.element.class_index(), a.charge, a.aromatic, a.implicit_h, g.degree(i))
}

fn bond_between(g: &MoleculeGraph, a: usize, b: usize) -> Option<BondOrder> {
    g.neighbors(a).iter().find(|&&(v, _)| v == b).map(|&(_, bond)| g.bonds()[bond].order)
}

/// Whether an atom bijection exists preserving element, charge, aromaticity,
/// hydrogen count and bond orders.
pub fn is_isomorphic(g1: &MoleculeGraph, g2: &MoleculeGraph) -> bool {
    let n = g1.atom_count();
    if n != g2.atom_count() || g1.bonds().len() != g2.bonds().len() {
        return false;
    }
    let mut l1: Vec<_> = (0..n).map(|i| atom_label(g1, i)).collect();
    let mut l2: Vec<_> = (0..n).map(|i| atom_label(g2, i)).collect();
    let (labels1, labels2) = (l1.clone(), l2.clone());
    l1.sort_unstable();
    l2.sort_unstable();
    if l1 != l2 {
        return false;
    }

    // Match atoms of g1 in breadth-first order so each new atom has a mapped
    // neighbour whenever possible.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    seen[0] = true;
    order.push(0);
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &(v, _) in g1.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                order.push(v);
            }
        }
    }

    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(g1, g2, &labels1, &labels2, &order, 0, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    g1: &MoleculeGraph,
    g2: &MoleculeGraph,
    labels1: &[(usize, i8, bool, u8, usize)],
    labels2: &[(usize, i8, bool, u8, usize)],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    for cand in 0..g2.atom_count() {
        if used[cand] || labels1[u] != labels2[cand] {
            continue;
        }
        let consistent = g1.neighbors(u).iter().all(|&(v, b)| {
            map[v] == usize::MAX || bond_between(g2, cand, map[v]) == Some(g1.bonds()[b].order)
        });
        if !consistent {
            continue;
        }
        map[u] = cand;
        used[cand] = true;
        if extend(g1, g2, labels1, labels2, order, depth + 1, map, used) {
            return true;
        }
        map[u] = usize::MAX;
        used[cand] = false;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molkit::parse_smiles;

    #[test]
    fn equivalent_spellings() {
        let a = parse_smiles("OCC").unwrap();
        let b = parse_smiles("CCO").unwrap();
        assert!(is_isomorphic(&a, &b));
        let ring = parse_smiles("C1CCCCC1O").unwrap();
        let ring2 = parse_smiles("OC1CCCCC1").unwrap();
        assert!(is_isomorphic(&ring, &ring2));
    }

    #[test]
    fn different_molecules() {
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("COC").unwrap();
        assert!(!is_isomorphic(&a, &b));
        assert!(is_isomorphic(&parse_smiles("C=CC").unwrap(), &parse_smiles("CC=C").unwrap()));
        assert!(!is_isomorphic(&parse_smiles("C=CC").unwrap(), &parse_smiles("CCC").unwrap()));
    }
}

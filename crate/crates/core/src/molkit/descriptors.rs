//! Additive physicochemical descriptors.

use super::graph::{Element, MoleculeGraph, HYDROGEN_MASS};

/// Polar-surface contribution per oxygen environment.
pub const PSA_OXYGEN: f64 = 20.0;
/// Polar-surface contribution per nitrogen environment.
pub const PSA_NITROGEN: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyVector {
    pub molecular_weight: f64,
    pub hba: u32,
    pub hbd: u32,
    pub psa: f64,
    pub aromatic_rings: u32,
}

impl PropertyVector {
    pub const CHANNELS: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.molecular_weight,
            self.hba as f64,
            self.hbd as f64,
            self.psa,
            self.aromatic_rings as f64,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        PropertyVector {
            molecular_weight: v[0],
            hba: v[1] as u32,
            hbd: v[2] as u32,
            psa: v[3],
            aromatic_rings: v[4] as u32,
        }
    }
}

pub fn descriptors(graph: &MoleculeGraph) -> PropertyVector {
    // Sum per element in a fixed order so the result does not depend on
    // atom numbering.
    let mut counts = [0u32; 10];
    let mut hydrogens = 0u32;
    let mut hba = 0;
    let mut hbd = 0;
    let mut n_oxygen = 0;
    let mut n_nitrogen = 0;
    for atom in graph.atoms() {
        counts[atom.element.class_index()] += 1;
        hydrogens += atom.implicit_h as u32;
        if matches!(atom.element, Element::N | Element::O) {
            hba += 1;
            if atom.implicit_h >= 1 {
                hbd += 1;
            }
        }
        match atom.element {
            Element::O => n_oxygen += 1,
            Element::N => n_nitrogen += 1,
            _ => {}
        }
    }
    let mut mw = 0.0;
    for (e, &c) in Element::ALL.iter().zip(counts.iter()) {
        mw += e.mass() * c as f64;
    }
    mw += HYDROGEN_MASS * hydrogens as f64;

    let atoms = graph.atoms();
    let aromatic_rings = graph
        .rings()
        .iter()
        .filter(|ring| ring.iter().all(|&a| atoms[a].aromatic))
        .count() as u32;

    PropertyVector {
        molecular_weight: mw,
        hba,
        hbd,
        psa: PSA_OXYGEN * n_oxygen as f64 + PSA_NITROGEN * n_nitrogen as f64,
        aromatic_rings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molkit::parse_smiles;

    #[test]
    fn water() {
        let p = descriptors(&parse_smiles("O").unwrap());
        assert!((p.molecular_weight - 18.015).abs() < 1e-9);
        assert_eq!((p.hba, p.hbd, p.aromatic_rings), (1, 1, 0));
        assert_eq!(p.psa, 20.0);
    }

    #[test]
    fn methane_has_no_polar_terms() {
        let p = descriptors(&parse_smiles("C").unwrap());
        assert_eq!((p.hba, p.hbd, p.psa), (0, 0, 0.0));
    }

    #[test]
    fn benzene() {
        let p = descriptors(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(p.aromatic_rings, 1);
        assert!((p.molecular_weight - 78.114).abs() < 1e-9);
    }

    #[test]
    fn fused_rings() {
        let p = descriptors(&parse_smiles("c1ccc2ccccc2c1").unwrap());
        assert_eq!(p.aromatic_rings, 2);
        let sat = descriptors(&parse_smiles("C1CCCCC1").unwrap());
        assert_eq!(sat.aromatic_rings, 0);
    }
}

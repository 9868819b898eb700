//! Molecule parsing and the raw per-modality observations derived from it.

mod conformer;
mod decompose;
mod descriptors;
mod features;
mod graph;
mod iso;
mod kg;
mod raster;
mod smiles;
mod text;

pub use conformer::{generate_conformer, Conformer, BOND_MAX, BOND_MIN, BOND_TARGET};
pub use decompose::{cuttable_bonds, decompose, Substructure};
pub use descriptors::{descriptors, PropertyVector, PSA_NITROGEN, PSA_OXYGEN};
pub use features::{edge_features, hybridization, node_features, EDGE_FEATURES, NODE_FEATURES};
pub use graph::{Atom, Bond, BondOrder, Element, Fnv, GraphError, MoleculeGraph, Stereo, HYDROGEN_MASS};
pub use iso::is_isomorphic;
pub use kg::{synth_kg, KgTriple, KnowledgeGraph, Relation};
pub use raster::{rasterize, MoleculeImage, DEFAULT_SIZE as DEFAULT_IMAGE_SIZE};
pub use smiles::{parse_smiles, write_smiles, SmilesError};
pub use text::{describe, tokenize, token_id, token_word, vocab_size, TextDescription, MAX_TOKENS};

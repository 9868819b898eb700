//! Molecular graph with ring perception and conjugation flags.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

macro_rules! elements {
    ( $(($variant:ident, $symbol:literal, $mass:literal, [$($valence:literal),*]),)* ) => {
        /// Elements of the supported organic subset.
        #[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Element {
            $( $variant, )*
        }

        impl Element {
            pub const ALL: &'static [Element] = &[$( Element::$variant, )*];

            pub fn symbol(self) -> &'static str {
                match self {
                    $( Element::$variant => $symbol, )*
                }
            }

            /// Standard atomic weight.
            pub fn mass(self) -> f64 {
                match self {
                    $( Element::$variant => $mass, )*
                }
            }

            /// Normal valences, lowest first.
            pub fn valences(self) -> &'static [u8] {
                match self {
                    $( Element::$variant => &[$($valence),*], )*
                }
            }

            pub fn from_symbol(s: &str) -> Option<Element> {
                match s {
                    $( $symbol => Some(Element::$variant), )*
                    _ => None,
                }
            }
        }
    };
}

elements!(
    (B, "B", 10.81, [3]),
    (C, "C", 12.011, [4]),
    (N, "N", 14.007, [3, 5]),
    (O, "O", 15.999, [2]),
    (P, "P", 30.974, [3, 5]),
    (S, "S", 32.06, [2, 4, 6]),
    (F, "F", 18.998, [1]),
    (Cl, "Cl", 35.45, [1]),
    (Br, "Br", 79.904, [1]),
    (I, "I", 126.904, [1]),
);

pub const HYDROGEN_MASS: f64 = 1.008;

impl Element {
    /// Position in [`Element::ALL`], used as the element-class feature.
    pub fn class_index(self) -> usize {
        self as usize
    }

    /// Elements that may be written in lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self, Element::B | Element::C | Element::N | Element::O | Element::P | Element::S)
    }

    pub fn is_heteroatom(self) -> bool {
        !matches!(self, Element::C)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    pub implicit_h: u8,
    pub in_ring: bool,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom { element, charge: 0, aromatic: false, implicit_h: 0, in_ring: false }
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Contribution to the valence sum; aromatic counts as one.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn is_multiple(self) -> bool {
        !matches!(self, BondOrder::Single)
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Stereo {
    #[default]
    None,
    Cis,
    Trans,
}

impl Stereo {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub conjugated: bool,
    pub stereo: Stereo,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond { a, b, order, conjugated: false, stereo: Stereo::None }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Structural violations found while assembling a graph.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("bond {0} references a missing atom")]
    BadEndpoint(usize),
    #[error("bond {0} joins an atom to itself")]
    SelfBond(usize),
    #[error("atoms {0} and {1} are bonded twice")]
    DuplicateBond(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("graph has no atoms")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    canonical_id: String,
}

impl MoleculeGraph {
    /// Validates topology, then derives ring membership, conjugation and the
    /// canonical id. Incoming `in_ring`/`conjugated` flags are overwritten.
    pub fn new(mut atoms: Vec<Atom>, mut bonds: Vec<Bond>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeMap::new();
        for (i, bond) in bonds.iter().enumerate() {
            if bond.a >= n || bond.b >= n {
                return Err(GraphError::BadEndpoint(i));
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfBond(i));
            }
            let key = (bond.a.min(bond.b), bond.a.max(bond.b));
            if seen.insert(key, i).is_some() {
                return Err(GraphError::DuplicateBond(key.0, key.1));
            }
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        if !is_connected(&adjacency) {
            return Err(GraphError::Disconnected);
        }

        let ring_bonds = ring_bond_mask(&adjacency, bonds.len());
        for atom in atoms.iter_mut() {
            atom.in_ring = false;
        }
        for (i, bond) in bonds.iter().enumerate() {
            if ring_bonds[i] {
                atoms[bond.a].in_ring = true;
                atoms[bond.b].in_ring = true;
            }
        }
        let conjugated = conjugation_mask(&bonds, &adjacency);
        for (bond, c) in bonds.iter_mut().zip(conjugated) {
            bond.conjugated = c;
        }

        let mut graph = MoleculeGraph { atoms, bonds, adjacency, canonical_id: String::new() };
        graph.canonical_id = format!("wl:{:016x}", graph.wl_hash(3));
        Ok(graph)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// `(neighbor, bond index)` pairs of an atom.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn canonical_id(&self) -> &str {
        &self.canonical_id
    }

    /// Whether each bond lies on a cycle (i.e. is not a bridge).
    pub fn ring_bonds(&self) -> Vec<bool> {
        ring_bond_mask(&self.adjacency, self.bonds.len())
    }

    /// Smallest ring through every ring-closing bond of a spanning tree,
    /// deduplicated. Each ring is a sorted atom list.
    pub fn rings(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut parent = vec![usize::MAX; n];
        let mut tree_bond = vec![false; self.bonds.len()];
        let mut visited = vec![false; n];
        let mut queue = alloc::collections::VecDeque::new();
        visited[0] = true;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for &(v, b) in &self.adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = u;
                    tree_bond[b] = true;
                    queue.push_back(v);
                }
            }
        }
        let mut rings: Vec<Vec<usize>> = Vec::new();
        for (i, bond) in self.bonds.iter().enumerate() {
            if tree_bond[i] {
                continue;
            }
            if let Some(mut path) = self.shortest_path_avoiding(bond.a, bond.b, i) {
                path.sort_unstable();
                if !rings.contains(&path) {
                    rings.push(path);
                }
            }
        }
        rings.sort();
        rings
    }

    fn shortest_path_avoiding(&self, from: usize, to: usize, skip_bond: usize) -> Option<Vec<usize>> {
        let n = self.atoms.len();
        let mut prev = vec![usize::MAX; n];
        let mut visited = vec![false; n];
        let mut queue = alloc::collections::VecDeque::new();
        visited[from] = true;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            if u == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                return Some(path);
            }
            for &(v, b) in &self.adjacency[u] {
                if b != skip_bond && !visited[v] {
                    visited[v] = true;
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Graph induced on `atom_indices` (kept in the given order). Atom records
    /// are copied unchanged, so implicit hydrogens keep the parent's values.
    pub fn induced(&self, atom_indices: &[usize]) -> Result<MoleculeGraph, GraphError> {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atom_indices.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = atom_indices.iter().map(|&i| self.atoms[i].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.a] != usize::MAX && remap[b.b] != usize::MAX)
            .map(|b| Bond { a: remap[b.a], b: remap[b.b], ..b.clone() })
            .collect();
        MoleculeGraph::new(atoms, bonds)
    }

    /// Same molecule with atoms relabelled: new atom `i` is old atom `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> MoleculeGraph {
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = order.iter().map(|&i| self.atoms[i].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond { a: inverse[b.a], b: inverse[b.b], ..b.clone() })
            .collect();
        MoleculeGraph::new(atoms, bonds).expect("permutation preserves validity")
    }

    fn wl_hash(&self, rounds: usize) -> u64 {
        let mut labels: Vec<u64> = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut h = Fnv::new();
                h.write(a.element.symbol().as_bytes());
                h.write(&[a.charge as u8, a.aromatic as u8, a.implicit_h, self.degree(i) as u8]);
                h.finish()
            })
            .collect();
        for _ in 0..rounds {
            let next = (0..self.atoms.len())
                .map(|i| {
                    let mut around: Vec<(usize, u64)> = self.adjacency[i]
                        .iter()
                        .map(|&(v, b)| (self.bonds[b].order.index(), labels[v]))
                        .collect();
                    around.sort_unstable();
                    let mut h = Fnv::new();
                    h.write(&labels[i].to_le_bytes());
                    for (order, label) in around {
                        h.write(&[order as u8]);
                        h.write(&label.to_le_bytes());
                    }
                    h.finish()
                })
                .collect();
            labels = next;
        }
        labels.sort_unstable();
        let mut h = Fnv::new();
        h.write(&(self.atoms.len() as u64).to_le_bytes());
        h.write(&(self.bonds.len() as u64).to_le_bytes());
        for l in labels {
            h.write(&l.to_le_bytes());
        }
        h.finish()
    }
}

/// 64-bit FNV-1a, used for stable hashing without `std`.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}

fn is_connected(adjacency: &[Vec<(usize, usize)>]) -> bool {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == adjacency.len()
}

/// Bridge detection (iterative Tarjan lowlink); non-bridges lie on rings.
fn ring_bond_mask(adjacency: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut in_ring = vec![true; n_bonds];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (node, parent bond, next neighbor cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&(u, parent_bond, cursor)) = stack.last() {
            if cursor < adjacency[u].len() {
                let (v, b) = adjacency[u][cursor];
                if let Some(top) = stack.last_mut() {
                    top.2 += 1;
                }
                if b == parent_bond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, b, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        in_ring[parent_bond] = false;
                    }
                }
            }
        }
    }
    in_ring
}

/// A bond is conjugated when aromatic, when it is a single bond whose two
/// endpoints both carry some other multiple bond, or when it is a multiple
/// bond touching another multiple bond or such a conjugated single bond.
fn conjugation_mask(bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<bool> {
    let has_other_multiple = |atom: usize, except: usize| {
        adjacency[atom].iter().any(|&(_, b)| b != except && bonds[b].order.is_multiple())
    };
    let single: Vec<bool> = bonds
        .iter()
        .enumerate()
        .map(|(i, bond)| {
            bond.order == BondOrder::Single && has_other_multiple(bond.a, i) && has_other_multiple(bond.b, i)
        })
        .collect();
    let touches = |atom: usize, except: usize| {
        adjacency[atom]
            .iter()
            .any(|&(_, b)| b != except && (bonds[b].order.is_multiple() || single[b]))
    };
    bonds
        .iter()
        .enumerate()
        .map(|(i, bond)| match bond.order {
            BondOrder::Aromatic => true,
            BondOrder::Double | BondOrder::Triple => touches(bond.a, i) || touches(bond.b, i),
            BondOrder::Single => single[i],
        })
        .collect()
}

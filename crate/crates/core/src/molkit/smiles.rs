//! Parser and writer for the organic-subset SMILES grammar.
//!
//! Supported: organic atoms `B C N O P S F Cl Br I`, aromatic `b c n o p s`,
//! bonds `- = # :`, branches, single-digit ring closures and bracket atoms
//! carrying an optional hydrogen count and charge. Everything else
//! (isotopes, `@` chirality, `/ \` bond stereo, `%nn` rings, `.`) is rejected.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::graph::{Atom, Bond, BondOrder, Element, GraphError, MoleculeGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported token {token:?} at position {position}")]
    UnsupportedToken { token: char, position: usize },
    #[error("ring closure {digit} is never closed")]
    UnbalancedRing { digit: u8 },
    #[error("unbalanced branch at position {position}")]
    UnbalancedBranch { position: usize },
    #[error("bond symbol at position {position} has no atom to attach to")]
    DanglingBond { position: usize },
    #[error("invalid structure: {0}")]
    InvalidGraph(#[from] GraphError),
}

struct PendingAtom {
    atom: Atom,
    explicit_h: Option<u8>,
}

/// Parse a SMILES string into a connected molecular graph.
pub fn parse_smiles(s: &str) -> Result<MoleculeGraph, SmilesError> {
    if s.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let chars: Vec<char> = s.chars().collect();
    let mut atoms: Vec<PendingAtom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branch_stack: Vec<usize> = Vec::new();
    let mut pending_bond: Option<(BondOrder, usize)> = None;
    let mut rings: [Option<(usize, Option<BondOrder>)>; 10] = [None; 10];

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let position = i;
        match c {
            '(' => {
                let Some(p) = prev else {
                    return Err(SmilesError::UnbalancedBranch { position });
                };
                if pending_bond.is_some() {
                    return Err(SmilesError::UnsupportedToken { token: c, position });
                }
                branch_stack.push(p);
                i += 1;
            }
            ')' => {
                let Some(p) = branch_stack.pop() else {
                    return Err(SmilesError::UnbalancedBranch { position });
                };
                if let Some((_, at)) = pending_bond {
                    return Err(SmilesError::DanglingBond { position: at });
                }
                prev = Some(p);
                i += 1;
            }
            '-' | '=' | '#' | ':' => {
                if prev.is_none() || pending_bond.is_some() {
                    return Err(SmilesError::DanglingBond { position });
                }
                let order = match c {
                    '-' => BondOrder::Single,
                    '=' => BondOrder::Double,
                    '#' => BondOrder::Triple,
                    _ => BondOrder::Aromatic,
                };
                pending_bond = Some((order, position));
                i += 1;
            }
            '0'..='9' => {
                let Some(p) = prev else {
                    return Err(SmilesError::DanglingBond { position });
                };
                let digit = c as usize - '0' as usize;
                let explicit = pending_bond.take().map(|(o, _)| o);
                match rings[digit].take() {
                    None => rings[digit] = Some((p, explicit)),
                    Some((open_atom, open_bond)) => {
                        let order = explicit
                            .or(open_bond)
                            .unwrap_or_else(|| default_order(&atoms[open_atom].atom, &atoms[p].atom));
                        bonds.push(Bond::new(open_atom, p, order));
                    }
                }
                i += 1;
            }
            '[' => {
                let (pending, next) = parse_bracket(&chars, i)?;
                push_atom(&mut atoms, &mut bonds, &mut prev, &mut pending_bond, pending);
                i = next;
            }
            _ => {
                let (element, aromatic, width) = match (c, chars.get(i + 1)) {
                    ('C', Some('l')) => (Element::Cl, false, 2),
                    ('B', Some('r')) => (Element::Br, false, 2),
                    ('B', _) => (Element::B, false, 1),
                    ('C', _) => (Element::C, false, 1),
                    ('N', _) => (Element::N, false, 1),
                    ('O', _) => (Element::O, false, 1),
                    ('P', _) => (Element::P, false, 1),
                    ('S', _) => (Element::S, false, 1),
                    ('F', _) => (Element::F, false, 1),
                    ('I', _) => (Element::I, false, 1),
                    ('b', _) => (Element::B, true, 1),
                    ('c', _) => (Element::C, true, 1),
                    ('n', _) => (Element::N, true, 1),
                    ('o', _) => (Element::O, true, 1),
                    ('p', _) => (Element::P, true, 1),
                    ('s', _) => (Element::S, true, 1),
                    _ => return Err(SmilesError::UnsupportedToken { token: c, position }),
                };
                let mut atom = Atom::new(element);
                atom.aromatic = aromatic;
                let pending = PendingAtom { atom, explicit_h: None };
                push_atom(&mut atoms, &mut bonds, &mut prev, &mut pending_bond, pending);
                i += width;
            }
        }
    }
    if let Some((_, position)) = pending_bond {
        return Err(SmilesError::DanglingBond { position });
    }
    if !branch_stack.is_empty() {
        return Err(SmilesError::UnbalancedBranch { position: chars.len() });
    }
    if let Some(digit) = rings.iter().position(Option::is_some) {
        return Err(SmilesError::UnbalancedRing { digit: digit as u8 });
    }

    let mut valence_sum = vec![0u8; atoms.len()];
    for bond in &bonds {
        valence_sum[bond.a] += bond.order.valence();
        valence_sum[bond.b] += bond.order.valence();
    }
    let atoms = atoms
        .into_iter()
        .zip(valence_sum)
        .map(|(p, sum)| {
            let mut atom = p.atom;
            atom.implicit_h = match p.explicit_h {
                Some(h) => h,
                None => implicit_hydrogens(&atom, sum),
            };
            atom
        })
        .collect();
    Ok(MoleculeGraph::new(atoms, bonds)?)
}

fn push_atom(
    atoms: &mut Vec<PendingAtom>,
    bonds: &mut Vec<Bond>,
    prev: &mut Option<usize>,
    pending_bond: &mut Option<(BondOrder, usize)>,
    atom: PendingAtom,
) {
    let idx = atoms.len();
    atoms.push(atom);
    if let Some(p) = *prev {
        let order = match pending_bond.take() {
            Some((o, _)) => o,
            None => default_order(&atoms[p].atom, &atoms[idx].atom),
        };
        bonds.push(Bond::new(p, idx, order));
    }
    *prev = Some(idx);
}

fn default_order(a: &Atom, b: &Atom) -> BondOrder {
    if a.aromatic && b.aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

/// Valence-rule hydrogen count for an organic-subset atom. Aromatic atoms
/// reserve one valence unit for the delocalised system and use only their
/// lowest valence.
pub(crate) fn implicit_hydrogens(atom: &Atom, bond_valence: u8) -> u8 {
    let valences = atom.element.valences();
    if atom.aromatic {
        return valences[0].saturating_sub(bond_valence + 1);
    }
    valences
        .iter()
        .find(|&&v| v >= bond_valence)
        .map(|&v| v - bond_valence)
        .unwrap_or(0)
}

fn parse_bracket(chars: &[char], start: usize) -> Result<(PendingAtom, usize), SmilesError> {
    let unsupported = |i: usize| SmilesError::UnsupportedToken {
        token: chars.get(i).copied().unwrap_or(']'),
        position: i,
    };
    let mut i = start + 1;
    let c = *chars.get(i).ok_or_else(|| unsupported(i))?;
    let (element, aromatic) = match (c, chars.get(i + 1)) {
        ('C', Some('l')) => {
            i += 1;
            (Element::Cl, false)
        }
        ('B', Some('r')) => {
            i += 1;
            (Element::Br, false)
        }
        (u, _) if u.is_ascii_uppercase() => {
            let mut buf = [0u8; 4];
            let e = Element::from_symbol(u.encode_utf8(&mut buf)).ok_or_else(|| unsupported(i))?;
            (e, false)
        }
        (l, _) if l.is_ascii_lowercase() => {
            let upper = l.to_ascii_uppercase();
            let mut buf = [0u8; 4];
            let e = Element::from_symbol(upper.encode_utf8(&mut buf))
                .filter(|e| e.can_be_aromatic())
                .ok_or_else(|| unsupported(i))?;
            (e, true)
        }
        _ => return Err(unsupported(i)),
    };
    i += 1;

    let mut hydrogens = 0u8;
    if chars.get(i) == Some(&'H') {
        i += 1;
        hydrogens = 1;
        if let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
            hydrogens = d as u8;
            i += 1;
        }
    }

    let mut charge: i8 = 0;
    if let Some(&sign @ ('+' | '-')) = chars.get(i) {
        let unit: i8 = if sign == '+' { 1 } else { -1 };
        i += 1;
        charge = unit;
        if let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
            charge = unit * d as i8;
            i += 1;
        } else {
            while chars.get(i) == Some(&sign) {
                charge += unit;
                i += 1;
            }
        }
    }

    if chars.get(i) != Some(&']') {
        return Err(unsupported(i));
    }
    let mut atom = Atom::new(element);
    atom.aromatic = aromatic;
    atom.charge = charge;
    Ok((PendingAtom { atom, explicit_h: Some(hydrogens) }, i + 1))
}

/// Write a SMILES string that parses back to an isomorphic graph.
///
/// Depth-first from atom 0; ring closures reuse the lowest free digit.
/// Panics if more than ten ring closures are open at once.
pub fn write_smiles(graph: &MoleculeGraph) -> String {
    let n = graph.atom_count();
    let bonds = graph.bonds();

    // First DFS pass decides tree bonds and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut tree_children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut is_tree = vec![false; bonds.len()];
    let mut stack = vec![(0usize, usize::MAX)];
    let mut order = Vec::with_capacity(n);
    while let Some((u, via)) = stack.pop() {
        if visited[u] {
            continue;
        }
        visited[u] = true;
        order.push(u);
        if via != usize::MAX {
            is_tree[via] = true;
            tree_children[bonds[via].other(u)].push((u, via));
        }
        for &(v, b) in graph.neighbors(u).iter().rev() {
            if !visited[v] {
                stack.push((v, b));
            }
        }
    }
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (i, &a) in order.iter().enumerate() {
            r[a] = i;
        }
        r
    };
    for (i, bond) in bonds.iter().enumerate() {
        if !is_tree[i] {
            let first = if rank[bond.a] < rank[bond.b] { bond.a } else { bond.b };
            let second = bond.other(first);
            closures[first].push(i);
            closures[second].push(i);
        }
    }

    let mut out = String::new();
    let mut open_digits: [Option<usize>; 10] = [None; 10];
    write_atom_recursive(graph, 0, usize::MAX, &tree_children, &closures, &mut open_digits, &mut out);
    out
}

fn write_atom_recursive(
    graph: &MoleculeGraph,
    atom: usize,
    via: usize,
    children: &[Vec<(usize, usize)>],
    closures: &[Vec<usize>],
    open_digits: &mut [Option<usize>; 10],
    out: &mut String,
) {
    let atoms = graph.atoms();
    let bonds = graph.bonds();
    if via != usize::MAX {
        let bond = &bonds[via];
        write_bond(bond.order, &atoms[bond.a], &atoms[bond.b], out);
    }
    write_atom(graph, atom, out);
    for &b in &closures[atom] {
        if let Some(slot) = open_digits.iter().position(|d| *d == Some(b)) {
            let bond = &bonds[b];
            write_bond(bond.order, &atoms[bond.a], &atoms[bond.b], out);
            let _ = write!(out, "{}", slot);
            open_digits[slot] = None;
        } else {
            let slot = open_digits.iter().position(Option::is_none).expect("too many open rings");
            open_digits[slot] = Some(b);
            let bond = &bonds[b];
            write_bond(bond.order, &atoms[bond.a], &atoms[bond.b], out);
            let _ = write!(out, "{}", slot);
        }
    }
    let kids = &children[atom];
    for (k, &(child, bond)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        write_atom_recursive(graph, child, bond, children, closures, open_digits, out);
        if !last {
            out.push(')');
        }
    }
}

fn write_bond(order: BondOrder, a: &Atom, b: &Atom, out: &mut String) {
    let implicit = default_order(a, b);
    if order == implicit {
        return;
    }
    out.push(match order {
        BondOrder::Single => '-',
        BondOrder::Double => '=',
        BondOrder::Triple => '#',
        BondOrder::Aromatic => ':',
    });
}

fn write_atom(graph: &MoleculeGraph, idx: usize, out: &mut String) {
    let atom = &graph.atoms()[idx];
    let valence: u8 = graph.neighbors(idx).iter().map(|&(_, b)| graph.bonds()[b].order.valence()).sum();
    let organic_ok = atom.charge == 0 && implicit_hydrogens(atom, valence) == atom.implicit_h;
    let symbol = atom.element.symbol();
    let mut buf = String::new();
    if atom.aromatic {
        for ch in symbol.chars() {
            buf.push(ch.to_ascii_lowercase());
        }
    } else {
        buf.push_str(symbol);
    }
    if organic_ok {
        out.push_str(&buf);
        return;
    }
    out.push('[');
    out.push_str(&buf);
    match atom.implicit_h {
        0 => {}
        1 => out.push('H'),
        h => {
            let _ = write!(out, "H{}", h);
        }
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{}", c);
        }
        c => {
            let _ = write!(out, "-{}", -c);
        }
    }
    out.push(']');
}

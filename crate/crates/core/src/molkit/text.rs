//! Template descriptions over a fixed word-and-digit vocabulary.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use super::decompose::decompose;
use super::descriptors::descriptors;
use super::graph::{BondOrder, Element, MoleculeGraph};
use crate::math;
use crate::rng;

pub const MAX_TOKENS: usize = 64;

const WORDS: &[&str] = &[
    "<unk>", "molecule", "with", "heavy", "atom", "rings", "weight", "donors", "acceptors", "polar",
    "area", "aromatic", "fragments", "contains", "boron", "carbon", "nitrogen", "oxygen", "phosphorus",
    "sulfur", "fluorine", "chlorine", "bromine", "iodine", "charged", "double", "triple", "bonds",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
];

const ELEMENT_WORDS: [&str; 10] = [
    "boron", "carbon", "nitrogen", "oxygen", "phosphorus", "sulfur", "fluorine", "chlorine", "bromine",
    "iodine",
];

pub fn vocab_size() -> usize {
    WORDS.len()
}

pub fn token_id(word: &str) -> usize {
    WORDS.iter().position(|w| *w == word).unwrap_or(0)
}

pub fn token_word(id: usize) -> &'static str {
    WORDS.get(id).copied().unwrap_or("<unk>")
}

/// Whitespace tokenization with numbers split into digit tokens.
pub fn tokenize(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if word.bytes().all(|b| b.is_ascii_digit()) {
            for ch in word.chars() {
                let mut buf = [0u8; 4];
                out.push(token_id(ch.encode_utf8(&mut buf)));
            }
        } else {
            out.push(token_id(word));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextDescription {
    pub tokens: Vec<usize>,
    /// Half-open token ranges, contiguous and covering `tokens`.
    pub segments: Vec<Range<usize>>,
}

impl TextDescription {
    /// Build from segment token lists, truncating to [`MAX_TOKENS`] overall.
    pub fn from_segments(parts: &[Vec<usize>]) -> Self {
        let mut tokens = Vec::new();
        let mut segments = Vec::new();
        for part in parts {
            let room = MAX_TOKENS - tokens.len();
            if room == 0 {
                break;
            }
            let take = part.len().min(room);
            if take == 0 {
                continue;
            }
            let start = tokens.len();
            tokens.extend_from_slice(&part[..take]);
            segments.push(start..tokens.len());
        }
        TextDescription { tokens, segments }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (i, &t) in self.tokens.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(token_word(t));
        }
        s
    }
}

pub fn describe(graph: &MoleculeGraph, seed: u64) -> TextDescription {
    use core::fmt::Write;
    let props = descriptors(graph);
    let rings = graph.rings().len();
    let mut head = String::new();
    let _ = write!(head, "molecule with {} heavy atom {} rings", graph.atom_count(), rings);

    let mut weight = String::new();
    let _ = write!(
        weight,
        "weight {} donors {} acceptors {} polar area {}",
        math::round(props.molecular_weight) as u64,
        props.hbd,
        props.hba,
        math::round(props.psa) as u64
    );

    let mut counts = [0usize; 10];
    for a in graph.atoms() {
        counts[a.element.class_index()] += 1;
    }
    let mut composition = String::from("contains");
    for (e, &c) in Element::ALL.iter().zip(counts.iter()) {
        if c > 0 {
            let _ = write!(composition, " {} {}", c, ELEMENT_WORDS[e.class_index()]);
        }
    }
    let charged = graph.atoms().iter().filter(|a| a.charge != 0).count();
    if charged > 0 {
        let _ = write!(composition, " {} charged", charged);
    }

    let doubles = graph.bonds().iter().filter(|b| b.order == BondOrder::Double).count();
    let triples = graph.bonds().iter().filter(|b| b.order == BondOrder::Triple).count();
    let mut bonds = String::new();
    let _ = write!(
        bonds,
        "fragments {} aromatic {} double {} triple {} bonds",
        decompose(graph).len(),
        props.aromatic_rings,
        doubles,
        triples
    );

    let mut tail = [tokenize(&weight), tokenize(&composition), tokenize(&bonds)];
    let mut r = rng::stream(seed, rng::streams::TEXT);
    rng::shuffle(&mut r, &mut tail);
    let mut parts = alloc::vec![tokenize(&head)];
    parts.extend(tail);
    TextDescription::from_segments(&parts)
}

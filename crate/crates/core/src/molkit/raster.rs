//! Synthetic depictions: 2D layout drawn into a three-channel grid.
//!
//! Channel 0 holds anti-aliased bond lines, channel 1 an atom disk per atom
//! (carbon dim, heteroatoms bright), channel 2 disks for aromatic atoms.

use alloc::vec;
use alloc::vec::Vec;

use super::conformer::layout;
use super::graph::MoleculeGraph;
use crate::math;
use crate::rng;

pub const DEFAULT_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
const CARBON_INTENSITY: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `height x width x channels`.
    pub pixels: Vec<f64>,
    pub seed: u64,
}

impl MoleculeImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        MoleculeImage { height, width, channels, pixels: vec![0.0; height * width * channels], seed: 0 }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn put_max(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        if v > self.pixels[i] {
            self.pixels[i] = v.min(1.0);
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Render `graph` to a `size x size x 3` image. Panics if `size < 16`.
pub fn rasterize(graph: &MoleculeGraph, size: usize, seed: u64) -> MoleculeImage {
    assert!(size >= 16, "image size must be at least 16");
    let mut r = rng::stream(seed, rng::streams::IMAGE);
    let pos = layout(graph, &mut r, false);

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pos {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let margin = size as f64 / 8.0;
    let extent = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let scale = ((size as f64 - 2.0 * margin) / extent).min(size as f64 / 6.0);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let half = size as f64 / 2.0;
    let px: Vec<[f64; 2]> =
        pos.iter().map(|p| [half + (p[0] - cx) * scale, half + (p[1] - cy) * scale]).collect();

    let mut img = MoleculeImage::zeros(size, size, CHANNELS);
    img.seed = seed;
    for b in graph.bonds() {
        draw_line(&mut img, px[b.a], px[b.b], 0);
    }
    let radius = size as f64 / 16.0;
    for (i, atom) in graph.atoms().iter().enumerate() {
        let intensity = if atom.element.is_heteroatom() {
            0.6 + 0.4 * atom.element.class_index() as f64 / 9.0
        } else {
            CARBON_INTENSITY
        };
        draw_disk(&mut img, px[i], radius, 1, intensity);
        if atom.aromatic {
            draw_disk(&mut img, px[i], radius, 2, 1.0);
        }
    }
    img
}

fn draw_line(img: &mut MoleculeImage, a: [f64; 2], b: [f64; 2], channel: usize) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = (d[0] * d[0] + d[1] * d[1]).max(1e-12);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
            let dist = math::sqrt(q[0] * q[0] + q[1] * q[1]);
            let v = (1.0 - (dist - 0.5).max(0.0)).clamp(0.0, 1.0);
            if v > 0.0 {
                img.put_max(y, x, channel, v);
            }
        }
    }
}

fn draw_disk(img: &mut MoleculeImage, c: [f64; 2], radius: f64, channel: usize, intensity: f64) {
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = x as f64 + 0.5 - c[0];
            let dy = y as f64 + 0.5 - c[1];
            let dist = math::sqrt(dx * dx + dy * dy);
            let cover = (radius + 0.5 - dist).clamp(0.0, 1.0);
            if cover > 0.0 {
                img.put_max(y, x, channel, cover * intensity);
            }
        }
    }
}

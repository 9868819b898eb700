//! Brute-force metric oracle over index sets, written independently of
//! the library, plus a random instance generator with tied scores.

use std::collections::BTreeSet;

use mkmed_core::clinical::DdiMatrix;
use mkmed_core::rng;
use rand::Rng;

pub fn set(m: &[bool]) -> BTreeSet<usize> {
    m.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect()
}

pub fn mask(idx: &[usize], n: usize) -> Vec<bool> {
    (0..n).map(|i| idx.contains(&i)).collect()
}

pub fn jaccard(p: &[Vec<bool>], t: &[Vec<bool>]) -> f64 {
    let v: Vec<f64> = p
        .iter()
        .zip(t)
        .map(|(a, b)| {
            let (a, b) = (set(a), set(b));
            let u = a.union(&b).count();
            if u == 0 { 1.0 } else { a.intersection(&b).count() as f64 / u as f64 }
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn f1(p: &[Vec<bool>], t: &[Vec<bool>]) -> f64 {
    let v: Vec<f64> = p
        .iter()
        .zip(t)
        .map(|(a, b)| {
            let (a, b) = (set(a), set(b));
            let i = a.intersection(&b).count() as f64;
            let pr = if a.is_empty() { 0.0 } else { i / a.len() as f64 };
            let re = if b.is_empty() { 0.0 } else { i / b.len() as f64 };
            if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) }
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn prauc(s: &[Vec<f64>], t: &[Vec<bool>]) -> f64 {
    let v: Vec<f64> = s
        .iter()
        .zip(t)
        .map(|(sc, tr)| {
            let truth = set(tr);
            if truth.is_empty() {
                return 0.0;
            }
            let mut ranked: Vec<usize> = (0..sc.len()).collect();
            // Stable sort keeps ascending index among ties.
            ranked.sort_by(|&a, &b| sc[b].partial_cmp(&sc[a]).unwrap());
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for k in 1..=ranked.len() {
                let top: BTreeSet<usize> = ranked[..k].iter().copied().collect();
                let hit = top.intersection(&truth).count() as f64;
                let recall = hit / truth.len() as f64;
                area += hit / k as f64 * (recall - prev_recall);
                prev_recall = recall;
            }
            area
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn avg_med(p: &[Vec<bool>]) -> f64 {
    p.iter().map(|x| set(x).len() as f64).sum::<f64>() / p.len() as f64
}

pub fn ddi(p: &[Vec<bool>], m: &DdiMatrix) -> f64 {
    let (mut hit, mut all) = (0.0, 0.0);
    for v in p {
        let s: Vec<usize> = set(v).into_iter().collect();
        for &a in &s {
            for &b in &s {
                if a < b {
                    all += 1.0;
                    if m.get(a, b) {
                        hit += 1.0;
                    }
                }
            }
        }
    }
    if all == 0.0 { 0.0 } else { hit / all }
}

pub struct Instance {
    pub scores: Vec<Vec<f64>>,
    pub preds: Vec<Vec<bool>>,
    pub truths: Vec<Vec<bool>>,
    pub ddi: DdiMatrix,
}

pub fn instance(seed: u64) -> Instance {
    let mut r = rng::stream(seed, 70);
    let n = r.random_range(2..12);
    let visits = r.random_range(1..8);
    let density = r.random_range(0.0..0.6);
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| r.random_bool(density)).collect();
    let mut r = rng::stream(seed, 71);
    // Coarse scores produce ties.
    let scores: Vec<Vec<f64>> =
        (0..visits).map(|_| (0..n).map(|_| (r.random_range(0..10) as f64) / 9.0).collect()).collect();
    let truths = (0..visits).map(|_| (0..n).map(|_| r.random_bool(0.35)).collect()).collect();
    let preds = scores.iter().map(|s| s.iter().map(|&x| x >= 0.5).collect()).collect();
    Instance { scores, preds, truths, ddi: DdiMatrix::from_pairs(n, &pairs).unwrap() }
}


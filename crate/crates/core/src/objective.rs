//! Training losses over predicted medication probabilities and their
//! weighted combination. Every loss comes with its gradient in the scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::clinical::DdiMatrix;
use crate::error::{Error, Result};
use crate::math;

pub const PROB_CLAMP: f64 = 1e-7;
pub const CONTROLLER_KAPPA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub ddi_target: f64,
    pub controller: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { beta: 0.95, gamma: 0.95, ddi_target: 0.06, controller: false }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("ddi_target", self.ddi_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(alloc::format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn check(scores: &[f64], truth_len: usize) -> Result<()> {
    if scores.len() != truth_len {
        return Err(Error::ShapeMismatch(alloc::format!("{} scores for {} labels", scores.len(), truth_len)));
    }
    Ok(())
}

fn check_ddi(scores: &[f64], ddi: &DdiMatrix) -> Result<()> {
    if scores.len() != ddi.size() {
        return Err(Error::ShapeMismatch(alloc::format!("{} scores for a {}-medication matrix", scores.len(), ddi.size())));
    }
    Ok(())
}

/// Summed binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn bce_loss(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check(scores, truth.len())?;
    Ok(scores
        .iter()
        .zip(truth)
        .map(|(&s, &m)| {
            let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if m { -math::ln(s) } else { -math::ln(1.0 - s) }
        })
        .sum())
}

pub fn bce_grad(scores: &[f64], truth: &[bool]) -> Result<Vec<f64>> {
    check(scores, truth.len())?;
    Ok(scores
        .iter()
        .zip(truth)
        .map(|(&s, &m)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&s) {
                0.0
            } else if m {
                -1.0 / s
            } else {
                1.0 / (1.0 - s)
            }
        })
        .collect())
}

/// Pairwise margin loss between positive and negative labels, over `|M|`.
pub fn hinge_loss(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check(scores, truth.len())?;
    let (pos, neg) = split(scores, truth);
    let mut total = 0.0;
    for &p in &pos {
        for &q in &neg {
            total += (1.0 - (p - q)).max(0.0);
        }
    }
    Ok(total / scores.len().max(1) as f64)
}

pub fn hinge_grad(scores: &[f64], truth: &[bool]) -> Result<Vec<f64>> {
    check(scores, truth.len())?;
    let n = scores.len().max(1) as f64;
    let mut g = vec![0.0; scores.len()];
    for i in (0..scores.len()).filter(|&i| truth[i]) {
        for j in (0..scores.len()).filter(|&j| !truth[j]) {
            if 1.0 - (scores[i] - scores[j]) > 0.0 {
                g[i] -= 1.0 / n;
                g[j] += 1.0 / n;
            }
        }
    }
    Ok(g)
}

fn split(scores: &[f64], truth: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &m) in scores.iter().zip(truth) {
        if m { pos.push(s) } else { neg.push(s) }
    }
    (pos, neg)
}

/// `Σ_i Σ_j M_ij s_i s_j` over ordered pairs.
pub fn ddi_loss(scores: &[f64], ddi: &DdiMatrix) -> Result<f64> {
    check_ddi(scores, ddi)?;
    Ok(ddi.pairs().iter().map(|&(i, j)| 2.0 * scores[i] * scores[j]).sum())
}

pub fn ddi_grad(scores: &[f64], ddi: &DdiMatrix) -> Result<Vec<f64>> {
    check_ddi(scores, ddi)?;
    let mut g = vec![0.0; scores.len()];
    for (i, j) in ddi.pairs() {
        g[i] += 2.0 * scores[j];
        g[j] += 2.0 * scores[i];
    }
    Ok(g)
}

/// The three component values of one visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub multi: f64,
    pub ddi: f64,
}

/// `β(γ·bce + (1−γ)·multi) + (1−β)·ddi`.
pub fn combine(parts: LossParts, w: &LossWeights) -> f64 {
    w.beta * (w.gamma * parts.bce + (1.0 - w.gamma) * parts.multi) + (1.0 - w.beta) * parts.ddi
}

pub fn combined_loss(scores: &[f64], truth: &[bool], ddi: &DdiMatrix, w: &LossWeights) -> Result<f64> {
    Ok(combine(loss_parts(scores, truth, ddi)?, w))
}

pub fn loss_parts(scores: &[f64], truth: &[bool], ddi: &DdiMatrix) -> Result<LossParts> {
    Ok(LossParts { bce: bce_loss(scores, truth)?, multi: hinge_loss(scores, truth)?, ddi: ddi_loss(scores, ddi)? })
}

/// Combined loss value and its gradient in the scores.
pub fn combined_grad(scores: &[f64], truth: &[bool], ddi: &DdiMatrix, w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    let value = combined_loss(scores, truth, ddi, w)?;
    let mut g = vec![0.0; scores.len()];
    let terms = [
        (w.beta * w.gamma, bce_grad(scores, truth)?),
        (w.beta * (1.0 - w.gamma), hinge_grad(scores, truth)?),
        (1.0 - w.beta, ddi_grad(scores, ddi)?),
    ];
    for (c, part) in terms {
        if c != 0.0 {
            for (o, x) in g.iter_mut().zip(part) {
                *o += c * x;
            }
        }
    }
    Ok((value, g))
}

/// β for the next epoch given the observed DDI rate.
pub fn beta_controller(rate: f64, w: &LossWeights) -> f64 {
    if !w.controller {
        return w.beta;
    }
    if rate <= w.ddi_target {
        1.0
    } else {
        (1.0 - (rate - w.ddi_target) / CONTROLLER_KAPPA).max(0.0)
    }
}

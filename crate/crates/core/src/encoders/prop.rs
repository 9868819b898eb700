//! Descriptor encoder: per-channel z-scoring followed by one linear layer.

use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::math;
use crate::molkit::PropertyVector;
use crate::nn::{Linear, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const PROP_CHANNELS: usize = PropertyVector::CHANNELS;

#[derive(Debug, Clone)]
pub struct PropEncoder {
    /// `1 x 5` channel means (not trained).
    pub mean: ParamId,
    /// `1 x 5` reciprocal standard deviations, zero for dropped channels.
    pub inv_std: ParamId,
    pub linear: Linear,
}

impl PropEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, dim: usize) -> Self {
        PropEncoder {
            mean: store.add("prop.mean", Tensor::zeros(1, PROP_CHANNELS)),
            inv_std: store.add("prop.inv_std", Tensor::filled(1, PROP_CHANNELS, 1.0)),
            linear: Linear::new(store, rng, "prop.linear", PROP_CHANNELS, dim),
        }
    }

    /// Fit normalization statistics on `corpus`. Returns the indices of
    /// channels dropped because their standard deviation is zero.
    pub fn fit(&self, store: &mut ParamStore, corpus: &[PropertyVector]) -> Vec<usize> {
        let n = corpus.len().max(1) as f64;
        let mut mean = [0.0; PROP_CHANNELS];
        for v in corpus {
            for (m, x) in mean.iter_mut().zip(v.to_array()) {
                *m += x / n;
            }
        }
        let mut var = [0.0; PROP_CHANNELS];
        for v in corpus {
            for c in 0..PROP_CHANNELS {
                let d = v.to_array()[c] - mean[c];
                var[c] += d * d / n;
            }
        }
        let mut dropped = Vec::new();
        let inv: Vec<f64> = (0..PROP_CHANNELS)
            .map(|c| {
                let sd = math::sqrt(var[c]);
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    dropped.push(c);
                    0.0
                }
            })
            .collect();
        *store.get_mut(self.mean) = Tensor::row_vector(mean.to_vec());
        *store.get_mut(self.inv_std) = Tensor::row_vector(inv);
        dropped
    }

    pub fn normalize(&self, store: &ParamStore, props: &[&PropertyVector]) -> Tensor {
        let mean = store.get(self.mean);
        let inv = store.get(self.inv_std);
        let mut data = Vec::with_capacity(props.len() * PROP_CHANNELS);
        for p in props {
            for (c, x) in p.to_array().into_iter().enumerate() {
                data.push((x - mean.data[c]) * inv.data[c]);
            }
        }
        Tensor::from_vec(props.len(), PROP_CHANNELS, data)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, props: &[&PropertyVector]) -> Var {
        let z = tape.leaf(self.normalize(store, props));
        self.linear.forward(tape, store, z)
    }
}

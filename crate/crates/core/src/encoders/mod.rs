//! The cross-modal molecule encoder and the five modality encoders.

mod cross;
mod gin;
mod gvp;
mod prop;
mod text;
mod transe;
mod vit;

pub use cross::{substructure_fuse, AttentionFuse, CrossModalEncoder, CrossModalInput};
pub use gin::{Gin, GinLayer, GraphBatch, GraphInput};
pub use gvp::{rbf, GeometricInput, GvpEncoder, GvpLayer, GvpOutput, GvpWidths, RBF_COUNT, RBF_MAX};
pub use prop::{PropEncoder, PROP_CHANNELS};
pub use text::TextEncoder;
pub use transe::{transe_train, KgEmbedding, TransEConfig, MARGIN};
pub use vit::VitEncoder;

use crate::molkit::{vocab_size, DEFAULT_IMAGE_SIZE};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub gin_layers: usize,
    pub gvp: GvpWidths,
    pub image_size: usize,
    pub patch: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            gin_layers: 2,
            gvp: GvpWidths::default(),
            image_size: DEFAULT_IMAGE_SIZE,
            patch: 8,
            transformer_layers: 2,
            heads: 4,
            ff: 128,
        }
    }
}

/// Every trainable encoder with its parameters in one store.
#[derive(Debug, Clone)]
pub struct EncoderSet {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub cross: CrossModalEncoder,
    pub vit: VitEncoder,
    pub text: TextEncoder,
    pub prop: PropEncoder,
    pub gvp: GvpEncoder,
    /// Log of the contrastive temperature scale.
    pub log_tau: ParamId,
}

/// Initial contrastive scale `1 / 0.07`, stored as its logarithm.
pub const INITIAL_LOG_TAU: f64 = 2.659_260_036_932_778_4;
pub const MAX_TAU: f64 = 100.0;

impl EncoderSet {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r: SeededRng = rng::stream(seed, rng::streams::INIT);
        let c = &config;
        let cross = CrossModalEncoder::new(&mut store, &mut r, c.dim, c.gin_layers);
        let vit = VitEncoder::new(&mut store, &mut r, c.image_size, c.patch, c.dim, c.transformer_layers, c.heads, c.ff);
        let text = TextEncoder::new(&mut store, &mut r, vocab_size(), c.dim, c.transformer_layers, c.heads, c.ff);
        let prop = PropEncoder::new(&mut store, &mut r, c.dim);
        let gvp = GvpEncoder::new(&mut store, &mut r, c.gvp, c.dim);
        let log_tau = store.add("align.log_tau", Tensor::scalar(INITIAL_LOG_TAU));
        EncoderSet { config, store, cross, vit, text, prop, gvp, log_tau }
    }
}

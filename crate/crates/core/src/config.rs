//! Run configuration covering every stage, with range validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::align::{Modality, PretrainConfig, PretrainMode};
use crate::encoders::{EncoderConfig, GvpWidths};
use crate::error::{Error, Result};
use crate::eval::DdiMode;
use crate::molkit::Fnv;
use crate::objective::LossWeights;

macro_rules! defaults {
    ($($f:ident: $t:ty = $v:expr;)*) => {
        mod default_values {
            #[allow(unused_imports)]
            use super::*;
            $(pub fn $f() -> $t { $v })*
        }
    };
}

defaults! {
    dim: usize = 64;
    gin_layers: usize = 2;
    gvp_node_s: usize = 128;
    gvp_node_v: usize = 64;
    gvp_edge_s: usize = 32;
    gvp_edge_v: usize = 1;
    gvp_layers: usize = 3;
    image_size: usize = 32;
    patch: usize = 8;
    transformer_layers: usize = 2;
    heads: usize = 4;
    ff: usize = 128;
    gru_hidden: usize = 64;
    head_hidden: usize = 128;
    delta: f64 = 0.5;
    beta: f64 = 0.95;
    ddi_target: f64 = 0.06;
    pretrain_epochs: usize = 20;
    pretrain_lr: f64 = 1e-6;
    pretrain_batch: usize = 32;
    pretrain_modalities: Vec<String> = Modality::ALL.iter().map(|m| String::from(m.name())).collect();
    yes: bool = true;
    train_epochs: usize = 25;
    train_lr: f64 = 5e-4;
    weight_decay: f64 = 0.05;
    train_batch: usize = 16;
    transe_epochs: usize = 200;
    transe_lr: f64 = 0.05;
    bootstrap: usize = 10;
    ddi_mode: String = String::from("standard");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_values::dim")]
    pub dim: usize,
    #[serde(default = "default_values::gin_layers")]
    pub gin_layers: usize,
    #[serde(default = "default_values::gvp_node_s")]
    pub gvp_node_s: usize,
    #[serde(default = "default_values::gvp_node_v")]
    pub gvp_node_v: usize,
    #[serde(default = "default_values::gvp_edge_s")]
    pub gvp_edge_s: usize,
    #[serde(default = "default_values::gvp_edge_v")]
    pub gvp_edge_v: usize,
    #[serde(default = "default_values::gvp_layers")]
    pub gvp_layers: usize,
    #[serde(default = "default_values::image_size")]
    pub image_size: usize,
    #[serde(default = "default_values::patch")]
    pub patch: usize,
    #[serde(default = "default_values::transformer_layers")]
    pub transformer_layers: usize,
    #[serde(default = "default_values::heads")]
    pub heads: usize,
    #[serde(default = "default_values::ff")]
    pub ff: usize,
    #[serde(default = "default_values::gru_hidden")]
    pub gru_hidden: usize,
    #[serde(default = "default_values::head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_values::delta")]
    pub delta: f64,
    #[serde(default = "default_values::beta")]
    pub beta: f64,
    /// BCE share of the prediction loss; has no default in files.
    pub gamma: f64,
    #[serde(default = "default_values::ddi_target")]
    pub ddi_target: f64,
    #[serde(default)]
    pub ddi_controller: bool,
    #[serde(default = "default_values::pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_values::pretrain_lr")]
    pub pretrain_lr: f64,
    #[serde(default = "default_values::pretrain_batch")]
    pub pretrain_batch: usize,
    #[serde(default = "default_values::pretrain_modalities")]
    pub pretrain_modalities: Vec<String>,
    #[serde(default = "default_values::yes")]
    pub train_modality_encoders: bool,
    #[serde(default = "default_values::train_epochs")]
    pub train_epochs: usize,
    #[serde(default = "default_values::train_lr")]
    pub train_lr: f64,
    #[serde(default = "default_values::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_values::train_batch")]
    pub train_batch: usize,
    #[serde(default = "default_values::transe_epochs")]
    pub transe_epochs: usize,
    #[serde(default = "default_values::transe_lr")]
    pub transe_lr: f64,
    #[serde(default = "default_values::bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_values::ddi_mode")]
    pub ddi_mode: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        use default_values as d;
        RunConfig {
            seed: 0,
            dim: d::dim(),
            gin_layers: d::gin_layers(),
            gvp_node_s: d::gvp_node_s(),
            gvp_node_v: d::gvp_node_v(),
            gvp_edge_s: d::gvp_edge_s(),
            gvp_edge_v: d::gvp_edge_v(),
            gvp_layers: d::gvp_layers(),
            image_size: d::image_size(),
            patch: d::patch(),
            transformer_layers: d::transformer_layers(),
            heads: d::heads(),
            ff: d::ff(),
            gru_hidden: d::gru_hidden(),
            head_hidden: d::head_hidden(),
            delta: d::delta(),
            beta: d::beta(),
            gamma: 0.95,
            ddi_target: d::ddi_target(),
            ddi_controller: false,
            pretrain_epochs: d::pretrain_epochs(),
            pretrain_lr: d::pretrain_lr(),
            pretrain_batch: d::pretrain_batch(),
            pretrain_modalities: d::pretrain_modalities(),
            train_modality_encoders: true,
            train_epochs: d::train_epochs(),
            train_lr: d::train_lr(),
            weight_decay: d::weight_decay(),
            train_batch: d::train_batch(),
            transe_epochs: d::transe_epochs(),
            transe_lr: d::transe_lr(),
            bootstrap: d::bootstrap(),
            ddi_mode: d::ddi_mode(),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("gin_layers", self.gin_layers),
            ("gvp_node_s", self.gvp_node_s),
            ("gvp_node_v", self.gvp_node_v),
            ("gvp_edge_s", self.gvp_edge_s),
            ("gvp_edge_v", self.gvp_edge_v),
            ("gvp_layers", self.gvp_layers),
            ("image_size", self.image_size),
            ("patch", self.patch),
            ("transformer_layers", self.transformer_layers),
            ("heads", self.heads),
            ("ff", self.ff),
            ("gru_hidden", self.gru_hidden),
            ("head_hidden", self.head_hidden),
            ("train_batch", self.train_batch),
            ("bootstrap", self.bootstrap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.pretrain_batch < 2 {
            return Err(invalid(String::from("pretrain_batch must be at least 2")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(invalid(format!("dim {} is not divisible by heads {}", self.dim, self.heads)));
        }
        if !self.image_size.is_multiple_of(self.patch) {
            return Err(invalid(format!("image_size {} is not a multiple of patch {}", self.image_size, self.patch)));
        }
        for (name, v) in [("delta", self.delta), ("beta", self.beta), ("gamma", self.gamma), ("ddi_target", self.ddi_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("pretrain_lr", self.pretrain_lr),
            ("train_lr", self.train_lr),
            ("transe_lr", self.transe_lr),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.weight_decay) {
            return Err(invalid(format!("weight_decay = {} outside [0, 1]", self.weight_decay)));
        }
        self.modalities()?;
        self.ddi_mode()?;
        Ok(())
    }

    pub fn modalities(&self) -> Result<Vec<Modality>> {
        let mut out = Vec::new();
        for name in &self.pretrain_modalities {
            let m = Modality::from_name(name).ok_or_else(|| invalid(format!("unknown modality {name:?}")))?;
            if out.contains(&m) {
                return Err(invalid(format!("modality {name:?} listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn ddi_mode(&self) -> Result<DdiMode> {
        DdiMode::from_name(&self.ddi_mode).ok_or_else(|| invalid(format!("unknown ddi_mode {:?}", self.ddi_mode)))
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            gin_layers: self.gin_layers,
            gvp: GvpWidths {
                node_s: self.gvp_node_s,
                node_v: self.gvp_node_v,
                edge_s: self.gvp_edge_s,
                edge_v: self.gvp_edge_v,
                layers: self.gvp_layers,
            },
            image_size: self.image_size,
            patch: self.patch,
            transformer_layers: self.transformer_layers,
            heads: self.heads,
            ff: self.ff,
        }
    }

    pub fn pretrain_config(&self, modalities: Vec<Modality>, mode: PretrainMode) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch: self.pretrain_batch,
            modalities,
            mode,
            seed: self.seed,
            train_modality_encoders: self.train_modality_encoders,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { beta: self.beta, gamma: self.gamma, ddi_target: self.ddi_target, controller: self.ddi_controller }
    }

    /// Stable 64-bit fingerprint of every field.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(format!("{self:?}").as_bytes());
        h.finish()
    }
}

//! Single-file parameter container: an 8-byte magic, a little-endian u64
//! header length, a JSON header, then every named block as little-endian
//! f32 values in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mkmed_core::clinical::Vocab;
use mkmed_core::config::RunConfig;
use mkmed_core::nn::ParamStore;
use mkmed_core::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"MKMEDCK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Pre-trained modality encoders and the cross-modal encoder.
    Encoders,
    /// Patient encoder, prediction head and medication table.
    Recommender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSizes {
    pub diseases: usize,
    pub procedures: usize,
    pub medications: usize,
}

impl From<Vocab> for VocabSizes {
    fn from(v: Vocab) -> Self {
        VocabSizes { diseases: v.diseases, procedures: v.procedures, medications: v.medications }
    }
}

impl From<VocabSizes> for Vocab {
    fn from(v: VocabSizes) -> Self {
        Vocab { diseases: v.diseases, procedures: v.procedures, medications: v.medications }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub kind: Kind,
    pub config: RunConfig,
    pub config_hash: String,
    pub vocab: Option<VocabSizes>,
    /// Creation details (tool version, mode, variant, selected epoch).
    /// Deliberately free of wall-clock data so reruns are byte-identical.
    pub meta: BTreeMap<String, String>,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f32>>,
}

pub fn hash_hex(cfg: &RunConfig) -> String {
    format!("{:016x}", cfg.hash())
}

impl Checkpoint {
    pub fn new(kind: Kind, config: &RunConfig, vocab: Option<Vocab>) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("creator".to_string(), format!("mkmed {}", env!("CARGO_PKG_VERSION")));
        Checkpoint {
            header: Header {
                format_version: FORMAT_VERSION,
                kind,
                config: config.clone(),
                config_hash: hash_hex(config),
                vocab: vocab.map(Into::into),
                meta,
                blocks: Vec::new(),
            },
            data: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.header.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: &str, t: &Tensor) {
        self.header.blocks.push(BlockInfo { name: name.to_string(), shape: [t.rows, t.cols] });
        self.data.push(t.data.iter().map(|&x| x as f32).collect());
    }

    /// Every parameter of `store`, in store order.
    pub fn push_store(&mut self, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.push(name, t);
        }
    }

    pub fn block(&self, name: &str) -> Option<Tensor> {
        let i = self.header.blocks.iter().position(|b| b.name == name)?;
        let [rows, cols] = self.header.blocks[i].shape;
        Some(Tensor::from_vec(rows, cols, self.data[i].iter().map(|&x| x as f64).collect()))
    }

    /// Overwrite every parameter of `store` with the block of the same
    /// name; shapes must agree and no store parameter may be missing.
    pub fn load_into(&self, store: &mut ParamStore) -> CliResult<()> {
        let ids: Vec<_> = store.iter().map(|(id, name, _)| (id, name.to_string())).collect();
        for (id, name) in ids {
            let t = self.block(&name).ok_or_else(|| CliError::Config(format!("checkpoint lacks parameter {name:?}")))?;
            let want = store.get(id).shape();
            if t.shape() != want {
                return Err(CliError::Config(format!(
                    "checkpoint parameter {name:?} has shape {:?}, model expects {want:?}",
                    t.shape()
                )));
            }
            *store.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.data.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for block in &self.data {
            for x in block {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("not an mkmed checkpoint".into());
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format!("header: {e}"))?;
        if header.format_version != FORMAT_VERSION {
            return Err(format!("unsupported format version {}", header.format_version));
        }
        let mut rest = &bytes[16 + len..];
        let mut data = Vec::with_capacity(header.blocks.len());
        for b in &header.blocks {
            let n = b.shape[0].checked_mul(b.shape[1]).and_then(|n| n.checked_mul(4)).ok_or("block too large")?;
            if rest.len() < n {
                return Err(format!("block {:?} truncated", b.name));
            }
            let (chunk, tail) = rest.split_at(n);
            data.push(chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(format!("{} trailing bytes after the last block", rest.len()));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| CliError::format(path, e))
    }
}

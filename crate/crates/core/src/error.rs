use alloc::string::String;

/// Errors raised by the pipeline stages.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("smiles: {0}")]
    Smiles(#[from] crate::molkit::SmilesError),
    #[error("conformer relaxation failed: bond {bond} length {length:.3} outside [0.8, 2.0]")]
    RelaxationFailure { bond: usize, length: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every attention row is masked")]
    AllMasked,
    #[error("image {height}x{width} cannot be tiled by patch size {patch}")]
    BadPatchGrid { height: usize, width: usize, patch: usize },
    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("knowledge graph has no triples")]
    EmptyKg,
    #[error("entity {0} is not registered in the knowledge graph")]
    UnknownEntity(String),
    #[error("bonded atoms {0} and {1} coincide")]
    DegenerateEdge(usize, usize),
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("modality {modality} has {available} records, batch size is {batch}")]
    ModalityUnderfilled { modality: &'static str, available: usize, batch: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("no record carries every configured modality")]
    EmptyIntersection,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("visit index {index} outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown variant {0}")]
    UnknownVariant(String),
    #[error("could only generate {got} of {wanted} unique molecules")]
    ExhaustedAttempts { got: usize, wanted: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

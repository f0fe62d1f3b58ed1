use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("power of a non-positive base at node {node}")]
    NonPositiveBase { node: usize },
    #[error("gradient root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("node {0} is not a trainable leaf of this graph")]
    UnknownLeaf(usize),
    #[error("invalid player trait: {0}")]
    InvalidTrait(&'static str),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("design diverged at step {step}: {source}")]
    Diverged {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

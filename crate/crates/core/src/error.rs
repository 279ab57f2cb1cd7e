use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{0}` has no usable values")]
    EmptyColumn(String),

    #[error("column `{column}` has {distinct} distinct numeric values but {bins} bins were requested")]
    TooFewDistinct {
        column: String,
        distinct: usize,
        bins: usize,
    },

    #[error("column `{column}` yields {categories} categories; at least 2 are required")]
    DegenerateColumn { column: String, categories: usize },

    #[error("question `{question}`: value `{value}` maps to no category")]
    Unmappable { question: String, value: String },

    #[error("row {row}: question {question} block has {ones} ones (expected exactly 1)")]
    OneHot {
        row: usize,
        question: usize,
        ones: usize,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid directive: {0}")]
    InvalidDirective(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("block structure mismatch: {0}")]
    BlockMismatch(String),

    #[error("dataset has no rows")]
    EmptyData,

    #[error("non-finite {kind} loss at step {step} (epoch {epoch})")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        kind: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dependency cycle among questions: {0}")]
    Cycle(String),

    #[error("bad artifact: {0}")]
    Format(String),

    #[error("unsupported {artifact} format version {found} (expected {expected})")]
    Version {
        artifact: &'static str,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

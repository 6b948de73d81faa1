//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {msg}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("loss tensor does not belong to this tape")]
    DetachedLoss,

    #[error(
        "no gradient recorded for this tensor (did you call backward, and does it require grad?)"
    )]
    MissingGradient,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("attention over an all-padded sequence")]
    AllPadded,

    #[error("speaker ids must be dense integers from 0: {msg}")]
    SparseSpeakerIds { msg: String },

    #[error("label id {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("corpus parse error at line {line}: {msg}")]
    CorpusParse { line: usize, msg: String },

    #[error("unknown label {label:?} at line {line}: not in label set {set:?}")]
    UnknownLabel {
        label: String,
        line: usize,
        set: String,
    },

    #[error("dialogue {dialogue_id:?}: {msg}")]
    BadDialogue { dialogue_id: String, msg: String },

    #[error("split ratios {ratios:?} must sum to 1")]
    BadSplitRatios { ratios: [f64; 3] },

    #[error("cannot split {n_dialogues} dialogues into {n_parts} non-empty parts")]
    TooFewDialogues { n_dialogues: usize, n_parts: usize },

    #[error("corpus has unlabeled utterances; training requires labels")]
    UnlabeledCorpus,

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("checkpoint format error: {msg}")]
    CheckpointFormat { msg: String },

    #[error("checkpoint is incompatible with the run configuration: {msg}")]
    CheckpointMismatch { msg: String },

    #[error("config error: {msg}")]
    Config { msg: String },

    #[error("missing parameter {name:?}")]
    MissingParameter { name: String },

    #[error("empty input: {msg}")]
    EmptyInput { msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse classification used by the CLI to pick an exit code.
    pub fn exit_class(&self) -> ExitClass {
        use Error::*;
        match self {
            Config { .. } | CheckpointMismatch { .. } | BadSplitRatios { .. } => ExitClass::Config,
            CorpusParse { .. }
            | UnknownLabel { .. }
            | BadDialogue { .. }
            | EmptyCorpus
            | UnlabeledCorpus
            | TooFewDialogues { .. }
            | CheckpointFormat { .. }
            | EmptyInput { .. }
            | Io(_) => ExitClass::Data,
            NonFiniteLoss { .. } => ExitClass::Numeric,
            _ => ExitClass::Numeric,
        }
    }
}

/// Exit-code classes for the command-line frontend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config,
    Data,
    Numeric,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        match self {
            ExitClass::Config => 2,
            ExitClass::Data => 3,
            ExitClass::Numeric => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Conversation emotion recognition over sentence-level emotion
//! orientation vectors.
//!
//! The pipeline encodes each utterance into a sentence vector, projects it
//! onto an emotion-probability vector, fuses both into a sentence-level
//! emotion orientation vector, and classifies per-utterance emotion with a
//! dialogue-context model. Everything runs on a small shape-checked tensor
//! tape with reverse-mode differentiation, so the whole stack is trainable
//! and gradient-checkable end to end.

pub mod checkpoint;
pub mod context;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod par;
pub mod params;
pub mod pipeline;
pub mod seov;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, ExitClass, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

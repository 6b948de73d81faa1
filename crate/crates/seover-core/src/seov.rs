//! Sentence-level emotion orientation vectors.
//!
//! A sentence vector q is projected onto the emotion classes and pushed
//! through a softmax, so the resulting emotion vector q* is a genuine
//! probability vector; q and q* concatenated form the orientation vector
//! e that the context models consume. The ablated fusion mode passes q
//! through unchanged so the emotion slice can be knocked out wholesale.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::SentenceVector;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamSet};
use crate::tape::{softmax_row, Tape, Var};
use crate::tensor::Tensor;

/// Which inputs the context model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Full orientation vector q ⊕ q*.
    Seov,
    /// Ablation: sentence vector q only.
    SentenceOnly,
}

impl FusionMode {
    /// Context-model input width for this mode.
    pub fn input_dim(self, d_model: usize, k_star: usize) -> usize {
        match self {
            FusionMode::Seov => d_model + k_star,
            FusionMode::SentenceOnly => d_model,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Seov => "seov",
            FusionMode::SentenceOnly => "sentence_only",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seov" => Ok(FusionMode::Seov),
            "sentence_only" => Ok(FusionMode::SentenceOnly),
            other => Err(Error::Config {
                msg: format!("unknown fusion mode {other:?} (expected seov or sentence_only)"),
            }),
        }
    }
}

/// The d_model × k* weight map from sentence space onto emotion classes.
/// No bias: the map is weights only.
#[derive(Debug, Clone)]
pub struct EmotionProjection {
    weights: Tensor,
}

impl EmotionProjection {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::InvalidShape {
                op: "EmotionProjection",
                shape: weights.shape().to_vec(),
                msg: "expected d_model x k_star weights".into(),
            });
        }
        Ok(EmotionProjection { weights })
    }

    pub fn d_model(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn k_star(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

/// Fresh Xavier-initialized projection weights under the standard name.
pub fn init_projection_params(d_model: usize, k_star: usize, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut params = ParamSet::new();
    params.insert("proj.w", xavier_uniform(rng, d_model, k_star));
    params
}

/// A k*-dimensional emotion-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionVector {
    q_star: Tensor,
}

impl EmotionVector {
    /// Wrap a probability vector, checking the simplex invariant.
    pub fn new(q_star: Tensor) -> Result<Self> {
        let sum: f64 = q_star.values().iter().sum();
        if q_star.values().iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidShape {
                op: "EmotionVector",
                shape: q_star.shape().to_vec(),
                msg: format!("not on the probability simplex (sum {sum})"),
            });
        }
        Ok(EmotionVector { q_star })
    }

    pub fn k_star(&self) -> usize {
        self.q_star.numel()
    }

    pub fn probabilities(&self) -> &[f64] {
        self.q_star.values()
    }

    /// Stage-1 prediction: the most probable class, ties toward the
    /// lowest id.
    pub fn argmax(&self) -> usize {
        argmax_slice(self.q_star.values())
    }
}

pub(crate) fn argmax_slice(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

// ── tape-level ops (training and eval share these) ──────────────────

/// Pre-softmax emotion logits: q · W, with q a 1 × d_model row.
pub fn emotion_logits(tape: &mut Tape, q: Var, weights: Var) -> Result<Var> {
    tape.matmul(q, weights)
}

/// Emotion probabilities on the tape: softmax(q · W) along the row.
pub fn emotion_probs(tape: &mut Tape, q: Var, weights: Var) -> Result<Var> {
    let logits = emotion_logits(tape, q, weights)?;
    tape.softmax(logits, 1)
}

/// Fuse q and q* into the orientation vector on the tape; the gradient
/// flows to both parts.
pub fn fuse_vars(tape: &mut Tape, q: Var, q_star: Var) -> Result<Var> {
    tape.concat(q, q_star)
}

/// Context-model input for one sentence under `mode`.
pub fn fused_input(tape: &mut Tape, mode: FusionMode, q: Var, proj_w: Var) -> Result<Var> {
    match mode {
        FusionMode::Seov => {
            let q_star = emotion_probs(tape, q, proj_w)?;
            fuse_vars(tape, q, q_star)
        }
        FusionMode::SentenceOnly => Ok(q),
    }
}

// ── typed eval-path API ──────────────────────────────────────────────

/// Project a sentence vector onto the emotion simplex.
pub fn project_emotion(q: &SentenceVector, proj: &EmotionProjection) -> Result<EmotionVector> {
    if q.dim() != proj.d_model() {
        return Err(Error::ShapeMismatch {
            op: "project_emotion",
            lhs: vec![q.dim()],
            rhs: proj.weights.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::new(vec![1, q.dim()], q.0.values().to_vec())?);
    let wv = tape.constant(proj.weights.clone());
    let probs = emotion_probs(&mut tape, qv, wv)?;
    EmotionVector::new(Tensor::vector(tape.value(probs).values().to_vec()))
}

/// The sentence-level emotion orientation vector e = q ⊕ q*.
#[derive(Debug, Clone, PartialEq)]
pub struct Seov {
    e: Tensor,
    d_model: usize,
    k_star: usize,
}

impl Seov {
    pub fn dim(&self) -> usize {
        self.e.numel()
    }

    pub fn values(&self) -> &[f64] {
        self.e.values()
    }

    /// The q slice.
    pub fn sentence_part(&self) -> &[f64] {
        &self.e.values()[..self.d_model]
    }

    /// The q* slice.
    pub fn emotion_part(&self) -> &[f64] {
        &self.e.values()[self.d_model..]
    }

    pub fn k_star(&self) -> usize {
        self.k_star
    }

    /// Rebuild from raw parts (used by tests and diagnostics).
    pub fn from_parts(sentence: &[f64], emotion: &[f64]) -> Self {
        let mut values = sentence.to_vec();
        values.extend_from_slice(emotion);
        Seov {
            e: Tensor::vector(values),
            d_model: sentence.len(),
            k_star: emotion.len(),
        }
    }
}

/// Merge q and q* into the orientation vector. Slicing the result
/// recovers both parts bit-exactly.
pub fn fuse(q: &SentenceVector, q_star: &EmotionVector) -> Seov {
    Seov::from_parts(q.0.values(), q_star.probabilities())
}

/// Ablated fusion: the sentence vector alone, unchanged.
pub fn fuse_ablated(q: &SentenceVector) -> Tensor {
    q.0.clone()
}

/// Cosine similarity between the emotion slices of two orientation
/// vectors — the "direction" diagnostic. Both must share k*.
pub fn orientation_similarity(a: &Seov, b: &Seov) -> Result<f64> {
    if a.k_star() != b.k_star() {
        return Err(Error::ShapeMismatch {
            op: "orientation_similarity",
            lhs: vec![a.k_star()],
            rhs: vec![b.k_star()],
        });
    }
    let (ea, eb) = (a.emotion_part(), b.emotion_part());
    let dot: f64 = ea.iter().zip(eb).map(|(x, y)| x * y).sum();
    let na: f64 = ea.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = eb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidShape {
            op: "orientation_similarity",
            shape: vec![a.k_star()],
            msg: "zero-magnitude emotion slice".into(),
        });
    }
    Ok(dot / (na * nb))
}

/// Eval-path softmax over a plain logits row (no tape), shared by the
/// prediction pipeline.
pub fn probabilities_from_logits(logits: &[f64]) -> Vec<f64> {
    softmax_row(logits)
}

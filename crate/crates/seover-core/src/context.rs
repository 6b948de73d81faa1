//! Dialogue-level context models over orientation-vector sequences.
//!
//! Two variants: a bidirectional LSTM that reads the whole dialogue but
//! ignores speakers, and a speaker-aware recurrent model that threads a
//! per-speaker GRU state (shared parameters, zero-initialized) alongside
//! a global context GRU and an emotion-state GRU. Both end in an affine
//! map to per-utterance emotion logits.
//!
//! The speaker-aware variant is deliberately attention-free; the config
//! leaves room for a heavier variant later.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{xavier_uniform, zeros_vec, Binding, ParamSet};
use crate::seov::argmax_slice;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextVariant {
    Bclstm,
    SpeakerRnn,
}

impl ContextVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextVariant::Bclstm => "bclstm",
            ContextVariant::SpeakerRnn => "speaker_rnn",
        }
    }
}

impl std::str::FromStr for ContextVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bclstm" => Ok(ContextVariant::Bclstm),
            "speaker_rnn" => Ok(ContextVariant::SpeakerRnn),
            other => Err(Error::Config {
                msg: format!("unknown context variant {other:?} (expected bclstm or speaker_rnn)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextModelConfig {
    pub variant: ContextVariant,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl ContextModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_classes < 2 {
            return Err(Error::Config {
                msg: format!(
                    "context config needs positive dims and >=2 classes, got input {} hidden {} classes {}",
                    self.input_dim, self.hidden_dim, self.n_classes
                ),
            });
        }
        Ok(())
    }
}

/// One dialogue ready for the context model: per-turn input vectors,
/// dense speaker ids, optional gold labels.
#[derive(Debug, Clone)]
pub struct DialogueBatch {
    pub seovs: Vec<Tensor>,
    pub speakers: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl DialogueBatch {
    pub fn len(&self) -> usize {
        self.seovs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seovs.is_empty()
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput {
                msg: "context model needs a non-empty dialogue".into(),
            });
        }
        if self.speakers.len() != self.len()
            || self.labels.as_ref().is_some_and(|l| l.len() != self.len())
        {
            return Err(Error::ShapeMismatch {
                op: "DialogueBatch",
                lhs: vec![self.len()],
                rhs: vec![self.speakers.len()],
            });
        }
        for s in &self.seovs {
            if s.numel() != input_dim {
                return Err(Error::ShapeMismatch {
                    op: "DialogueBatch input_dim",
                    lhs: vec![input_dim],
                    rhs: s.shape().to_vec(),
                });
            }
        }
        validate_dense_speakers(&self.speakers)
    }
}

pub(crate) fn validate_dense_speakers(speakers: &[usize]) -> Result<()> {
    let max = speakers.iter().copied().max().unwrap_or(0);
    for want in 0..=max {
        if !speakers.contains(&want) {
            return Err(Error::SparseSpeakerIds {
                msg: format!("id {want} missing below max id {max}"),
            });
        }
    }
    Ok(())
}

/// Fresh parameters for the chosen variant.
pub fn init_context_params(config: &ContextModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
    config.validate()?;
    let (inp, h, c) = (config.input_dim, config.hidden_dim, config.n_classes);
    let mut params = ParamSet::new();
    match config.variant {
        ContextVariant::Bclstm => {
            for dir in ["fwd", "bwd"] {
                params.insert(format!("ctx.{dir}.w_ih"), xavier_uniform(rng, inp, 4 * h));
                params.insert(format!("ctx.{dir}.w_hh"), xavier_uniform(rng, h, 4 * h));
                params.insert(format!("ctx.{dir}.b"), zeros_vec(4 * h));
            }
            params.insert("ctx.out.w", xavier_uniform(rng, 2 * h, c));
            params.insert("ctx.out.b", zeros_vec(c));
        }
        ContextVariant::SpeakerRnn => {
            params.insert("ctx.glob.w_ih", xavier_uniform(rng, inp, 3 * h));
            params.insert("ctx.glob.w_hh", xavier_uniform(rng, h, 3 * h));
            params.insert("ctx.glob.b", zeros_vec(3 * h));
            params.insert("ctx.spk.w_ih", xavier_uniform(rng, inp + h, 3 * h));
            params.insert("ctx.spk.w_hh", xavier_uniform(rng, h, 3 * h));
            params.insert("ctx.spk.b", zeros_vec(3 * h));
            params.insert("ctx.emo.w_ih", xavier_uniform(rng, h, 3 * h));
            params.insert("ctx.emo.w_hh", xavier_uniform(rng, h, 3 * h));
            params.insert("ctx.emo.b", zeros_vec(3 * h));
            params.insert("ctx.out.w", xavier_uniform(rng, h, c));
            params.insert("ctx.out.b", zeros_vec(c));
        }
    }
    Ok(params)
}

fn sub(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let neg = tape.scale(b, -1.0)?;
    tape.add(a, neg)
}

/// One LSTM step (gate order i, f, g, o). Returns (h', c').
#[allow(clippy::too_many_arguments)]
fn lstm_step(
    tape: &mut Tape,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let zx = tape.matmul(x, w_ih)?;
    let zh = tape.matmul(h, w_hh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, b)?;
    let i_raw = tape.slice(z, 0, hidden)?;
    let f_raw = tape.slice(z, hidden, hidden)?;
    let g_raw = tape.slice(z, 2 * hidden, hidden)?;
    let o_raw = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_raw)?;
    let f = tape.sigmoid(f_raw)?;
    let g = tape.tanh(g_raw)?;
    let o = tape.sigmoid(o_raw)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_new)?;
    let h_new = tape.mul(o, c_act)?;
    Ok((h_new, c_new))
}

/// One GRU step (gate order r, z, n).
fn gru_step(
    tape: &mut Tape,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    x: Var,
    h: Var,
    hidden: usize,
) -> Result<Var> {
    let gx = tape.matmul(x, w_ih)?;
    let gx = tape.add_bias(gx, b)?;
    let gh = tape.matmul(h, w_hh)?;
    let r_raw = {
        let a = tape.slice(gx, 0, hidden)?;
        let b = tape.slice(gh, 0, hidden)?;
        tape.add(a, b)?
    };
    let z_raw = {
        let a = tape.slice(gx, hidden, hidden)?;
        let b = tape.slice(gh, hidden, hidden)?;
        tape.add(a, b)?
    };
    let r = tape.sigmoid(r_raw)?;
    let z = tape.sigmoid(z_raw)?;
    let n_raw = {
        let a = tape.slice(gx, 2 * hidden, hidden)?;
        let gated = {
            let hh = tape.slice(gh, 2 * hidden, hidden)?;
            tape.mul(r, hh)?
        };
        tape.add(a, gated)?
    };
    let n = tape.tanh(n_raw)?;
    // h' = n + z * (h - n)  ==  (1-z) n + z h
    let h_minus_n = sub(tape, h, n)?;
    let gated = tape.mul(z, h_minus_n)?;
    tape.add(n, gated)
}

fn zeros_row(tape: &mut Tape, width: usize) -> Var {
    tape.constant(Tensor::zeros(vec![1, width]))
}

/// Pre-classifier hidden sequence of the bidirectional LSTM: per turn the
/// forward and backward hidden states concatenated.
pub(crate) fn bclstm_hidden_states(
    tape: &mut Tape,
    binding: &Binding,
    config: &ContextModelConfig,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    let h = config.hidden_dim;
    let fwd_w_ih = binding.var("ctx.fwd.w_ih")?;
    let fwd_w_hh = binding.var("ctx.fwd.w_hh")?;
    let fwd_b = binding.var("ctx.fwd.b")?;
    let bwd_w_ih = binding.var("ctx.bwd.w_ih")?;
    let bwd_w_hh = binding.var("ctx.bwd.w_hh")?;
    let bwd_b = binding.var("ctx.bwd.b")?;

    let n = inputs.len();
    let mut fwd_states = Vec::with_capacity(n);
    let mut state = (zeros_row(tape, h), zeros_row(tape, h));
    for &x in inputs {
        state = lstm_step(tape, fwd_w_ih, fwd_w_hh, fwd_b, x, state.0, state.1, h)?;
        fwd_states.push(state.0);
    }
    let mut bwd_states = vec![fwd_states[0]; n];
    let mut state = (zeros_row(tape, h), zeros_row(tape, h));
    for t in (0..n).rev() {
        state = lstm_step(
            tape, bwd_w_ih, bwd_w_hh, bwd_b, inputs[t], state.0, state.1, h,
        )?;
        bwd_states[t] = state.0;
    }

    (0..n)
        .map(|t| tape.concat(fwd_states[t], bwd_states[t]))
        .collect()
}

/// Bidirectional-LSTM context model on the tape: n input rows in, an
/// n × n_classes logit matrix out. Speaker ids are ignored by design.
pub fn bclstm_forward_vars(
    tape: &mut Tape,
    binding: &Binding,
    config: &ContextModelConfig,
    inputs: &[Var],
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput {
            msg: "bclstm_forward on an empty dialogue".into(),
        });
    }
    for &x in inputs {
        let sh = tape.shape(x);
        if sh != [1, config.input_dim] {
            return Err(Error::ShapeMismatch {
                op: "bclstm input",
                lhs: vec![1, config.input_dim],
                rhs: sh.to_vec(),
            });
        }
    }
    let hiddens = bclstm_hidden_states(tape, binding, config, inputs)?;
    let out_w = binding.var("ctx.out.w")?;
    let out_b = binding.var("ctx.out.b")?;
    let mut logit_rows = Vec::with_capacity(hiddens.len());
    for hv in hiddens {
        let row = tape.matmul(hv, out_w)?;
        logit_rows.push(tape.add_bias(row, out_b)?);
    }
    tape.concat_rows(&logit_rows)
}

/// Speaker-aware recurrent context model on the tape.
///
/// Per turn: the current speaker's state thread is updated from the turn
/// input and the previous global state, the emotion state is updated from
/// the speaker state, the global GRU absorbs the turn input, and logits
/// come from the emotion state. All recurrences are forward-only.
pub fn speaker_rnn_forward_vars(
    tape: &mut Tape,
    binding: &Binding,
    config: &ContextModelConfig,
    inputs: &[Var],
    speakers: &[usize],
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput {
            msg: "speaker_rnn_forward on an empty dialogue".into(),
        });
    }
    if speakers.len() != inputs.len() {
        return Err(Error::ShapeMismatch {
            op: "speaker_rnn speakers",
            lhs: vec![inputs.len()],
            rhs: vec![speakers.len()],
        });
    }
    validate_dense_speakers(speakers)?;
    for &x in inputs {
        let sh = tape.shape(x);
        if sh != [1, config.input_dim] {
            return Err(Error::ShapeMismatch {
                op: "speaker_rnn input",
                lhs: vec![1, config.input_dim],
                rhs: sh.to_vec(),
            });
        }
    }
    let h = config.hidden_dim;
    let glob = (
        binding.var("ctx.glob.w_ih")?,
        binding.var("ctx.glob.w_hh")?,
        binding.var("ctx.glob.b")?,
    );
    let spk = (
        binding.var("ctx.spk.w_ih")?,
        binding.var("ctx.spk.w_hh")?,
        binding.var("ctx.spk.b")?,
    );
    let emo = (
        binding.var("ctx.emo.w_ih")?,
        binding.var("ctx.emo.w_hh")?,
        binding.var("ctx.emo.b")?,
    );
    let out_w = binding.var("ctx.out.w")?;
    let out_b = binding.var("ctx.out.b")?;

    let zero = zeros_row(tape, h);
    let mut global = zero;
    let mut emotion = zero;
    let mut speaker_states: HashMap<usize, Var> = HashMap::new();

    let mut logit_rows = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let speaker = speakers[t];
        let prev_state = *speaker_states.get(&speaker).unwrap_or(&zero);
        let spk_input = tape.concat(x, global)?;
        let new_state = gru_step(tape, spk.0, spk.1, spk.2, spk_input, prev_state, h)?;
        speaker_states.insert(speaker, new_state);
        emotion = gru_step(tape, emo.0, emo.1, emo.2, new_state, emotion, h)?;
        global = gru_step(tape, glob.0, glob.1, glob.2, x, global, h)?;
        let row = tape.matmul(emotion, out_w)?;
        logit_rows.push(tape.add_bias(row, out_b)?);
    }
    tape.concat_rows(&logit_rows)
}

/// Dispatch on the configured variant.
pub fn context_forward_vars(
    tape: &mut Tape,
    binding: &Binding,
    config: &ContextModelConfig,
    inputs: &[Var],
    speakers: &[usize],
) -> Result<Var> {
    match config.variant {
        ContextVariant::Bclstm => bclstm_forward_vars(tape, binding, config, inputs),
        ContextVariant::SpeakerRnn => {
            speaker_rnn_forward_vars(tape, binding, config, inputs, speakers)
        }
    }
}

/// Eval-path forward over a typed batch: builds a private tape and
/// returns the logits as a plain tensor.
pub fn context_forward(
    batch: &DialogueBatch,
    params: &ParamSet,
    config: &ContextModelConfig,
) -> Result<Tensor> {
    batch.validate(config.input_dim)?;
    let mut tape = Tape::new();
    let binding = Binding::bind(&mut tape, params, false);
    let inputs: Vec<Var> = batch
        .seovs
        .iter()
        .map(|s| {
            tape.constant(
                Tensor::new(vec![1, s.numel()], s.values().to_vec()).expect("row reshape"),
            )
        })
        .collect();
    let logits = context_forward_vars(&mut tape, &binding, config, &inputs, &batch.speakers)?;
    Ok(tape.value(logits).clone())
}

/// Bidirectional-LSTM forward over a typed batch.
pub fn bclstm_forward(
    batch: &DialogueBatch,
    params: &ParamSet,
    config: &ContextModelConfig,
) -> Result<Tensor> {
    let cfg = ContextModelConfig {
        variant: ContextVariant::Bclstm,
        ..config.clone()
    };
    context_forward(batch, params, &cfg)
}

/// Speaker-aware forward over a typed batch.
pub fn speaker_rnn_forward(
    batch: &DialogueBatch,
    params: &ParamSet,
    config: &ContextModelConfig,
) -> Result<Tensor> {
    let cfg = ContextModelConfig {
        variant: ContextVariant::SpeakerRnn,
        ..config.clone()
    };
    context_forward(batch, params, &cfg)
}

/// Per-row argmax over a logit matrix; ties break toward the lowest id.
pub fn classify(logits: &Tensor) -> Vec<usize> {
    let (rows, cols) = logits.as_rows();
    (0..rows)
        .map(|r| argmax_slice(&logits.values()[r * cols..(r + 1) * cols]))
        .collect()
}

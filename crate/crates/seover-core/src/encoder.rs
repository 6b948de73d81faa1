//! Sentence encoder: a small transformer whose output form is a single
//! pooled vector per sentence.
//!
//! Token embeddings plus sinusoidal positions run through post-norm
//! attention/feed-forward blocks and a final layer norm; the hidden state
//! at the leading CLS position is the sentence vector. Sentences are
//! encoded independently; dialogue context enters later, in the context
//! models.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{normal, ones, xavier_uniform, zeros_vec, Binding, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::TokenSequence;

/// Encoder hyperparameters. `d_model` is the sentence-vector length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // Desk-scale defaults; the published-scale 768-dim encoder is a
        // config choice, not a different code path.
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config {
                msg: format!(
                    "d_model must be a positive even number, got {}",
                    self.d_model
                ),
            });
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config {
                msg: format!(
                    "d_model {} must be divisible by n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if self.d_ff == 0 {
            return Err(Error::Config {
                msg: "d_ff must be positive".into(),
            });
        }
        if self.max_len < 1 {
            return Err(Error::Config {
                msg: "max_len must be at least 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config {
                msg: format!("dropout_rate must be in [0,1), got {}", self.dropout_rate),
            });
        }
        Ok(())
    }
}

/// A pooled d_model-dimensional encoding of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector(pub Tensor);

impl SentenceVector {
    pub fn dim(&self) -> usize {
        self.0.numel()
    }
}

/// Sinusoidal position table: row p, even column 2i holds
/// sin(p / 10000^(2i/d)), the following odd column the matching cosine.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config {
            msg: format!("positional encoding needs an even d_model, got {d_model}"),
        });
    }
    let mut values = vec![0.0; max_len * d_model];
    for p in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            values[p * d_model + 2 * i] = angle.sin();
            values[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![max_len, d_model], values)
}

/// Fresh encoder parameters: N(0, 0.02) embeddings, Xavier projections,
/// identity layer norms.
pub fn init_encoder_params(
    config: &EncoderConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet> {
    config.validate()?;
    let d = config.d_model;
    let mut params = ParamSet::new();
    params.insert("enc.embed", normal(rng, vec![vocab_size, d], 0.02));
    for l in 0..config.n_layers {
        for name in ["wq", "wk", "wv", "wo"] {
            params.insert(format!("enc.l{l}.{name}"), xavier_uniform(rng, d, d));
        }
        params.insert(format!("enc.l{l}.ln1.gain"), ones(d));
        params.insert(format!("enc.l{l}.ln1.bias"), zeros_vec(d));
        params.insert(
            format!("enc.l{l}.ff.w1"),
            xavier_uniform(rng, d, config.d_ff),
        );
        params.insert(format!("enc.l{l}.ff.b1"), zeros_vec(config.d_ff));
        params.insert(
            format!("enc.l{l}.ff.w2"),
            xavier_uniform(rng, config.d_ff, d),
        );
        params.insert(format!("enc.l{l}.ff.b2"), zeros_vec(d));
        params.insert(format!("enc.l{l}.ln2.gain"), ones(d));
        params.insert(format!("enc.l{l}.ln2.bias"), zeros_vec(d));
    }
    params.insert("enc.final_ln.gain", ones(d));
    params.insert("enc.final_ln.bias", zeros_vec(d));
    Ok(params)
}

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e9;

/// Multi-head self-attention over an L×d_model input. `pad_mask[i]` is
/// true for real positions; padded key positions get a large negative
/// score before the softmax.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_self_attention(
    tape: &mut Tape,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    pad_mask: &[bool],
    n_heads: usize,
) -> Result<Var> {
    let (out, _) = mha_with_weights(tape, x, wq, wk, wv, wo, pad_mask, n_heads)?;
    Ok(out)
}

/// Attention with the per-head weight matrices exposed, so tests can
/// check row-normalization and masking directly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_with_weights(
    tape: &mut Tape,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    pad_mask: &[bool],
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let xsh = tape.shape(x).to_vec();
    if xsh.len() != 2 {
        return Err(Error::InvalidShape {
            op: "multi_head_self_attention",
            shape: xsh,
            msg: "expected an L x d_model input".into(),
        });
    }
    let (seq_len, d_model) = (xsh[0], xsh[1]);
    if pad_mask.len() != seq_len {
        return Err(Error::ShapeMismatch {
            op: "attention pad_mask",
            lhs: xsh,
            rhs: vec![pad_mask.len()],
        });
    }
    if !pad_mask.iter().any(|m| *m) {
        return Err(Error::AllPadded);
    }
    let d_head = d_model / n_heads;

    // Additive mask: every query row sees MASK_NEG at padded key columns.
    let mut mask_vals = vec![0.0; seq_len * seq_len];
    for q in 0..seq_len {
        for k in 0..seq_len {
            if !pad_mask[k] {
                mask_vals[q * seq_len + k] = MASK_NEG;
            }
        }
    }
    let mask = tape.constant(Tensor::new(vec![seq_len, seq_len], mask_vals)?);

    let q_all = tape.matmul(x, wq)?;
    let k_all = tape.matmul(x, wk)?;
    let v_all = tape.matmul(x, wv)?;

    let mut head_outputs = Vec::with_capacity(n_heads);
    let mut head_weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice(q_all, h * d_head, d_head)?;
        let kh = tape.slice(k_all, h * d_head, d_head)?;
        let vh = tape.slice(v_all, h * d_head, d_head)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (d_head as f64).sqrt())?;
        let masked = tape.add(scaled, mask)?;
        let attn = tape.softmax(masked, 1)?;
        head_weights.push(attn);
        head_outputs.push(tape.matmul(attn, vh)?);
    }

    let mut joined = head_outputs[0];
    for &h in &head_outputs[1..] {
        joined = tape.concat(joined, h)?;
    }
    Ok((tape.matmul(joined, wo)?, head_weights))
}

fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    use rand::Rng;
    let keep = 1.0 - rate;
    let numel = tape.value(x).numel();
    let shape = tape.shape(x).to_vec();
    let mask_vals: Vec<f64> = (0..numel)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask_vals)?);
    tape.mul(x, mask)
}

/// Encode one token sequence to its sentence vector (a 1 x d_model row on
/// the tape). Pass a dropout RNG for training mode; eval mode (`None`) is
/// deterministic.
pub fn encode_sentence(
    tape: &mut Tape,
    binding: &Binding,
    config: &EncoderConfig,
    tokens: &TokenSequence,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let embed = binding.var("enc.embed")?;
    let vocab_size = tape.shape(embed)[0];
    let ids: Vec<usize> = tokens.ids.iter().map(|&id| id as usize).collect();
    for &id in &ids {
        if id >= vocab_size {
            return Err(Error::TokenIdOutOfRange {
                id: id as u32,
                vocab_size,
            });
        }
    }
    let seq_len = ids.len();
    let true_len = tokens.true_len().max(1);
    let pad_mask: Vec<bool> = (0..seq_len).map(|i| i < true_len).collect();

    let emb = tape.gather_rows(embed, &ids)?;
    let pe = positional_encoding(seq_len, config.d_model)?;
    let pe = tape.constant(pe);
    let mut x = tape.add(emb, pe)?;
    if let Some(rng) = dropout_rng.as_deref_mut() {
        x = apply_dropout(tape, x, config.dropout_rate, rng)?;
    }

    for l in 0..config.n_layers {
        let wq = binding.var(&format!("enc.l{l}.wq"))?;
        let wk = binding.var(&format!("enc.l{l}.wk"))?;
        let wv = binding.var(&format!("enc.l{l}.wv"))?;
        let wo = binding.var(&format!("enc.l{l}.wo"))?;
        let mut attn =
            multi_head_self_attention(tape, x, wq, wk, wv, wo, &pad_mask, config.n_heads)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            attn = apply_dropout(tape, attn, config.dropout_rate, rng)?;
        }
        let res = tape.add(x, attn)?;
        let g1 = binding.var(&format!("enc.l{l}.ln1.gain"))?;
        let b1 = binding.var(&format!("enc.l{l}.ln1.bias"))?;
        x = tape.layer_norm(res, g1, b1, LN_EPS)?;

        let w1 = binding.var(&format!("enc.l{l}.ff.w1"))?;
        let fb1 = binding.var(&format!("enc.l{l}.ff.b1"))?;
        let w2 = binding.var(&format!("enc.l{l}.ff.w2"))?;
        let fb2 = binding.var(&format!("enc.l{l}.ff.b2"))?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, fb1)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w2)?;
        let mut ff = tape.add_bias(h, fb2)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            ff = apply_dropout(tape, ff, config.dropout_rate, rng)?;
        }
        let res = tape.add(x, ff)?;
        let g2 = binding.var(&format!("enc.l{l}.ln2.gain"))?;
        let b2 = binding.var(&format!("enc.l{l}.ln2.bias"))?;
        x = tape.layer_norm(res, g2, b2, LN_EPS)?;
    }

    let gf = binding.var("enc.final_ln.gain")?;
    let bf = binding.var("enc.final_ln.bias")?;
    let x = tape.layer_norm(x, gf, bf, LN_EPS)?;

    // Pooled output: the hidden state at the CLS position.
    tape.gather_rows(x, &[0])
}

/// Encode every sentence of a dialogue independently, preserving order.
pub fn encode_dialogue(
    tape: &mut Tape,
    binding: &Binding,
    config: &EncoderConfig,
    sentences: &[TokenSequence],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Var>> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput {
            msg: "encode_dialogue needs at least one sentence".into(),
        });
    }
    sentences
        .iter()
        .map(|s| encode_sentence(tape, binding, config, s, dropout_rng.as_deref_mut()))
        .collect()
}

/// Eval-mode convenience: encode on a private tape and return the pooled
/// vector as a plain 1-D tensor.
pub fn encode_sentence_eval(
    params: &ParamSet,
    config: &EncoderConfig,
    tokens: &TokenSequence,
) -> Result<SentenceVector> {
    let mut tape = Tape::new();
    let binding = Binding::bind(&mut tape, params, false);
    let q = encode_sentence(&mut tape, &binding, config, tokens, None)?;
    let row = tape.value(q);
    Ok(SentenceVector(Tensor::vector(row.values().to_vec())))
}

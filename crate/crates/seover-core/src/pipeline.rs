//! Full-model assembly: tokenizer output → sentence encoder → emotion
//! projection → orientation-vector fusion → dialogue context model.
//!
//! One parameter set holds the whole stack. The encoder and projection
//! form the "upstream" group (trained in stage 1, optionally frozen in
//! stage 2); the context model is the downstream group. Evaluation and
//! prediction run per dialogue and parallelize across dialogues.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{
    context_forward, context_forward_vars, init_context_params, ContextModelConfig, ContextVariant,
    DialogueBatch,
};
use crate::corpus::{DialogueCorpus, LabelSet, Utterance};
use crate::encoder::{encode_sentence, init_encoder_params, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{confusion, f1_scores, ConfusionMatrix, EvalReport};
use crate::par;
use crate::params::{Binding, ParamSet};
use crate::seov::{
    emotion_logits, fused_input, init_projection_params, probabilities_from_logits, FusionMode,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{tokenize, TokenSequence, Vocabulary};

/// True for parameters trained in stage 1 and optionally frozen in
/// stage 2.
pub fn is_upstream(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("proj.")
}

/// The complete emotion-recognition model.
#[derive(Debug, Clone)]
pub struct EmotionModel {
    pub label_set: LabelSet,
    pub encoder_config: EncoderConfig,
    pub context_config: ContextModelConfig,
    pub fusion: FusionMode,
    pub vocab_size: usize,
    pub params: ParamSet,
}

impl EmotionModel {
    /// Initialize all parameter groups from one seed. The number of
    /// emotion classes is bound to the label set here; a mismatch is a
    /// construction-time error.
    pub fn new(
        label_set: LabelSet,
        encoder_config: EncoderConfig,
        variant: ContextVariant,
        hidden_dim: usize,
        fusion: FusionMode,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        encoder_config.validate()?;
        let k_star = label_set.len();
        let context_config = ContextModelConfig {
            variant,
            input_dim: fusion.input_dim(encoder_config.d_model, k_star),
            hidden_dim,
            n_classes: k_star,
        };
        context_config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_encoder_params(&encoder_config, vocab_size, &mut rng)?;
        params.absorb(
            "",
            init_projection_params(encoder_config.d_model, k_star, &mut rng),
        );
        params.absorb("", init_context_params(&context_config, &mut rng)?);
        Ok(EmotionModel {
            label_set,
            encoder_config,
            context_config,
            fusion,
            vocab_size,
            params,
        })
    }

    pub fn k_star(&self) -> usize {
        self.label_set.len()
    }

    /// Upstream (encoder + projection) parameters only.
    pub fn upstream_params(&self) -> ParamSet {
        self.params.subset(is_upstream)
    }

    /// Tokenize one utterance with this model's length budget.
    pub fn tokenize_utterance(&self, vocab: &Vocabulary, text: &str) -> TokenSequence {
        tokenize(text, vocab, self.encoder_config.max_len)
    }

    /// Context-model input rows for one dialogue, on the tape. Used by
    /// the co-training path; gradients flow into the encoder and the
    /// projection.
    pub fn fused_inputs_vars(
        &self,
        tape: &mut Tape,
        upstream: &Binding,
        sentences: &[TokenSequence],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        let proj_w = upstream.var("proj.w")?;
        sentences
            .iter()
            .map(|s| {
                let q = encode_sentence(
                    tape,
                    upstream,
                    &self.encoder_config,
                    s,
                    dropout_rng.as_deref_mut(),
                )?;
                fused_input(tape, self.fusion, q, proj_w)
            })
            .collect()
    }

    /// Full-pipeline logits for one dialogue on the tape (co-training
    /// path).
    pub fn dialogue_logits_vars(
        &self,
        tape: &mut Tape,
        upstream: &Binding,
        context: &Binding,
        sentences: &[TokenSequence],
        speakers: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let inputs = self.fused_inputs_vars(tape, upstream, sentences, dropout_rng)?;
        context_forward_vars(tape, context, &self.context_config, &inputs, speakers)
    }

    /// Eval-mode per-sentence pipeline state: the sentence vector, the
    /// emotion probabilities, and the fused context input.
    pub fn sentence_states(&self, sentences: &[TokenSequence]) -> Result<Vec<SentenceState>> {
        let mut tape = Tape::new();
        let upstream = Binding::bind_where(&mut tape, &self.params, is_upstream, false);
        let proj_w = upstream.var("proj.w")?;
        sentences
            .iter()
            .map(|s| {
                let q = encode_sentence(&mut tape, &upstream, &self.encoder_config, s, None)?;
                let logits = emotion_logits(&mut tape, q, proj_w)?;
                let probs = probabilities_from_logits(tape.value(logits).values());
                let fused = fused_input(&mut tape, self.fusion, q, proj_w)?;
                Ok(SentenceState {
                    sentence_vector: Tensor::vector(tape.value(q).values().to_vec()),
                    emotion_probs: probs,
                    fused: Tensor::vector(tape.value(fused).values().to_vec()),
                })
            })
            .collect()
    }

    /// Predict one dialogue in eval mode.
    pub fn predict_dialogue(
        &self,
        sentences: &[TokenSequence],
        speakers: &[usize],
    ) -> Result<DialoguePrediction> {
        let states = self.sentence_states(sentences)?;
        let batch = DialogueBatch {
            seovs: states.iter().map(|s| s.fused.clone()).collect(),
            speakers: speakers.to_vec(),
            labels: None,
        };
        let logits = context_forward(&batch, &self.params, &self.context_config)?;
        let labels = crate::context::classify(&logits);
        Ok(DialoguePrediction {
            labels,
            emotion_probs: states.into_iter().map(|s| s.emotion_probs).collect(),
            logits,
        })
    }
}

/// Per-sentence eval-mode forward products.
#[derive(Debug, Clone)]
pub struct SentenceState {
    pub sentence_vector: Tensor,
    pub emotion_probs: Vec<f64>,
    pub fused: Tensor,
}

/// Per-dialogue prediction output.
#[derive(Debug, Clone)]
pub struct DialoguePrediction {
    /// Predicted label ids, one per turn.
    pub labels: Vec<usize>,
    /// Stage-1 emotion probabilities, one vector per turn.
    pub emotion_probs: Vec<Vec<f64>>,
    /// Raw context-model logits.
    pub logits: Tensor,
}

/// Dense speaker ids by order of first appearance within the dialogue.
pub fn dense_speaker_ids(turns: &[Utterance]) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    turns
        .iter()
        .map(|u| match seen.iter().position(|s| *s == u.speaker) {
            Some(i) => i,
            None => {
                seen.push(&u.speaker);
                seen.len() - 1
            }
        })
        .collect()
}

/// One dialogue of a corpus, tokenized and ready for the model.
#[derive(Debug, Clone)]
pub struct PreparedDialogue {
    pub dialogue_id: String,
    pub sentences: Vec<TokenSequence>,
    pub speakers: Vec<usize>,
    /// Gold label id per turn, where labeled.
    pub labels: Vec<Option<usize>>,
    /// Original turn indices, for joining predictions back to records.
    pub turn_indices: Vec<usize>,
}

/// Tokenize a whole corpus into per-dialogue model inputs.
pub fn prepare_corpus(
    model: &EmotionModel,
    vocab: &Vocabulary,
    corpus: &DialogueCorpus,
) -> Vec<PreparedDialogue> {
    corpus
        .dialogues()
        .map(|(id, turns)| PreparedDialogue {
            dialogue_id: id.clone(),
            sentences: turns
                .iter()
                .map(|u| model.tokenize_utterance(vocab, &u.text))
                .collect(),
            speakers: dense_speaker_ids(turns),
            labels: turns
                .iter()
                .map(|u| u.label.as_deref().and_then(|l| model.label_set.id_of(l)))
                .collect(),
            turn_indices: turns.iter().map(|u| u.turn_index).collect(),
        })
        .collect()
}

/// Evaluate the full pipeline over a corpus. Dialogues run in parallel;
/// metrics count only labeled turns. Deterministic regardless of the
/// worker count: per-dialogue confusion counts are integers merged in
/// input order.
pub fn evaluate_corpus(
    model: &EmotionModel,
    vocab: &Vocabulary,
    corpus: &DialogueCorpus,
) -> Result<EvalReport> {
    let prepared = prepare_corpus(model, vocab, corpus);
    let results: Vec<Result<ConfusionMatrix>> = par::map(&prepared, |dialogue| {
        let pred = model.predict_dialogue(&dialogue.sentences, &dialogue.speakers)?;
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for (t, gold) in dialogue.labels.iter().enumerate() {
            if let Some(g) = gold {
                golds.push(*g);
                preds.push(pred.labels[t]);
            }
        }
        confusion(&golds, &preds, &model.label_set)
    });
    let mut merged = ConfusionMatrix::empty(model.label_set.clone());
    for r in results {
        merged.merge(&r?);
    }
    f1_scores(&merged)
}

/// Stage-1 evaluation: per-utterance argmax of the emotion probabilities,
/// ignoring dialogue context entirely.
pub fn evaluate_stage1(
    model: &EmotionModel,
    vocab: &Vocabulary,
    corpus: &DialogueCorpus,
) -> Result<EvalReport> {
    let prepared = prepare_corpus(model, vocab, corpus);
    let results: Vec<Result<ConfusionMatrix>> = par::map(&prepared, |dialogue| {
        let states = model.sentence_states(&dialogue.sentences)?;
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for (t, gold) in dialogue.labels.iter().enumerate() {
            if let Some(g) = gold {
                golds.push(*g);
                preds.push(crate::seov::argmax_slice(&states[t].emotion_probs));
            }
        }
        confusion(&golds, &preds, &model.label_set)
    });
    let mut merged = ConfusionMatrix::empty(model.label_set.clone());
    for r in results {
        merged.merge(&r?);
    }
    f1_scores(&merged)
}

/// Prediction for one utterance, joined back to its corpus position.
#[derive(Debug, Clone)]
pub struct UtterancePrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub label_id: usize,
    pub emotion_probs: Vec<f64>,
}

/// Predict every utterance of a corpus (labels not required).
pub fn predict_corpus(
    model: &EmotionModel,
    vocab: &Vocabulary,
    corpus: &DialogueCorpus,
) -> Result<Vec<UtterancePrediction>> {
    let prepared = prepare_corpus(model, vocab, corpus);
    let results: Vec<Result<Vec<UtterancePrediction>>> = par::map(&prepared, |dialogue| {
        let pred = model.predict_dialogue(&dialogue.sentences, &dialogue.speakers)?;
        Ok(dialogue
            .turn_indices
            .iter()
            .enumerate()
            .map(|(t, &turn_index)| UtterancePrediction {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn_index,
                label_id: pred.labels[t],
                emotion_probs: pred.emotion_probs[t].clone(),
            })
            .collect())
    });
    let mut out = Vec::with_capacity(corpus.n_utterances());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Encode every utterance of a corpus to its sentence vector (eval
/// mode), dialogue-parallel, preserving corpus order.
pub fn sentence_vectors(
    model: &EmotionModel,
    vocab: &Vocabulary,
    corpus: &DialogueCorpus,
) -> Result<Vec<Tensor>> {
    let prepared = prepare_corpus(model, vocab, corpus);
    let results: Vec<Result<Vec<Tensor>>> = par::map(&prepared, |dialogue| {
        Ok(model
            .sentence_states(&dialogue.sentences)?
            .into_iter()
            .map(|s| s.sentence_vector)
            .collect())
    });
    let mut out = Vec::with_capacity(corpus.n_utterances());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

impl EmotionModel {
    /// Bundle the model into a checkpoint with self-describing metadata.
    pub fn to_checkpoint(&self, stage: u8) -> crate::checkpoint::Checkpoint {
        let mut ckpt = crate::checkpoint::Checkpoint::new(self.params.clone());
        ckpt.set_meta("label_set", self.label_set.name());
        ckpt.set_meta("labels", self.label_set.labels().join(","));
        ckpt.set_meta("fusion", self.fusion.as_str());
        ckpt.set_meta("d_model", self.encoder_config.d_model);
        ckpt.set_meta("n_layers", self.encoder_config.n_layers);
        ckpt.set_meta("n_heads", self.encoder_config.n_heads);
        ckpt.set_meta("d_ff", self.encoder_config.d_ff);
        ckpt.set_meta("max_len", self.encoder_config.max_len);
        ckpt.set_meta("dropout", self.encoder_config.dropout_rate);
        ckpt.set_meta("vocab_size", self.vocab_size);
        ckpt.set_meta("context_variant", self.context_config.variant.as_str());
        ckpt.set_meta("context_input_dim", self.context_config.input_dim);
        ckpt.set_meta("context_hidden_dim", self.context_config.hidden_dim);
        ckpt.set_meta("n_classes", self.context_config.n_classes);
        ckpt.set_meta("stage", stage);
        ckpt
    }

    /// Rebuild a model from checkpoint metadata and parameters.
    pub fn from_checkpoint(ckpt: &crate::checkpoint::Checkpoint) -> Result<Self> {
        let set_name = ckpt.meta("label_set")?;
        let labels: Vec<String> = ckpt.meta("labels")?.split(',').map(String::from).collect();
        let label_set = match LabelSet::by_name(set_name) {
            Some(s) if s.labels() == labels.as_slice() => s,
            _ => LabelSet::new(set_name, labels)?,
        };
        let encoder_config = EncoderConfig {
            d_model: ckpt.meta_usize("d_model")?,
            n_layers: ckpt.meta_usize("n_layers")?,
            n_heads: ckpt.meta_usize("n_heads")?,
            d_ff: ckpt.meta_usize("d_ff")?,
            max_len: ckpt.meta_usize("max_len")?,
            dropout_rate: ckpt.meta("dropout")?.parse().unwrap_or(0.0),
        };
        let fusion: FusionMode = ckpt.meta("fusion")?.parse()?;
        let context_config = ContextModelConfig {
            variant: ckpt.meta("context_variant")?.parse()?,
            input_dim: ckpt.meta_usize("context_input_dim")?,
            hidden_dim: ckpt.meta_usize("context_hidden_dim")?,
            n_classes: ckpt.meta_usize("n_classes")?,
        };
        let expected = fusion.input_dim(encoder_config.d_model, label_set.len());
        if context_config.input_dim != expected {
            return Err(Error::CheckpointMismatch {
                msg: format!(
                    "context input_dim {} does not match fusion mode {} (expected {expected})",
                    context_config.input_dim,
                    fusion.as_str()
                ),
            });
        }
        Ok(EmotionModel {
            label_set,
            encoder_config,
            context_config,
            fusion,
            vocab_size: ckpt.meta_usize("vocab_size")?,
            params: ckpt.params.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(fusion: FusionMode) -> EmotionModel {
        EmotionModel::new(
            LabelSet::meld(),
            EncoderConfig {
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 8,
                max_len: 12,
                dropout_rate: 0.0,
            },
            ContextVariant::Bclstm,
            4,
            fusion,
            20,
            7,
        )
        .unwrap()
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            length: ids.len(),
            source_text: String::new(),
        }
    }

    #[test]
    fn fused_input_width_tracks_the_fusion_mode() {
        for (fusion, want) in [(FusionMode::Seov, 15), (FusionMode::SentenceOnly, 8)] {
            let model = tiny_model(fusion);
            assert_eq!(model.context_config.input_dim, want);
            let states = model.sentence_states(&[seq(&[2, 3, 4])]).unwrap();
            assert_eq!(states[0].fused.numel(), want);
        }
    }

    #[test]
    fn seov_state_carries_q_then_probabilities() {
        let model = tiny_model(FusionMode::Seov);
        let states = model.sentence_states(&[seq(&[2, 5])]).unwrap();
        let s = &states[0];
        assert_eq!(&s.fused.values()[..8], s.sentence_vector.values());
        let tail = &s.fused.values()[8..];
        assert_eq!(tail, s.emotion_probs.as_slice());
        let sum: f64 = tail.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_dialogue_yields_one_label_and_simplex_per_turn() {
        let model = tiny_model(FusionMode::Seov);
        let sents = vec![seq(&[2, 3]), seq(&[2, 4, 5]), seq(&[2, 6])];
        let pred = model.predict_dialogue(&sents, &[0, 1, 0]).unwrap();
        assert_eq!(pred.labels.len(), 3);
        assert_eq!(pred.logits.shape(), &[3, 7]);
        for probs in &pred.emotion_probs {
            assert_eq!(probs.len(), 7);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_speaker_ids_by_first_appearance() {
        let turns: Vec<Utterance> = ["bob", "eve", "bob", "ann"]
            .iter()
            .enumerate()
            .map(|(i, s)| Utterance {
                dialogue_id: "d".into(),
                turn_index: i,
                speaker: s.to_string(),
                text: String::new(),
                label: None,
                split: None,
            })
            .collect();
        assert_eq!(dense_speaker_ids(&turns), vec![0, 1, 0, 2]);
    }

    #[test]
    fn checkpoint_round_trip_rebuilds_an_equivalent_model() {
        let model = tiny_model(FusionMode::Seov);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.to_checkpoint(2).save(&path).unwrap();
        let loaded =
            EmotionModel::from_checkpoint(&crate::checkpoint::Checkpoint::load(&path).unwrap())
                .unwrap();
        assert_eq!(loaded.context_config, model.context_config);
        assert_eq!(loaded.fusion, model.fusion);
        assert_eq!(loaded.vocab_size, model.vocab_size);

        let sents = vec![seq(&[2, 3, 9])];
        let a = model.predict_dialogue(&sents, &[0]).unwrap();
        let b = loaded.predict_dialogue(&sents, &[0]).unwrap();
        assert_eq!(a.logits.values(), b.logits.values());
    }

    #[test]
    fn corrupted_input_dim_meta_is_a_mismatch_error() {
        let model = tiny_model(FusionMode::Seov);
        let mut ckpt = model.to_checkpoint(2);
        ckpt.set_meta("context_input_dim", 999);
        assert!(matches!(
            EmotionModel::from_checkpoint(&ckpt),
            Err(Error::CheckpointMismatch { .. })
        ));
    }
}

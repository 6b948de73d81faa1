//! Losses, optimizers, and the two-stage training schedule.
//!
//! Stage 1 trains the encoder and the emotion projection on single
//! utterances, so the projected probabilities actually mean something
//! before anything consumes them. Stage 2 trains the context model on
//! dialogue lists of fused vectors; the upstream groups are either frozen
//! (their vectors precomputed once, since they cannot change) or
//! co-trained on the same tape.
//!
//! Everything is deterministic under the config seed: initialization,
//! shuffling, and dropout all draw from seeded streams, and evaluation
//! reduces integer counts in input order.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DialogueCorpus;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamSet};
use crate::pipeline::{
    evaluate_corpus, evaluate_stage1, is_upstream, prepare_corpus, EmotionModel,
};
use crate::seov::emotion_logits;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Training hyperparameters. The seed fully determines initialization
/// and data order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Utterances per step in stage 1, dialogues per step in stage 2.
    pub batch_size: usize,
    pub freeze_upstream: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 30,
            stage2_epochs: 30,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            freeze_upstream: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config {
                msg: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config {
                msg: "batch_size must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// First/second-moment state per parameter (Adam) or nothing (SGD).
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Optimizer {
            kind: config.optimizer,
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update from named gradients. Every gradient must match
    /// an existing parameter's shape.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(String, Tensor)]) -> Result<()> {
        if grads.is_empty() {
            return Err(Error::MissingGradient);
        }
        self.step_count += 1;
        let t = self.step_count;
        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.values_mut().iter_mut().zip(grad.values()) {
                        *pv -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![0.0; grad.numel()], vec![0.0; grad.numel()]));
                    let bc1 = 1.0 - self.beta1.powi(t as i32);
                    let bc2 = 1.0 - self.beta2.powi(t as i32);
                    for ((pv, gv), (mv, vv)) in p
                        .values_mut()
                        .iter_mut()
                        .zip(grad.values())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Metrics for one epoch. Dev fields are absent when no dev split was
/// provided.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub train_weighted_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_weighted_f1: Option<f64>,
}

/// Per-stage training record. The wall clock is carried in memory and on
/// the console, never in the serialized report: report files must be
/// byte-identical across reruns with one seed.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub stage: u8,
    pub epochs: Vec<EpochStats>,
    pub wall_clock_secs: f64,
    pub checkpoint_path: Option<std::path::PathBuf>,
}

impl TrainReport {
    /// One JSON record per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch stats serialize"));
            out.push('\n');
        }
        out
    }

    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_accuracy)
    }

    pub fn final_dev_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.dev_accuracy)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// Aligned summary table, one row per epoch.
    pub fn render_summary(&self) -> String {
        let mut out = format!(
            "stage {}\n{:>6}{:>14}{:>12}{:>12}{:>12}{:>12}\n",
            self.stage, "epoch", "loss", "train-acc", "train-wF1", "dev-acc", "dev-wF1"
        );
        for e in &self.epochs {
            let fmt_opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:>12.4}"),
                None => format!("{:>12}", "-"),
            };
            out.push_str(&format!(
                "{:>6}{:>14.6}{:>12.4}{:>12.4}{}{}\n",
                e.epoch,
                e.mean_loss,
                e.train_accuracy,
                e.train_weighted_f1,
                fmt_opt(e.dev_accuracy),
                fmt_opt(e.dev_weighted_f1),
            ));
        }
        out
    }
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    // Distinct stream per stage, decorrelated from model init.
    ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage + 1)))
}

fn require_labeled(corpus: &DialogueCorpus) -> Result<()> {
    if corpus.n_utterances() == 0 || !corpus.is_fully_labeled() {
        return Err(Error::UnlabeledCorpus);
    }
    Ok(())
}

/// Stage 1: minimize cross-entropy of the pre-softmax projection logits
/// against utterance labels, over shuffled single utterances.
pub fn train_stage1(
    model: &mut EmotionModel,
    vocab: &Vocabulary,
    train: &DialogueCorpus,
    dev: Option<&DialogueCorpus>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    require_labeled(train)?;
    let started = Instant::now();

    let mut examples = Vec::new();
    for dialogue in prepare_corpus(model, vocab, train) {
        for (tokens, label) in dialogue.sentences.into_iter().zip(dialogue.labels) {
            examples.push((tokens, label.ok_or(Error::UnlabeledCorpus)?));
        }
    }

    let mut rng = stage_rng(config.seed, 1);
    let mut optimizer = Optimizer::new(config);
    let mut epochs = Vec::with_capacity(config.stage1_epochs);
    let dropout_on = model.encoder_config.dropout_rate > 0.0;

    for epoch in 0..config.stage1_epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;

        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let upstream = Binding::bind_where(&mut tape, &model.params, is_upstream, true);
            let proj_w = upstream.var("proj.w")?;
            let mut losses = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (tokens, label) = &examples[idx];
                let q = crate::encoder::encode_sentence(
                    &mut tape,
                    &upstream,
                    &model.encoder_config,
                    tokens,
                    dropout_on.then_some(&mut rng),
                )?;
                let logits = emotion_logits(&mut tape, q, proj_w)?;
                losses.push(tape.cross_entropy(logits, &[*label])?);
            }
            let mut batch_loss = losses[0];
            for &l in &losses[1..] {
                batch_loss = tape.add(batch_loss, l)?;
            }
            let batch_loss = tape.scale(batch_loss, 1.0 / losses.len() as f64)?;
            let loss_val = tape.value(batch_loss).values()[0];
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("stage 1 epoch {epoch}"),
                });
            }
            loss_total += loss_val * chunk.len() as f64;
            tape.backward(batch_loss)?;
            let grads = upstream.gradients(&tape)?;
            optimizer.step(&mut model.params, &grads)?;
        }

        let train_eval = evaluate_stage1(model, vocab, train)?;
        let dev_eval = match dev {
            Some(d) if d.n_utterances() > 0 => Some(evaluate_stage1(model, vocab, d)?),
            _ => None,
        };
        epochs.push(EpochStats {
            epoch,
            mean_loss: loss_total / examples.len() as f64,
            train_accuracy: train_eval.accuracy,
            train_weighted_f1: train_eval.weighted_f1,
            dev_accuracy: dev_eval.as_ref().map(|e| e.accuracy),
            dev_weighted_f1: dev_eval.as_ref().map(|e| e.weighted_f1),
        });
    }

    Ok(TrainReport {
        stage: 1,
        epochs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint_path: None,
    })
}

/// Stage 2: minimize cross-entropy of the context-model logits over all
/// utterances, shuffling at dialogue granularity. Upstream parameters
/// are frozen iff `config.freeze_upstream`; frozen upstream vectors are
/// precomputed once since they cannot change.
pub fn train_stage2(
    model: &mut EmotionModel,
    vocab: &Vocabulary,
    train: &DialogueCorpus,
    dev: Option<&DialogueCorpus>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    require_labeled(train)?;
    let started = Instant::now();

    let prepared = prepare_corpus(model, vocab, train);
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(prepared.len());
    for dialogue in &prepared {
        let ids: Option<Vec<usize>> = dialogue.labels.iter().copied().collect();
        labels.push(ids.ok_or(Error::UnlabeledCorpus)?);
    }

    // Frozen upstream cannot change during this stage, so its outputs are
    // computed exactly once, in eval mode.
    let frozen_inputs: Option<Vec<Vec<Tensor>>> = if config.freeze_upstream {
        Some(
            prepared
                .iter()
                .map(|d| {
                    Ok(model
                        .sentence_states(&d.sentences)?
                        .into_iter()
                        .map(|s| s.fused)
                        .collect())
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut rng = stage_rng(config.seed, 2);
    let mut optimizer = Optimizer::new(config);
    let mut epochs = Vec::with_capacity(config.stage2_epochs);
    let n_utterances: usize = prepared.iter().map(|d| d.sentences.len()).sum();
    let dropout_on = model.encoder_config.dropout_rate > 0.0;

    for epoch in 0..config.stage2_epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;

        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let context = Binding::bind_where(&mut tape, &model.params, |n| !is_upstream(n), true);
            let upstream = match frozen_inputs {
                Some(_) => None,
                None => Some(Binding::bind_where(
                    &mut tape,
                    &model.params,
                    is_upstream,
                    true,
                )),
            };

            let mut logit_blocks = Vec::with_capacity(chunk.len());
            let mut label_block = Vec::new();
            let mut batch_utts = 0;
            for &idx in chunk {
                let dialogue = &prepared[idx];
                let logits = match (&frozen_inputs, &upstream) {
                    (Some(inputs), _) => {
                        let vars: Vec<_> = inputs[idx]
                            .iter()
                            .map(|t| {
                                tape.constant(
                                    Tensor::new(vec![1, t.numel()], t.values().to_vec())
                                        .expect("row reshape"),
                                )
                            })
                            .collect();
                        crate::context::context_forward_vars(
                            &mut tape,
                            &context,
                            &model.context_config,
                            &vars,
                            &dialogue.speakers,
                        )?
                    }
                    (None, Some(up)) => model.dialogue_logits_vars(
                        &mut tape,
                        up,
                        &context,
                        &dialogue.sentences,
                        &dialogue.speakers,
                        dropout_on.then_some(&mut rng),
                    )?,
                    (None, None) => unreachable!(),
                };
                logit_blocks.push(logits);
                label_block.extend_from_slice(&labels[idx]);
                batch_utts += dialogue.sentences.len();
            }

            let all_logits = tape.concat_rows(&logit_blocks)?;
            let loss = tape.cross_entropy(all_logits, &label_block)?;
            let loss_val = tape.value(loss).values()[0];
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("stage 2 epoch {epoch}"),
                });
            }
            loss_total += loss_val * batch_utts as f64;
            tape.backward(loss)?;

            let mut grads = context.gradients(&tape)?;
            if let Some(up) = &upstream {
                grads.extend(up.gradients(&tape)?);
            }
            optimizer.step(&mut model.params, &grads)?;
        }

        let train_eval = evaluate_corpus(model, vocab, train)?;
        let dev_eval = match dev {
            Some(d) if d.n_utterances() > 0 => Some(evaluate_corpus(model, vocab, d)?),
            _ => None,
        };
        epochs.push(EpochStats {
            epoch,
            mean_loss: loss_total / n_utterances as f64,
            train_accuracy: train_eval.accuracy,
            train_weighted_f1: train_eval.weighted_f1,
            dev_accuracy: dev_eval.as_ref().map(|e| e.accuracy),
            dev_weighted_f1: dev_eval.as_ref().map(|e| e.weighted_f1),
        });
    }

    Ok(TrainReport {
        stage: 2,
        epochs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint_path: None,
    })
}

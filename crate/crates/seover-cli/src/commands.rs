//! The four subcommands: train, eval, predict, export-heatmap.
//!
//! Output files are written atomically (temp file, then rename), and
//! everything a command writes is a deterministic function of its inputs
//! and the seed — wall-clock timings go to the console only.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use seover_core::checkpoint::Checkpoint;
use seover_core::corpus::{load_corpus, split_corpus, DialogueCorpus, Split, Utterance};
use seover_core::error::{Error, Result};
use seover_core::metrics::heatmap_normalize;
use seover_core::pipeline::{evaluate_corpus, predict_corpus, sentence_vectors, EmotionModel};
use seover_core::text::{build_vocabulary, Vocabulary};
use seover_core::train::{train_stage1, train_stage2, TrainReport};

use crate::config::RunConfig;

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corpus_path(config: &RunConfig) -> Result<PathBuf> {
    config.corpus.clone().ok_or_else(|| Error::Config {
        msg: "no corpus path: set [paths].corpus in the config".into(),
    })
}

fn load_split_corpus(
    config: &RunConfig,
) -> Result<(DialogueCorpus, DialogueCorpus, DialogueCorpus)> {
    let corpus = load_corpus(&corpus_path(config)?, &config.label_set)?;
    split_corpus(&corpus, config.split_ratios, config.seed)
}

/// Train stage 1 then stage 2; write vocab, per-stage checkpoints and
/// reports, and a combined summary.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let (train, dev, _test) = load_split_corpus(config)?;
    if train.n_utterances() == 0 {
        return Err(Error::EmptyCorpus);
    }

    fs::create_dir_all(&config.out_dir)?;
    let vocab = build_vocabulary(&train, config.vocab_min_frequency, config.vocab_max_size)?;
    vocab.save(&config.vocab_path)?;

    let mut model = EmotionModel::new(
        config.label_set.clone(),
        config.encoder.clone(),
        config.context_variant,
        config.context_hidden,
        config.fusion,
        vocab.len(),
        config.seed,
    )?;

    let dev_ref = (dev.n_utterances() > 0).then_some(&dev);
    let report1 = train_stage1(&mut model, &vocab, &train, dev_ref, &config.train)?;
    let stage1_path = config.out_dir.join("stage1.ckpt");
    model.to_checkpoint(1).save(&stage1_path)?;
    atomic_write(
        &config.out_dir.join("stage1_report.jsonl"),
        &report1.to_jsonl(),
    )?;

    let report2 = train_stage2(&mut model, &vocab, &train, dev_ref, &config.train)?;
    model.to_checkpoint(2).save(&config.checkpoint_path)?;
    atomic_write(
        &config.out_dir.join("stage2_report.jsonl"),
        &report2.to_jsonl(),
    )?;

    let summary = format!("{}\n{}", report1.render_summary(), report2.render_summary());
    atomic_write(&config.out_dir.join("summary.txt"), &summary)?;

    print_stage_tail("stage 1", &report1);
    print_stage_tail("stage 2", &report2);
    println!(
        "checkpoints: {} and {}",
        stage1_path.display(),
        config.checkpoint_path.display()
    );
    println!("wall clock: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn print_stage_tail(name: &str, report: &TrainReport) {
    if let Some(last) = report.epochs.last() {
        let dev = last
            .dev_accuracy
            .map(|a| format!(" dev-acc {a:.4}"))
            .unwrap_or_default();
        println!(
            "{name}: {} epochs, final loss {:.6}, train-acc {:.4}{dev} ({:.1}s)",
            report.epochs.len(),
            last.mean_loss,
            last.train_accuracy,
            report.wall_clock_secs
        );
    } else {
        println!("{name}: 0 epochs");
    }
}

/// Load checkpoint + vocabulary and cross-check them against the config.
fn load_model(config: &RunConfig) -> Result<(EmotionModel, Vocabulary)> {
    let ckpt = Checkpoint::load(&config.checkpoint_path)?;
    let model = EmotionModel::from_checkpoint(&ckpt)?;
    if config.label_set_explicit && model.label_set.name() != config.label_set.name() {
        return Err(Error::CheckpointMismatch {
            msg: format!(
                "label set {:?} in the config vs {:?} in the checkpoint",
                config.label_set.name(),
                model.label_set.name()
            ),
        });
    }
    if config.fusion_explicit && model.fusion != config.fusion {
        return Err(Error::CheckpointMismatch {
            msg: format!(
                "fusion mode {:?} in the config vs {:?} in the checkpoint",
                config.fusion.as_str(),
                model.fusion.as_str()
            ),
        });
    }
    let vocab = Vocabulary::load(&config.vocab_path)?;
    if vocab.len() != model.vocab_size {
        return Err(Error::CheckpointMismatch {
            msg: format!(
                "vocabulary size {} vs {} expected by the checkpoint",
                vocab.len(),
                model.vocab_size
            ),
        });
    }
    Ok((model, vocab))
}

/// Evaluate a trained checkpoint on one split and render the reports.
pub fn cmd_eval(config: &RunConfig, split: Split) -> Result<()> {
    let (model, vocab) = load_model(config)?;
    let corpus = load_corpus(&corpus_path(config)?, &model.label_set)?;
    let (train, dev, test) = split_corpus(&corpus, config.split_ratios, config.seed)?;
    let part = match split {
        Split::Train => train,
        Split::Dev => dev,
        Split::Test => test,
    };
    if part.n_utterances() == 0 {
        return Err(Error::EmptyInput {
            msg: format!("split {:?} holds no utterances", split.as_str()),
        });
    }
    let report = evaluate_corpus(&model, &vocab, &part)?;

    let table = report.render_table();
    let matrix = report.render_confusion();
    print!("{table}\n{matrix}");
    fs::create_dir_all(&config.out_dir)?;
    let name = split.as_str();
    atomic_write(
        &config.out_dir.join(format!("eval_{name}.txt")),
        &format!("{table}\n{matrix}"),
    )?;
    atomic_write(
        &config.out_dir.join(format!("eval_{name}.tsv")),
        &report.render_tsv(),
    )?;
    Ok(())
}

/// One raw input line of a prediction request: the parsed record plus the
/// original JSON object so unknown fields survive the round trip.
struct PredictLine {
    record: Utterance,
    raw: serde_json::Map<String, serde_json::Value>,
}

fn read_jsonl_lines(path: &Path) -> Result<Vec<PredictLine>> {
    let file = fs::File::open(path).map_err(|e| Error::CorpusParse {
        line: 0,
        msg: format!("cannot open {}: {e}", path.display()),
    })?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
                line: line_no,
                msg: e.to_string(),
            })?;
        let record: Utterance = serde_json::from_value(serde_json::Value::Object(raw.clone()))
            .map_err(|e| Error::CorpusParse {
                line: line_no,
                msg: e.to_string(),
            })?;
        lines.push(PredictLine { record, raw });
    }
    Ok(lines)
}

/// Predict labels and emotion vectors for a JSONL input, preserving line
/// order and any extra fields.
pub fn cmd_predict(config: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let (model, vocab) = load_model(config)?;
    let lines = read_jsonl_lines(input)?;

    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = output.with_extension("tmp");
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&tmp)?);
        if !lines.is_empty() {
            let corpus = DialogueCorpus::from_utterances(
                lines.iter().map(|l| l.record.clone()).collect(),
                model.label_set.clone(),
            )?;
            let predictions = predict_corpus(&model, &vocab, &corpus)?;
            let by_key: HashMap<(String, usize), _> = predictions
                .into_iter()
                .map(|p| ((p.dialogue_id.clone(), p.turn_index), p))
                .collect();
            for line in &lines {
                let key = (line.record.dialogue_id.clone(), line.record.turn_index);
                let pred = by_key.get(&key).expect("every input turn was predicted");
                let mut record = line.raw.clone();
                record.insert(
                    "predicted_label".into(),
                    serde_json::Value::String(
                        model
                            .label_set
                            .label_of(pred.label_id)
                            .expect("label id in range")
                            .to_string(),
                    ),
                );
                record.insert(
                    "emotion_vector".into(),
                    serde_json::json!(pred.emotion_probs),
                );
                serde_json::to_writer(&mut out, &serde_json::Value::Object(record)).map_err(
                    |e| Error::CorpusParse {
                        line: 0,
                        msg: format!("serialize: {e}"),
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
    }
    fs::rename(&tmp, output)?;
    println!("wrote {}", output.display());
    Ok(())
}

/// Encode utterances and export the min-max normalized sentence-vector
/// matrix, one row per input line.
pub fn cmd_export_heatmap(config: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let (model, vocab) = load_model(config)?;
    let lines = read_jsonl_lines(input)?;
    if lines.is_empty() {
        return Err(Error::EmptyInput {
            msg: format!("no utterances in {}", input.display()),
        });
    }
    let corpus = DialogueCorpus::from_utterances(
        lines.iter().map(|l| l.record.clone()).collect(),
        model.label_set.clone(),
    )?;
    let vectors = sentence_vectors(&model, &vocab, &corpus)?;

    // The vectors come back in corpus order (grouped by dialogue);
    // restore original line order through (dialogue, turn) keys.
    let mut by_key = HashMap::new();
    let mut flat = vectors.into_iter();
    for (id, turns) in corpus.dialogues() {
        for turn in turns {
            by_key.insert(
                (id.clone(), turn.turn_index),
                flat.next().expect("one vector per turn"),
            );
        }
    }
    let ordered: Vec<seover_core::tensor::Tensor> = lines
        .iter()
        .map(|l| by_key[&(l.record.dialogue_id.clone(), l.record.turn_index)].clone())
        .collect();

    let rows = heatmap_normalize(&ordered)?;
    let mut text = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&cells.join("\t"));
        text.push('\n');
    }
    atomic_write(output, &text)?;
    println!("wrote {}", output.display());
    Ok(())
}

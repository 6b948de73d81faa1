//! Dialogue corpus data model and JSONL ingestion.
//!
//! The interchange format is one utterance record per line:
//!
//! ```text
//! {"dialogue_id": str, "turn_index": int, "speaker": str, "text": str,
//!  "label": str|null, "split": "train"|"dev"|"test"|absent}
//! ```
//!
//! Dialogues are grouped by id and ordered by turn index; text is ingested
//! verbatim (normalization is the tokenizer's job). The licensed dialogue
//! datasets are not bundled; their label taxonomies are, so converted
//! corpora load directly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered emotion label inventory. Label ids are positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    name: String,
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if labels.len() < 2 {
            return Err(Error::Config {
                msg: format!("label set {name:?} needs at least 2 labels"),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::Config {
                    msg: format!("label set {name:?} repeats label {l:?}"),
                });
            }
        }
        Ok(LabelSet { name, labels })
    }

    /// Six-class inventory used by the dyadic acted-interaction corpus.
    pub fn iemocap() -> Self {
        LabelSet {
            name: "iemocap".into(),
            labels: ["happy", "sad", "neutral", "angry", "excited", "frustrated"]
                .map(String::from)
                .to_vec(),
        }
    }

    /// Seven-class inventory used by the multiparty TV-series corpus.
    pub fn meld() -> Self {
        LabelSet {
            name: "meld".into(),
            labels: [
                "neutral", "surprise", "fear", "sadness", "joy", "disgust", "angry",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "iemocap" => Some(Self::iemocap()),
            "meld" => Some(Self::meld()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of emotion classes.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label_of(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }
}

/// Split assignment carried by a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

/// One speaker turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
}

/// A labeled multi-turn, multi-speaker corpus.
#[derive(Debug, Clone)]
pub struct DialogueCorpus {
    dialogues: IndexMap<String, Vec<Utterance>>,
    label_set: LabelSet,
}

impl DialogueCorpus {
    /// Group utterances into dialogues, sort by turn index, and validate
    /// contiguity and label membership.
    pub fn from_utterances(utterances: Vec<Utterance>, label_set: LabelSet) -> Result<Self> {
        let mut dialogues: IndexMap<String, Vec<Utterance>> = IndexMap::new();
        for utt in utterances {
            if let Some(label) = &utt.label {
                if label_set.id_of(label).is_none() {
                    return Err(Error::UnknownLabel {
                        label: label.clone(),
                        line: 0,
                        set: label_set.name.clone(),
                    });
                }
            }
            dialogues
                .entry(utt.dialogue_id.clone())
                .or_default()
                .push(utt);
        }
        let mut corpus = DialogueCorpus {
            dialogues,
            label_set,
        };
        corpus.sort_and_validate()?;
        Ok(corpus)
    }

    fn sort_and_validate(&mut self) -> Result<()> {
        for (id, turns) in self.dialogues.iter_mut() {
            turns.sort_by_key(|u| u.turn_index);
            for (expected, turn) in turns.iter().enumerate() {
                if turn.turn_index != expected {
                    let problem = if turns
                        .iter()
                        .filter(|t| t.turn_index == turn.turn_index)
                        .count()
                        > 1
                    {
                        "duplicate"
                    } else {
                        "gap at"
                    };
                    return Err(Error::BadDialogue {
                        dialogue_id: id.clone(),
                        msg: format!(
                            "{problem} turn index {} (expected {expected})",
                            turn.turn_index
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    /// Number of dialogues.
    pub fn n_dialogues(&self) -> usize {
        self.dialogues.len()
    }

    pub fn n_utterances(&self) -> usize {
        self.dialogues.values().map(Vec::len).sum()
    }

    pub fn dialogues(&self) -> impl Iterator<Item = (&String, &[Utterance])> {
        self.dialogues
            .iter()
            .map(|(id, turns)| (id, turns.as_slice()))
    }

    pub fn dialogue(&self, id: &str) -> Option<&[Utterance]> {
        self.dialogues.get(id).map(Vec::as_slice)
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.dialogues.values().flatten()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.utterances().all(|u| u.label.is_some())
    }

    /// Counts per label id, in label-set order.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.label_set.len()];
        for u in self.utterances() {
            if let Some(label) = &u.label {
                if let Some(id) = self.label_set.id_of(label) {
                    counts[id] += 1;
                }
            }
        }
        counts
    }

    fn with_dialogues(&self, ids: &[String]) -> DialogueCorpus {
        let mut dialogues = IndexMap::new();
        for id in ids {
            if let Some(turns) = self.dialogues.get(id) {
                dialogues.insert(id.clone(), turns.clone());
            }
        }
        DialogueCorpus {
            dialogues,
            label_set: self.label_set.clone(),
        }
    }
}

/// Load a JSONL corpus, validating labels against `label_set`.
pub fn load_corpus(path: &Path, label_set: &LabelSet) -> Result<DialogueCorpus> {
    let file = File::open(path).map_err(|e| Error::CorpusParse {
        line: 0,
        msg: format!("cannot open {}: {e}", path.display()),
    })?;
    load_corpus_from_reader(BufReader::new(file), label_set)
}

/// Reader-based variant of [`load_corpus`], mainly for tests.
pub fn load_corpus_from_reader<R: Read>(reader: R, label_set: &LabelSet) -> Result<DialogueCorpus> {
    let mut utterances = Vec::new();
    for (line_no, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(label) = &utt.label {
            if label_set.id_of(label).is_none() {
                return Err(Error::UnknownLabel {
                    label: label.clone(),
                    line: line_no,
                    set: label_set.name().to_string(),
                });
            }
        }
        utterances.push(utt);
    }
    DialogueCorpus::from_utterances(utterances, label_set.clone())
}

/// Write a corpus in the canonical JSONL form: dialogues in stored order,
/// turns ascending, one record per line.
pub fn write_corpus(corpus: &DialogueCorpus, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (_, turns) in corpus.dialogues() {
        for utt in turns {
            serde_json::to_writer(&mut out, utt).map_err(|e| Error::CorpusParse {
                line: 0,
                msg: format!("serialize: {e}"),
            })?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Deterministic dialogue-granularity split.
///
/// Dialogues whose records all carry the same explicit `split` tag keep
/// that assignment; the rest are shuffled under `seed` and partitioned by
/// `ratios` (train, dev, test).
pub fn split_corpus(
    corpus: &DialogueCorpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(DialogueCorpus, DialogueCorpus, DialogueCorpus)> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::BadSplitRatios { ratios });
    }

    let mut tagged: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut untagged: Vec<String> = Vec::new();
    for (id, turns) in corpus.dialogues() {
        let first = turns[0].split;
        if turns.iter().any(|t| t.split != first) {
            return Err(Error::BadDialogue {
                dialogue_id: id.clone(),
                msg: "mixed split tags within one dialogue".into(),
            });
        }
        match first {
            Some(Split::Train) => tagged[0].push(id.clone()),
            Some(Split::Dev) => tagged[1].push(id.clone()),
            Some(Split::Test) => tagged[2].push(id.clone()),
            None => untagged.push(id.clone()),
        }
    }

    if !untagged.is_empty() {
        let n = untagged.len();
        let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
        if n < nonzero {
            return Err(Error::TooFewDialogues {
                n_dialogues: n,
                n_parts: nonzero,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        untagged.shuffle(&mut rng);

        // Largest-remainder allocation, then guarantee every nonzero part
        // at least one dialogue by stealing from the biggest part.
        let mut counts = [0usize; 3];
        let mut assigned = 0;
        for i in 0..3 {
            counts[i] = (ratios[i] * n as f64).floor() as usize;
            assigned += counts[i];
        }
        let mut rem: Vec<usize> = (0..3).collect();
        rem.sort_by(|&a, &b| {
            let fa = ratios[a] * n as f64 - counts[a] as f64;
            let fb = ratios[b] * n as f64 - counts[b] as f64;
            fb.partial_cmp(&fa).unwrap()
        });
        for &i in rem.iter().cycle().take(n - assigned) {
            counts[i] += 1;
        }
        for i in 0..3 {
            if ratios[i] > 0.0 && counts[i] == 0 {
                let biggest = (0..3).max_by_key(|&j| counts[j]).unwrap();
                counts[biggest] -= 1;
                counts[i] += 1;
            }
        }

        let mut cursor = untagged.into_iter();
        for (i, bucket) in tagged.iter_mut().enumerate() {
            bucket.extend(cursor.by_ref().take(counts[i]));
        }
    }

    Ok((
        corpus.with_dialogues(&tagged[0]),
        corpus.with_dialogues(&tagged[1]),
        corpus.with_dialogues(&tagged[2]),
    ))
}

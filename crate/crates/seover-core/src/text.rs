//! Deterministic tokenizer and vocabulary.
//!
//! Tokenization is lowercase whitespace splitting with the punctuation
//! marks `.,!?';:` detached as their own tokens. Subword schemes are out
//! of scope; the interesting modeling happens downstream of token ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::corpus::DialogueCorpus;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
const RESERVED: usize = 3;

const DETACH: &[char] = &['.', ',', '!', '?', '\'', ';', ':'];

/// Token → id bijection with reserved PAD/UNK/CLS ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
    min_frequency: usize,
    max_size: usize,
}

impl Vocabulary {
    /// Total size including the 3 reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids always exist
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Content token for an id, if the id is not reserved.
    pub fn token_of(&self, id: u32) -> Option<&str> {
        (id as usize)
            .checked_sub(RESERVED)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Content tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number (0-based) is `id - 3`, the
    /// reserved ids being implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for token in &self.tokens {
            writeln!(out, "{token}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_from_reader(File::open(path)?)
    }

    pub fn load_from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in BufReader::new(reader).lines() {
            tokens.push(line?);
        }
        Ok(Self::from_tokens(tokens, 1, usize::MAX))
    }

    fn from_tokens(tokens: Vec<String>, min_frequency: usize, max_size: usize) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), (i + RESERVED) as u32))
            .collect();
        Vocabulary {
            token_to_id,
            tokens,
            min_frequency,
            max_size,
        }
    }
}

/// A tokenized utterance: CLS-prefixed ids plus the pre-padding length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
    pub source_text: String,
}

impl TokenSequence {
    /// True (unpadded) token count, robust against ids appended past
    /// `length`.
    pub fn true_len(&self) -> usize {
        self.length.min(self.ids.len())
    }
}

/// Split raw text into surface tokens: lowercase, whitespace-separated,
/// with detachable punctuation split out.
pub fn surface_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if DETACH.contains(&ch) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Count surface tokens over every utterance text in the corpus.
pub fn token_counts(corpus: &DialogueCorpus) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for utt in corpus.utterances() {
        for tok in surface_tokens(&utt.text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

/// Build a vocabulary: tokens with count >= `min_frequency` kept, most
/// frequent first, ties broken lexicographically, truncated to
/// `max_size` total ids (reserved ids included).
pub fn build_vocabulary(
    corpus: &DialogueCorpus,
    min_frequency: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if corpus.n_utterances() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let counts = token_counts(corpus);
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_frequency)
        .collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    let keep = max_size.saturating_sub(RESERVED);
    ranked.truncate(keep);
    let tokens: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    Ok(Vocabulary::from_tokens(tokens, min_frequency, max_size))
}

static TRUNCATION_LOGGED: AtomicBool = AtomicBool::new(false);

/// Map text to a CLS-prefixed id sequence, truncated to `max_len` ids.
/// Unknown tokens map to UNK. Truncation is silent except for one log
/// line per process.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let mut ids = vec![CLS_ID];
    for tok in surface_tokens(text) {
        ids.push(vocab.id_of(&tok).unwrap_or(UNK_ID));
    }
    if ids.len() > max_len && !TRUNCATION_LOGGED.swap(true, Ordering::Relaxed) {
        eprintln!("note: truncating utterances longer than {max_len} tokens (logged once)");
    }
    ids.truncate(max_len.max(1));
    TokenSequence {
        length: ids.len(),
        ids,
        source_text: text.to_string(),
    }
}

//! Deterministic synthetic corpora.
//!
//! The licensed dialogue datasets cannot ship with the repo, so two
//! seeded generators provide runnable stand-ins:
//!
//! * a keyword corpus where every utterance contains one signature word
//!   of its own label — linearly separable, so utterance-level training
//!   alone can solve it;
//! * a context corpus where odd turns react to the keyword of the
//!   previous turn — the utterance itself carries no information about
//!   its own label, so only a dialogue-context model can solve it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DialogueCorpus, LabelSet, Split, Utterance};

/// Signature words per class, in the seven-class label order.
const KEYWORDS: [[&str; 3]; 7] = [
    ["okay", "fine", "whatever"],            // neutral
    ["wow", "unbelievable", "whoa"],         // surprise
    ["terrified", "scared", "afraid"],       // fear
    ["miserable", "heartbroken", "weepy"],   // sadness
    ["wonderful", "fantastic", "delighted"], // joy
    ["gross", "disgusting", "yuck"],         // disgust
    ["furious", "outraged", "livid"],        // angry
];

const FILLER: [&str; 10] = [
    "well", "i", "mean", "you", "know", "so", "um", "like", "just", "really",
];

fn keyword_for(rng: &mut ChaCha8Rng, class: usize) -> &'static str {
    KEYWORDS[class][rng.gen_range(0..KEYWORDS[class].len())]
}

fn utterance_text(rng: &mut ChaCha8Rng, keyword: &str) -> String {
    let n_filler = rng.gen_range(2..5);
    let mut words: Vec<&str> = (0..n_filler)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())])
        .collect();
    words.push(keyword);
    words.shuffle(rng);
    let mut text = words.join(" ");
    if rng.gen_bool(0.5) {
        text.push(if rng.gen_bool(0.5) { '.' } else { '!' });
    }
    text
}

fn split_for(dialogue: usize, n_dialogues: usize) -> Split {
    // Last two tenths go to dev and test, the rest to train.
    let tenth = (n_dialogues / 8).max(1);
    if dialogue >= n_dialogues - tenth {
        Split::Test
    } else if dialogue >= n_dialogues - 2 * tenth {
        Split::Dev
    } else {
        Split::Train
    }
}

/// 200 utterances in 20 two-speaker dialogues; every turn is labeled by
/// the signature keyword it contains. Class assignment cycles so counts
/// stay balanced.
pub fn keyword_corpus(seed: u64) -> DialogueCorpus {
    let label_set = LabelSet::meld();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_dialogues, turns_per) = (20, 10);
    let mut utterances = Vec::with_capacity(n_dialogues * turns_per);
    for d in 0..n_dialogues {
        let split = split_for(d, n_dialogues);
        for t in 0..turns_per {
            let class = (d * turns_per + t) % label_set.len();
            let keyword = keyword_for(&mut rng, class);
            let text = utterance_text(&mut rng, keyword);
            utterances.push(Utterance {
                dialogue_id: format!("kw{d:02}"),
                turn_index: t,
                speaker: if t % 2 == 0 { "A" } else { "B" }.into(),
                text,
                label: Some(label_set.labels()[class].clone()),
                split: Some(split),
            });
        }
    }
    DialogueCorpus::from_utterances(utterances, label_set).expect("generator invariants")
}

/// 40 eight-turn dialogues where even ("expressive") turns are labeled by
/// their own keyword and odd ("reactive") turns by the previous turn's
/// keyword. Reactive turns open with the marker word "oh", so the rule is
/// observable from text; which keyword they react to is not — a
/// per-utterance classifier tops out near the expressive half, and the
/// reactive half requires dialogue context.
pub fn context_corpus(seed: u64) -> DialogueCorpus {
    let label_set = LabelSet::meld();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_dialogues, turns_per) = (40, 8);
    let mut utterances = Vec::with_capacity(n_dialogues * turns_per);
    for d in 0..n_dialogues {
        let split = split_for(d, n_dialogues);
        let mut prev_class = 0usize; // neutral fallback, never used at t=0
        for t in 0..turns_per {
            let own_class = rng.gen_range(0..label_set.len());
            let label_class = if t % 2 == 0 { own_class } else { prev_class };
            let keyword = keyword_for(&mut rng, own_class);
            let mut text = utterance_text(&mut rng, keyword);
            if t % 2 == 1 {
                text = format!("oh {text}");
            }
            utterances.push(Utterance {
                dialogue_id: format!("cx{d:02}"),
                turn_index: t,
                speaker: if t % 2 == 0 { "A" } else { "B" }.into(),
                text,
                label: Some(label_set.labels()[label_class].clone()),
                split: Some(split),
            });
            prev_class = own_class;
        }
    }
    DialogueCorpus::from_utterances(utterances, label_set).expect("generator invariants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_corpus;

    #[test]
    fn keyword_corpus_shape_and_determinism() {
        let a = keyword_corpus(7);
        assert_eq!(a.n_dialogues(), 20);
        assert_eq!(a.n_utterances(), 200);
        let b = keyword_corpus(7);
        let texts_a: Vec<&str> = a.utterances().map(|u| u.text.as_str()).collect();
        let texts_b: Vec<&str> = b.utterances().map(|u| u.text.as_str()).collect();
        assert_eq!(texts_a, texts_b);
        assert_ne!(
            texts_a,
            keyword_corpus(8)
                .utterances()
                .map(|u| u.text.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn keyword_labels_match_the_contained_keyword() {
        let corpus = keyword_corpus(7);
        let set = corpus.label_set().clone();
        for u in corpus.utterances() {
            let label_id = set.id_of(u.label.as_deref().unwrap()).unwrap();
            let found = crate::text::surface_tokens(&u.text)
                .iter()
                .any(|tok| KEYWORDS[label_id].contains(&tok.as_str()));
            assert!(found, "utterance {:?} lacks a keyword of its label", u.text);
        }
    }

    #[test]
    fn keyword_corpus_is_roughly_class_balanced() {
        let corpus = keyword_corpus(7);
        for count in corpus.label_counts() {
            assert!((28..=30).contains(&count), "unbalanced class: {count}");
        }
    }

    #[test]
    fn context_corpus_reactive_turns_copy_the_previous_keyword() {
        let corpus = context_corpus(7);
        assert_eq!(corpus.n_dialogues(), 40);
        assert_eq!(corpus.n_utterances(), 320);
        let set = corpus.label_set().clone();
        let class_of_text = |text: &str| -> usize {
            for tok in crate::text::surface_tokens(text) {
                for (c, words) in KEYWORDS.iter().enumerate() {
                    if words.contains(&tok.as_str()) {
                        return c;
                    }
                }
            }
            panic!("no keyword in {text:?}");
        };
        for (_, turns) in corpus.dialogues() {
            for (t, u) in turns.iter().enumerate() {
                let label_id = set.id_of(u.label.as_deref().unwrap()).unwrap();
                if t % 2 == 0 {
                    assert_eq!(label_id, class_of_text(&u.text));
                } else {
                    assert_eq!(label_id, class_of_text(&turns[t - 1].text));
                }
            }
        }
    }

    #[test]
    fn split_tags_partition_both_corpora() {
        for corpus in [keyword_corpus(7), context_corpus(7)] {
            let n = corpus.n_dialogues();
            let (train, dev, test) = split_corpus(&corpus, [1.0, 0.0, 0.0], 0).unwrap();
            assert_eq!(
                train.n_dialogues() + dev.n_dialogues() + test.n_dialogues(),
                n
            );
            assert!(dev.n_dialogues() > 0 && test.n_dialogues() > 0);
            assert!(train.n_dialogues() >= 7 * n / 10);
        }
    }
}

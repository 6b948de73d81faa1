//! Property tests for the invariants that hold for all inputs, not just
//! the worked examples.

use proptest::prelude::*;

use seover_core::corpus::{
    load_corpus_from_reader, split_corpus, DialogueCorpus, LabelSet, Utterance,
};
use seover_core::encoder::SentenceVector;
use seover_core::metrics::{confusion, f1_scores, heatmap_normalize};
use seover_core::seov::{fuse, project_emotion, EmotionProjection, EmotionVector};
use seover_core::tape::Tape;
use seover_core::tensor::Tensor;
use seover_core::text::{build_vocabulary, tokenize, CLS_ID};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(vals in finite_vec(9), shift in -30.0..30.0f64) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vals.clone()));
        let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
        let b = tape.constant(Tensor::vector(shifted));
        let sa = tape.softmax(a, 0).unwrap();
        let sb = tape.softmax(b, 0).unwrap();
        let sum: f64 = tape.value(sa).values().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(tape.value(sa).values().iter().all(|p| *p >= 0.0));
        prop_assert!(tape.value(sa).max_abs_diff(tape.value(sb)).unwrap() <= 1e-9);
    }

    #[test]
    fn concat_then_split_is_the_identity(left in finite_vec(5), right in finite_vec(3)) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(left.clone()));
        let b = tape.constant(Tensor::vector(right.clone()));
        let joined = tape.concat(a, b).unwrap();
        let la = tape.slice(joined, 0, 5).unwrap();
        let lb = tape.slice(joined, 5, 3).unwrap();
        prop_assert_eq!(tape.value(la).values(), left.as_slice());
        prop_assert_eq!(tape.value(lb).values(), right.as_slice());
    }

    #[test]
    fn matmul_with_identity_is_exact(vals in finite_vec(12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], vals.clone()).unwrap());
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let i = tape.constant(Tensor::new(vec![4, 4], eye).unwrap());
        let y = tape.matmul(x, i).unwrap();
        prop_assert_eq!(tape.value(y).values(), vals.as_slice());
    }

    #[test]
    fn emotion_projection_stays_on_the_simplex(
        q in finite_vec(6),
        w in proptest::collection::vec(-3.0..3.0f64, 6 * 7),
    ) {
        let proj = EmotionProjection::new(Tensor::new(vec![6, 7], w).unwrap()).unwrap();
        let qs = project_emotion(&SentenceVector(Tensor::vector(q)), &proj).unwrap();
        let sum: f64 = qs.probabilities().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(qs.probabilities().iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn fusion_round_trip_is_lossless(q in finite_vec(8), idx in 0usize..7) {
        // A one-hot emotion vector is a valid simplex point.
        let mut probs = vec![0.0; 7];
        probs[idx] = 1.0;
        let qv = SentenceVector(Tensor::vector(q.clone()));
        let ev = EmotionVector::new(Tensor::vector(probs.clone())).unwrap();
        let e = fuse(&qv, &ev);
        prop_assert_eq!(e.sentence_part(), q.as_slice());
        prop_assert_eq!(e.emotion_part(), probs.as_slice());
        prop_assert_eq!(e.dim(), 15);
    }

    #[test]
    fn tokenize_is_deterministic_and_ids_stay_in_range(text in ".{0,80}") {
        let corpus = DialogueCorpus::from_utterances(
            vec![Utterance {
                dialogue_id: "d".into(),
                turn_index: 0,
                speaker: "A".into(),
                text: "the quick brown fox . , ! ?".into(),
                label: None,
                split: None,
            }],
            LabelSet::meld(),
        ).unwrap();
        let vocab = build_vocabulary(&corpus, 1, 100).unwrap();
        let a = tokenize(&text, &vocab, 32);
        let b = tokenize(&text, &vocab, 32);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.ids[0], CLS_ID);
        prop_assert!(a.ids.len() <= 32);
        prop_assert!(a.ids.iter().all(|id| (*id as usize) < vocab.len()));
    }

    #[test]
    fn in_vocab_round_trip_preserves_the_id_sequence(words in proptest::collection::vec(0usize..8, 1..12)) {
        let lexicon = ["the", "quick", "brown", "fox", ".", ",", "!", "?"];
        let corpus = DialogueCorpus::from_utterances(
            vec![Utterance {
                dialogue_id: "d".into(),
                turn_index: 0,
                speaker: "A".into(),
                text: lexicon.join(" "),
                label: None,
                split: None,
            }],
            LabelSet::meld(),
        ).unwrap();
        let vocab = build_vocabulary(&corpus, 1, 100).unwrap();
        let text: Vec<&str> = words.iter().map(|w| lexicon[*w]).collect();
        let first = tokenize(&text.join(" "), &vocab, 64);
        let joined: Vec<&str> = first.ids[1..]
            .iter()
            .map(|id| vocab.token_of(*id).unwrap())
            .collect();
        let second = tokenize(&joined.join(" "), &vocab, 64);
        prop_assert_eq!(first.ids, second.ids);
    }

    #[test]
    fn weighted_f1_is_invariant_under_label_permutation(
        pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..80),
        swap in 0usize..5,
    ) {
        let set = LabelSet::iemocap();
        let golds: Vec<usize> = pairs.iter().map(|(g, _)| *g).collect();
        let preds: Vec<usize> = pairs.iter().map(|(_, p)| *p).collect();
        let base = f1_scores(&confusion(&golds, &preds, &set).unwrap()).unwrap();

        // Transpose two label ids consistently everywhere.
        let map = |x: usize| if x == swap { swap + 1 } else if x == swap + 1 { swap } else { x };
        let mut labels = set.labels().to_vec();
        labels.swap(swap, swap + 1);
        let permuted_set = LabelSet::new("permuted", labels).unwrap();
        let pg: Vec<usize> = golds.iter().map(|g| map(*g)).collect();
        let pp: Vec<usize> = preds.iter().map(|p| map(*p)).collect();
        let permuted = f1_scores(&confusion(&pg, &pp, &permuted_set).unwrap()).unwrap();

        prop_assert!((base.weighted_f1 - permuted.weighted_f1).abs() < 1e-12);
        prop_assert!((base.accuracy - permuted.accuracy).abs() < 1e-12);
    }

    #[test]
    fn heatmap_outputs_stay_in_the_unit_interval(
        rows in proptest::collection::vec(finite_vec(5), 1..6),
    ) {
        let tensors: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r.clone())).collect();
        let normalized = heatmap_normalize(&tensors).unwrap();
        for row in &normalized {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn corpus_splits_partition_the_dialogues(n in 3usize..12, seed in 0u64..100) {
        let utterances: Vec<Utterance> = (0..n)
            .map(|d| Utterance {
                dialogue_id: format!("d{d}"),
                turn_index: 0,
                speaker: "A".into(),
                text: "hello".into(),
                label: Some("neutral".into()),
                split: None,
            })
            .collect();
        let corpus = DialogueCorpus::from_utterances(utterances, LabelSet::meld()).unwrap();
        let (train, dev, test) = split_corpus(&corpus, [0.6, 0.2, 0.2], seed).unwrap();
        let mut all: Vec<String> = Vec::new();
        for part in [&train, &dev, &test] {
            for (id, _) in part.dialogues() {
                all.push(id.clone());
            }
        }
        all.sort();
        let mut expect: Vec<String> = (0..n).map(|d| format!("d{d}")).collect();
        expect.sort();
        prop_assert_eq!(all, expect); // no dialogue lost or duplicated
        prop_assert!(train.n_dialogues() >= 1 && dev.n_dialogues() >= 1 && test.n_dialogues() >= 1);
    }
}

#[test]
fn corpus_write_then_load_is_line_identical() {
    let corpus = seover_core::synth::keyword_corpus(99);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    seover_core::corpus::write_corpus(&corpus, &path).unwrap();
    let first = std::fs::read_to_string(&path).unwrap();

    let reloaded = seover_core::corpus::load_corpus(&path, corpus.label_set()).unwrap();
    let path2 = dir.path().join("corpus2.jsonl");
    seover_core::corpus::write_corpus(&reloaded, &path2).unwrap();
    let second = std::fs::read_to_string(&path2).unwrap();
    assert_eq!(first, second);

    // Line-order normalization: shuffling input lines leaves the loaded,
    // re-written corpus with the same line multiset.
    let mut lines: Vec<&str> = first.lines().collect();
    lines.reverse();
    let shuffled = lines.join("\n") + "\n";
    let reloaded =
        load_corpus_from_reader(std::io::Cursor::new(shuffled), corpus.label_set()).unwrap();
    let path3 = dir.path().join("corpus3.jsonl");
    seover_core::corpus::write_corpus(&reloaded, &path3).unwrap();
    let third = std::fs::read_to_string(&path3).unwrap();
    let mut sorted_first: Vec<&str> = first.lines().collect();
    sorted_first.sort_unstable();
    let mut sorted_third: Vec<&str> = third.lines().collect();
    sorted_third.sort_unstable();
    assert_eq!(sorted_first, sorted_third);
}

#[test]
fn large_corpus_label_counts_match_a_text_scanning_oracle() {
    // A corpus with the published sentence count of the seven-class
    // dataset, loaded and cross-checked against a raw line scanner.
    use std::fmt::Write as _;
    let set = LabelSet::meld();
    let total = 13_708usize;
    let mut text = String::with_capacity(total * 120);
    let mut expected_counts = vec![0usize; 7];
    for i in 0..total {
        let dialogue = i / 10;
        let turn = i % 10;
        let label = (i * 31 + dialogue) % 7;
        expected_counts[label] += 1;
        writeln!(
            text,
            "{{\"dialogue_id\":\"d{dialogue}\",\"turn_index\":{turn},\"speaker\":\"S{}\",\"text\":\"utterance {i}\",\"label\":\"{}\"}}",
            i % 3,
            set.labels()[label]
        )
        .unwrap();
    }

    // Independent oracle: scan raw lines for the full quoted label value,
    // never through the corpus loader.
    let mut oracle = vec![0usize; 7];
    for line in text.lines() {
        for (c, name) in set.labels().iter().enumerate() {
            if line.contains(&format!("\"label\":\"{name}\"")) {
                oracle[c] += 1;
            }
        }
    }
    assert_eq!(oracle, expected_counts);

    let corpus = load_corpus_from_reader(std::io::Cursor::new(text), &set).unwrap();
    assert_eq!(corpus.n_utterances(), total);
    assert_eq!(corpus.label_counts(), expected_counts);
    assert_eq!(corpus.n_dialogues(), total.div_ceil(10));
}

//! Generated corpora for controlled experiments.
//!
//! `word_order_corpus` produces sentence pairs with identical word multisets
//! and opposite labels, so bag-of-words features carry zero signal and only
//! order-aware models can score above chance. `keyword_corpus` is the
//! opposite: a task any unigram model solves.

use crate::error::Result;
use crate::rng::Rng;
use crate::text::{encode, EncodedExample, Vocab};

const FILLERS: [&str; 12] = [
    "the", "a", "dog", "cat", "park", "saw", "walk", "today", "small", "big", "old", "friendly",
];
const MARKER_A: &str = "red";
const MARKER_B: &str = "blue";

const NEUTRAL: [&str; 8] = [
    "thanks for the helpful article",
    "great point i agree completely",
    "interesting read see you around",
    "nice work on this page",
    "good edit keep it up",
    "lovely photo of the bridge",
    "appreciate the detailed answer",
    "well written and very clear",
];
const TOXIC_WORDS: [&str; 5] = ["idiot", "stupid", "garbage", "pathetic", "loser"];
const KIND_WORDS: [&str; 5] = ["friend", "legend", "star", "gem", "hero"];

/// Balanced corpus of `count` sentences (`count` must be even) built from
/// mirrored pairs: both members share one word multiset; the label says which
/// of the two marker words comes first. Class-level unigram statistics are
/// identical by construction.
pub fn word_order_corpus(count: usize, seed: u64) -> Vec<(String, u8)> {
    assert!(
        count.is_multiple_of(2),
        "corpus size must be even, got {count}"
    );
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count / 2 {
        let n_fillers = 2 + rng.below(4);
        let mut words: Vec<&str> = (0..n_fillers)
            .map(|_| FILLERS[rng.below(FILLERS.len())])
            .collect();
        let slot_a = rng.below(words.len() + 1);
        words.insert(slot_a, MARKER_A);
        let mut slot_b = rng.below(words.len() + 1);
        // markers never adjacent-equal positions; resample once deterministically
        if slot_b == slot_a {
            slot_b = (slot_a + 1 + rng.below(words.len())) % (words.len() + 1);
        }
        words.insert(slot_b, MARKER_B);

        let sentence = words.join(" ");
        let mirrored: Vec<&str> = words
            .iter()
            .map(|&w| {
                if w == MARKER_A {
                    MARKER_B
                } else if w == MARKER_B {
                    MARKER_A
                } else {
                    w
                }
            })
            .collect();
        let label = |ws: &[&str]| -> u8 {
            let a = ws.iter().position(|&w| w == MARKER_A).unwrap();
            let b = ws.iter().position(|&w| w == MARKER_B).unwrap();
            u8::from(b < a)
        };
        let l1 = label(&words);
        let l2 = label(&mirrored);
        debug_assert_ne!(l1, l2);
        out.push((sentence, l1));
        out.push((mirrored.join(" "), l2));
    }
    out
}

/// Balanced corpus where the label is carried by vocabulary alone: toxic
/// examples contain one word from a fixed insult list, clean examples one
/// from a praise list, on top of shared neutral templates.
pub fn keyword_corpus(count: usize, seed: u64) -> Vec<(String, u8)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let base = NEUTRAL[rng.below(NEUTRAL.len())];
        let words: Vec<&str> = base.split(' ').collect();
        let toxic = i % 2 == 1;
        let marker = if toxic {
            TOXIC_WORDS[rng.below(TOXIC_WORDS.len())]
        } else {
            KIND_WORDS[rng.below(KIND_WORDS.len())]
        };
        let slot = rng.below(words.len() + 1);
        let mut sentence = words.clone();
        sentence.insert(slot, marker);
        out.push((sentence.join(" "), u8::from(toxic)));
    }
    out
}

/// Encodes labeled texts against a vocabulary.
pub fn encode_labeled(
    items: &[(String, u8)],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    items
        .iter()
        .map(|(text, label)| {
            let mut ex = encode(text, vocab, max_len)?;
            ex.label = Some(*label);
            Ok(ex)
        })
        .collect()
}

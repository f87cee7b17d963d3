//! Seeded synthetic corpora for smoke runs and tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledExample;

const NEUTRAL: &[&str] = &[
    "aaj", "mausam", "bohat", "acha", "hai", "kal", "hum", "bazaar", "gaye", "the", "chai",
    "peena", "pasand", "karta", "hoon", "school", "ki", "kitab", "parhi", "dost", "se", "mile",
    "khana", "mazedaar", "tha", "cricket", "match", "dekha", "shaam", "ko", "ghar", "wapas",
    "aaye", "gaari", "nayi", "li", "today", "weather", "nice", "we", "went", "market", "tea",
    "book", "friend", "dinner", "game", "evening", "home", "train", "late", "city", "river",
    "garden", "music", "song", "movie", "phone", "call", "soon",
];

const ABUSIVE: &[&str] = &["badtameez", "kameena", "bewakoof", "idiot"];

fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| *NEUTRAL.choose(rng).expect("non-empty"))
        .collect()
}

/// `n` documents of a few sentences each over a small mixed Roman Urdu and
/// English word list, with an occasional insult word.
pub fn synthetic_documents(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sentences = rng.random_range(3..=6);
            let parts: Vec<String> = (0..sentences)
                .map(|_| {
                    let mut words = sentence(&mut rng, 5, 12);
                    if rng.random_bool(0.2) {
                        let at = rng.random_range(0..words.len());
                        words.insert(at, ABUSIVE.choose(&mut rng).expect("non-empty"));
                    }
                    words.join(" ") + "."
                })
                .collect();
            parts.join(" ")
        })
        .collect()
}

/// A balanced, perfectly separable task: label 1 exactly when the text
/// contains an insult word. The insult goes at a random position before
/// the last word.
pub fn keyword_task(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut words = sentence(&mut rng, 4, 12);
            if label == 1 {
                let at = rng.random_range(0..words.len());
                words.insert(at, ABUSIVE.choose(&mut rng).expect("non-empty"));
            }
            LabeledExample {
                text: words.join(" "),
                label,
                source_id: Some(format!("synthetic{i}")),
            }
        })
        .collect()
}

/// Whether `text` contains one of the insult words of [`keyword_task`].
pub fn contains_keyword(text: &str) -> bool {
    text.split_whitespace().any(|w| ABUSIVE.contains(&w))
}

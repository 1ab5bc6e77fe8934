//! Closed vocabulary and grammar-templated captions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{ObjectSpec, SceneSpec};
use crate::error::{Error, Result};
use crate::params::mix_seed;

pub const PAD: usize = 0;
pub const END: usize = 1;
/// Fixed caption length, terminator and padding included.
pub const MAX_TOKENS: usize = 16;
pub const MIN_TOKENS: usize = 3;

pub const FILLERS: [&str; 16] = [
    "bright", "bold", "plain", "solid", "simple", "sharp", "clean", "vivid", "crisp", "flat",
    "neat", "smooth", "glossy", "matte", "pale", "deep",
];

const BASE_WORDS: [&str; 18] = [
    "<pad>",
    "<end>",
    "and",
    "at",
    "red",
    "green",
    "blue",
    "yellow",
    "circle",
    "square",
    "triangle",
    "small",
    "large",
    "top-left",
    "top-right",
    "bottom-left",
    "bottom-right",
    "center",
];

pub const VOCAB_SIZE: usize = BASE_WORDS.len() + FILLERS.len();

pub fn word(id: usize) -> Option<&'static str> {
    BASE_WORDS
        .get(id)
        .or_else(|| {
            id.checked_sub(BASE_WORDS.len())
                .and_then(|i| FILLERS.get(i))
        })
        .copied()
}

pub fn token_id(w: &str) -> Option<usize> {
    BASE_WORDS.iter().position(|&b| b == w).or_else(|| {
        FILLERS
            .iter()
            .position(|&f| f == w)
            .map(|i| i + BASE_WORDS.len())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verbosity {
    Short,
    Medium,
    Long,
}

/// Token ids padded to [`MAX_TOKENS`], plus the human-readable text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    tokens: Vec<usize>,
    raw_text: String,
}

impl Caption {
    /// Builds a caption from words; the terminator and padding are appended.
    pub fn from_words(words: &[&str]) -> Result<Self> {
        if words.len() + 1 < MIN_TOKENS || words.len() + 1 > MAX_TOKENS {
            return Err(Error::Config(format!(
                "caption must hold {MIN_TOKENS}..={MAX_TOKENS} tokens, got {}",
                words.len() + 1
            )));
        }
        let mut tokens = words
            .iter()
            .map(|w| {
                token_id(w)
                    .ok_or_else(|| Error::Config(format!("word `{w}` is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        tokens.push(END);
        tokens.resize(MAX_TOKENS, PAD);
        Ok(Self {
            tokens,
            raw_text: words.join(" "),
        })
    }

    /// Rebuilds a caption from stored ids (with or without padding).
    pub fn from_tokens(ids: &[usize]) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&id| id >= VOCAB_SIZE) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: VOCAB_SIZE,
            });
        }
        let body: Vec<&str> = ids
            .iter()
            .take_while(|&&id| id != END && id != PAD)
            .map(|&id| word(id).expect("checked above"))
            .collect();
        Self::from_words(&body)
    }

    /// Every position, padding included.
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Number of non-pad tokens, terminator included.
    pub fn len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != PAD).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }
}

/// Templated caption of a scene at the requested verbosity.
///
/// * short: `⟨color⟩ ⟨shape⟩` of the dominant object
/// * medium: `⟨size⟩ ⟨color⟩ ⟨shape⟩ at ⟨position⟩` of the dominant object
/// * long: every object with a filler adjective, joined by `and`; detail is
///   dropped uniformly until the caption fits [`MAX_TOKENS`]
pub fn caption_for(spec: &SceneSpec, verbosity: Verbosity) -> Caption {
    let d = spec.dominant();
    let words = match verbosity {
        Verbosity::Short => vec![d.color.word(), d.shape.word()],
        Verbosity::Medium => vec![
            d.size.word(),
            d.color.word(),
            d.shape.word(),
            "at",
            d.position.word(),
        ],
        Verbosity::Long => long_words(spec, MAX_TOKENS - 1),
    };
    Caption::from_words(&words).expect("templates stay within vocabulary and length")
}

/// Long-form caption limited to `max_tokens` tokens (terminator included).
pub fn caption_with_budget(spec: &SceneSpec, max_tokens: usize) -> Result<Caption> {
    if !(MIN_TOKENS..=MAX_TOKENS).contains(&max_tokens) {
        return Err(Error::Config(format!(
            "caption length must be in {MIN_TOKENS}..={MAX_TOKENS}, got {max_tokens}"
        )));
    }
    let mut words = long_words(spec, max_tokens - 1);
    words.truncate(max_tokens - 1);
    Caption::from_words(&words)
}

// Detail levels, richest first.
const LEVELS: usize = 5;

fn object_words(o: &ObjectSpec, filler: &'static str, level: usize) -> Vec<&'static str> {
    let (color, shape, size, pos) = (
        o.color.word(),
        o.shape.word(),
        o.size.word(),
        o.position.word(),
    );
    match level {
        0 => vec![filler, size, color, shape, "at", pos],
        1 => vec![size, color, shape, "at", pos],
        2 => vec![color, shape, "at", pos],
        3 => vec![color, shape, pos],
        _ => vec![color, shape],
    }
}

fn long_words(spec: &SceneSpec, budget: usize) -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed(), 0xF1_11E5));
    let fillers: Vec<&'static str> = spec
        .objects()
        .iter()
        .map(|_| FILLERS[rng.random_range(0..FILLERS.len())])
        .collect();
    let mut words = Vec::new();
    for level in 0..LEVELS {
        words.clear();
        for (i, (o, f)) in spec.objects().iter().zip(&fillers).enumerate() {
            if i > 0 {
                words.push("and");
            }
            words.extend(object_words(o, f, level));
        }
        if words.len() <= budget {
            break;
        }
    }
    words
}

//! Text examples, hashing tokenizer, splits, batching, and the synthetic
//! review corpus.
//!
//! Everything here is deterministic under a seed: the split and the
//! per-epoch batch order draw from dedicated RNG streams, and the tokenizer
//! is a fixed hash, so the same corpus and seed reproduce a training run
//! byte for byte.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::losses::{score_to_class, NUM_CLASSES};
use crate::rng::{derive_seed, stream, Rng};

/// Token id reserved for padding / empty text.
pub const PAD_ID: u32 = 0;
/// Token sequences are truncated to this length.
pub const MAX_TOKENS: usize = 512;

/// Score interval sampled for each class by the synthetic generator. The
/// intervals sit strictly inside the class regions with a margin, so a
/// generated score never lands on a class boundary.
pub const CLASS_SCORE_RANGES: [(f64, f64); NUM_CLASSES] = [
    (-1.0, -0.501),
    (-0.499, -0.05),
    (-0.048, 0.048),
    (0.05, 0.499),
    (0.501, 1.0),
];

/// 64-bit FNV-1a. Fixed constants, so token ids are stable across builds
/// and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stateless hashing tokenizer: lowercase, split on non-alphanumeric runs,
/// hash each word into `1..vocab_size`. Id 0 stays reserved for padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Config(alloc::format!(
                "vocabulary of {vocab_size} leaves no room for word ids"
            )));
        }
        Ok(Self { vocab_size })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Token ids for `text`, truncated to [`MAX_TOKENS`]. Text with no
    /// alphanumeric content encodes as a single padding token.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let lower = text.to_lowercase();
        let mut ids: Vec<u32> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .take(MAX_TOKENS)
            .map(|w| 1 + (fnv1a64(w.as_bytes()) % (self.vocab_size as u64 - 1)) as u32)
            .collect();
        if ids.is_empty() {
            ids.push(PAD_ID);
        }
        ids
    }
}

/// One labeled review: text, a score in `[-1, 1]`, and the sentiment class
/// the score falls in.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: String,
    pub score: f64,
    pub label: usize,
}

impl Example {
    pub fn new(text: String, score: f64) -> Result<Self> {
        if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
            return Err(Error::Data(alloc::format!(
                "score {score} outside [-1, 1]"
            )));
        }
        let label = score_to_class(score)?;
        Ok(Self { text, score, label })
    }
}

/// A non-empty collection of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Seeded shuffle, then carve off `val_fraction` for validation.
    /// Both halves must end up non-empty.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(alloc::format!(
                "validation fraction {val_fraction} outside [0, 1)"
            )));
        }
        let n = self.examples.len();
        let n_val = ((n as f64 * val_fraction) + 0.5) as usize;
        if n_val == 0 || n_val >= n {
            return Err(Error::Data(alloc::format!(
                "split of {n} examples at {val_fraction} leaves an empty side"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        Rng::seeded(seed, stream::SPLIT).shuffle(&mut idx);
        let take = |range: &[usize]| -> Vec<Example> {
            range.iter().map(|&i| self.examples[i].clone()).collect()
        };
        let val = Dataset::new(take(&idx[..n_val]))?;
        let train = Dataset::new(take(&idx[n_val..]))?;
        Ok((train, val))
    }
}

/// Index batches for one epoch: a seeded shuffle of `0..n` chunked into
/// `batch_size` groups, final partial batch included. The order depends on
/// `(seed, epoch)` only.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || batch_size == 0 {
        return Err(Error::Config(alloc::format!(
            "batching {n} examples with batch size {batch_size}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::seeded(derive_seed(seed, epoch), stream::SHUFFLE).shuffle(&mut idx);
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}

const LEXICONS: [[&str; 12]; NUM_CLASSES] = [
    [
        "abysmal", "dreadful", "horrendous", "atrocious", "unbearable", "disastrous",
        "appalling", "awful", "terrible", "hopeless", "miserable", "disgusting",
    ],
    [
        "bad", "weak", "disappointing", "dull", "flawed", "mediocre",
        "lacking", "tedious", "clumsy", "shallow", "uneven", "forgettable",
    ],
    [
        "okay", "average", "moderate", "plain", "ordinary", "standard",
        "typical", "fine", "passable", "neutral", "middling", "fair",
    ],
    [
        "good", "solid", "pleasant", "enjoyable", "capable", "smooth",
        "engaging", "likable", "effective", "satisfying", "charming", "tidy",
    ],
    [
        "excellent", "outstanding", "superb", "magnificent", "brilliant", "stellar",
        "flawless", "wonderful", "exceptional", "marvelous", "dazzling", "sublime",
    ],
];

const NOISE_WORDS: [&str; 30] = [
    "the", "a", "an", "this", "that", "movie", "film", "story", "plot", "acting",
    "scene", "camera", "music", "script", "cast", "pacing", "dialogue", "ending",
    "director", "production", "audience", "review", "overall", "really", "quite",
    "rather", "somewhat", "honestly", "frankly", "again",
];

/// Settings for the synthetic review corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    /// Relative class frequencies; normalized internally.
    pub mix: [f64; NUM_CLASSES],
    /// Probability that a token is a sentiment-free filler word.
    pub noise: f64,
    pub seed: u64,
}

/// Generate a synthetic corpus: each example draws a class from `mix`, a
/// score uniform inside that class's interval, and 20 to 80 tokens mixing
/// the class lexicon with shared noise words.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::Config("generation of zero examples".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config(alloc::format!(
            "noise rate {} outside [0, 1]",
            cfg.noise
        )));
    }
    let total: f64 = cfg.mix.iter().sum();
    if cfg.mix.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) || !(total > 0.0) {
        return Err(Error::Config(alloc::format!(
            "class mix {:?} must be non-negative with positive sum",
            cfg.mix
        )));
    }
    let last_present = (0..NUM_CLASSES).rev().find(|&k| cfg.mix[k] > 0.0).expect("sum > 0");

    let mut rng = Rng::seeded(cfg.seed, stream::SYNTH);
    let mut examples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let u = rng.uniform();
        let mut class = last_present;
        let mut acc = 0.0;
        for k in 0..NUM_CLASSES {
            acc += cfg.mix[k] / total;
            if u < acc {
                class = k;
                break;
            }
        }
        let (lo, hi) = CLASS_SCORE_RANGES[class];
        let score = rng.range(lo, hi);
        let len = 20 + rng.below(61);
        let mut text = String::new();
        for i in 0..len {
            if i > 0 {
                text.push(' ');
            }
            let word = if rng.uniform() < cfg.noise {
                NOISE_WORDS[rng.below(NOISE_WORDS.len())]
            } else {
                LEXICONS[class][rng.below(12)]
            };
            text.push_str(word);
        }
        let example = Example::new(text, score)?;
        debug_assert_eq!(example.label, class);
        examples.push(example);
    }
    Dataset::new(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_published_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_normalizes_and_stays_in_range() {
        let tok = Tokenizer::new(1000).unwrap();
        let ids = tok.encode("Hello, WORLD... hello!");
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[0], ids[2], "case and punctuation do not matter");
        assert_ne!(ids[0], ids[1]);
        for id in &ids {
            assert!((1..1000).contains(&(*id as usize)));
        }
        assert_eq!(tok.encode(""), vec![PAD_ID]);
        assert_eq!(tok.encode("?!., --"), vec![PAD_ID]);
        assert_eq!(tok.encode("Hello, WORLD... hello!"), ids, "stateless and repeatable");
        assert!(Tokenizer::new(1).is_err());
    }

    #[test]
    fn tokenizer_truncates_long_text() {
        let tok = Tokenizer::new(64).unwrap();
        let mut text = String::new();
        for i in 0..(MAX_TOKENS + 50) {
            text.push_str("word");
            text.push_str(&i.to_string());
            text.push(' ');
        }
        assert_eq!(tok.encode(&text).len(), MAX_TOKENS);
    }

    #[test]
    fn example_rejects_bad_scores() {
        assert!(Example::new("x".into(), 1.5).is_err());
        assert!(Example::new("x".into(), f64::NAN).is_err());
        let e = Example::new("x".into(), -0.7).unwrap();
        assert_eq!(e.label, 0);
    }

    #[test]
    fn split_partitions_deterministically() {
        let data = generate(&SynthConfig {
            n: 100,
            mix: [1.0; NUM_CLASSES],
            noise: 0.3,
            seed: 11,
        })
        .unwrap();
        let (train, val) = data.split(0.2, 7).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        // Disjoint union of the source (texts are unique enough to check by
        // multiset of scores).
        let mut all: Vec<u64> = train
            .iter()
            .chain(val.iter())
            .map(|e| e.score.to_bits())
            .collect();
        all.sort_unstable();
        let mut orig: Vec<u64> = data.iter().map(|e| e.score.to_bits()).collect();
        orig.sort_unstable();
        assert_eq!(all, orig);

        let (train2, _) = data.split(0.2, 7).unwrap();
        assert_eq!(train.get(0), train2.get(0));
        let (train3, _) = data.split(0.2, 8).unwrap();
        assert!((0..train.len()).any(|i| train.get(i) != train3.get(i)));

        assert!(data.split(0.0, 7).is_err());
        assert!(data.split(0.999, 7).is_err(), "rounds to everything");
    }

    #[test]
    fn epoch_batches_cover_every_index_once() {
        let batches = epoch_batches(103, 10, 5, 0).unwrap();
        assert_eq!(batches.len(), 11);
        assert!(batches[..10].iter().all(|b| b.len() == 10));
        assert_eq!(batches[10].len(), 3);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());

        assert_eq!(epoch_batches(103, 10, 5, 0).unwrap(), batches);
        assert_ne!(epoch_batches(103, 10, 5, 1).unwrap(), batches);
        assert!(epoch_batches(0, 10, 5, 0).is_err());
        assert!(epoch_batches(10, 0, 5, 0).is_err());
    }

    #[test]
    fn generator_respects_mix_and_intervals() {
        let data = generate(&SynthConfig {
            n: 500,
            mix: [0.05, 0.1, 0.2, 0.3, 0.35],
            noise: 0.25,
            seed: 42,
        })
        .unwrap();
        assert_eq!(data.len(), 500);
        for e in data.iter() {
            let (lo, hi) = CLASS_SCORE_RANGES[e.label];
            assert!(e.score >= lo && e.score < hi, "{} in class {}", e.score, e.label);
            assert_eq!(score_to_class(e.score).unwrap(), e.label);
            let words = e.text.split(' ').count();
            assert!((20..=80).contains(&words), "{words} words");
        }
        let hist = data.class_histogram();
        assert_eq!(hist.iter().sum::<usize>(), 500);
        assert!(hist[4] > hist[0], "skewed mix shows up: {hist:?}");
    }

    #[test]
    fn generator_is_seeded_and_mix_zeroes_work() {
        let cfg = SynthConfig {
            n: 50,
            mix: [0.0, 0.0, 0.0, 0.0, 1.0],
            noise: 0.0,
            seed: 9,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        for e in a.iter() {
            assert_eq!(e.label, 4);
            for w in e.text.split(' ') {
                assert!(LEXICONS[4].contains(&w), "{w} not in the class lexicon");
            }
        }
        let noisy = generate(&SynthConfig {
            noise: 1.0,
            ..cfg
        })
        .unwrap();
        for e in noisy.iter() {
            for w in e.text.split(' ') {
                assert!(NOISE_WORDS.contains(&w), "{w} not a noise word");
            }
        }
    }

    #[test]
    fn generator_rejects_bad_settings() {
        let ok = SynthConfig {
            n: 10,
            mix: [1.0; NUM_CLASSES],
            noise: 0.5,
            seed: 0,
        };
        assert!(generate(&SynthConfig { n: 0, ..ok }).is_err());
        assert!(generate(&SynthConfig { noise: 1.1, ..ok }).is_err());
        assert!(generate(&SynthConfig {
            mix: [0.0; NUM_CLASSES],
            ..ok
        })
        .is_err());
        assert!(generate(&SynthConfig {
            mix: [1.0, -0.1, 0.0, 0.0, 0.0],
            ..ok
        })
        .is_err());
    }

    #[test]
    fn lexicons_and_noise_words_are_disjoint() {
        let mut all: Vec<&str> = LEXICONS.iter().flatten().copied().collect();
        all.extend(NOISE_WORDS);
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total, "shared words would leak label signal");
    }
}

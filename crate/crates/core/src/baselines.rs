//! Keyword-lexicon, random-single-day and every-day candidate generators.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{candidates_from_days, days_in, CandidateMoC, EventHistory};

pub const KEYWORDS_METHOD: &str = "keywords";
pub const RANDOM_METHOD: &str = "random";
pub const EVERY_DAY_METHOD: &str = "everyday";

/// Seeds the random baseline is averaged over.
pub const RANDOM_BASELINE_SEEDS: std::ops::Range<u64> = 0..100;

/// Lowercased, trimmed, de-duplicated phrases.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    phrases: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_phrases<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            phrases: phrases
                .into_iter()
                .map(|p| p.as_ref().trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    /// One phrase per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_phrases(text.lines().map(str::trim).filter(|l| !l.starts_with('#')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrases.iter().map(String::as_str)
    }

    pub fn matches(&self, text: &str) -> bool {
        let text = text.to_lowercase();
        self.phrases.iter().any(|p| text.contains(p.as_str()))
    }
}

/// Days of posts whose text contains any lexicon phrase (case-insensitive substring).
pub fn detect_keywords(history: &EventHistory, lexicon: &Lexicon) -> Result<Vec<CandidateMoC>> {
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    let days = history
        .posts()
        .iter()
        .filter(|p| p.text.as_deref().is_some_and(|t| lexicon.matches(t)))
        .map(|p| p.day());
    Ok(candidates_from_days(days, KEYWORDS_METHOD))
}

/// One day drawn uniformly from the history span.
pub fn detect_random_single_day(history: &EventHistory, seed: u64) -> Vec<CandidateMoC> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..history.span_days() as u64);
    vec![CandidateMoC::new(
        history.first_day() + chrono::Days::new(offset),
        RANDOM_METHOD,
    )]
}

pub fn detect_every_day(history: &EventHistory) -> Vec<CandidateMoC> {
    days_in(history.first_day(), history.last_day())
        .map(|d| CandidateMoC::new(d, EVERY_DAY_METHOD))
        .collect()
}

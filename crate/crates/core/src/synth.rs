//! Deterministic synthetic translation tasks.
//!
//! A shared base language (random Latin words) is translated word by word
//! into a cipher language whose words are drawn from a chosen script.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PAIRS: usize = 30;
pub const MIN_SENTENCE_WORDS: usize = 3;
pub const MAX_SENTENCE_WORDS: usize = 12;
const MIN_WORD_CHARS: usize = 3;
const MAX_WORD_CHARS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    Latin,
    Cyrillic,
    /// Private use area block, disjoint from every real script.
    PrivateUse,
}

impl Script {
    pub fn name(self) -> &'static str {
        match self {
            Script::Latin => "latin",
            Script::Cyrillic => "cyrillic",
            Script::PrivateUse => "private_use",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "latin" => Ok(Script::Latin),
            "cyrillic" => Ok(Script::Cyrillic),
            "private_use" | "pua" => Ok(Script::PrivateUse),
            _ => Err(Error::config(format!("unknown script {s:?}"))),
        }
    }

    pub fn letters(self) -> Vec<char> {
        let range = match self {
            Script::Latin => 'a'..='z',
            Script::Cyrillic => 'а'..='я',
            Script::PrivateUse => '\u{E000}'..='\u{E01F}',
        };
        range.collect()
    }
}

/// Random distinct words of 3 to 8 letters.
fn random_words(letters: &[char], count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let mut seen = HashSet::with_capacity(count);
    let mut words = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while words.len() < count {
        attempts += 1;
        if attempts > count * 100 + 1000 {
            return Err(Error::config(format!("cannot draw {count} distinct words from {} letters", letters.len())));
        }
        let len = rng.random_range(MIN_WORD_CHARS..=MAX_WORD_CHARS);
        let w: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Ok(words)
}

/// Base-language lexicon for a seed.
pub fn base_lexicon(base_seed: u64, size: usize) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    random_words(&Script::Latin.letters(), size, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherLang {
    pub name: String,
    pub script: Script,
    /// Characters used by the cipher words.
    pub alphabet: BTreeSet<char>,
    /// `word_map[i]` translates base word `i`.
    pub word_map: Vec<String>,
    pub seed: u64,
}

impl CipherLang {
    pub fn new(name: &str, script: Script, lexicon_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let word_map = random_words(&script.letters(), lexicon_size, &mut rng)?;
        let alphabet = word_map.iter().flat_map(|w| w.chars()).collect();
        Ok(CipherLang { name: name.into(), script, alphabet, word_map, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Seeds the base lexicon; tasks that share it share a source language.
    pub base_seed: u64,
    /// Seeds the sentence draw.
    pub sample_seed: u64,
    pub n_pairs: usize,
    pub lexicon_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Vec<(String, String)>,
    pub dev: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

impl SplitCorpus {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

/// Train gets `floor(0.9 n)`, dev `floor(0.05 n)`, test the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 9 / 10;
    let dev = n / 20;
    (train, dev, n - train - dev)
}

/// Distinct source sentences as base-word indices.
fn sample_sentences(spec: &TaskSpec) -> Result<Vec<Vec<usize>>> {
    if spec.n_pairs < MIN_PAIRS {
        return Err(Error::config(format!("n_pairs must be at least {MIN_PAIRS}, got {}", spec.n_pairs)));
    }
    if spec.lexicon_size < 2 {
        return Err(Error::config("lexicon needs at least 2 words"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sample_seed);
    rng.set_stream(3);
    let mut seen = HashSet::with_capacity(spec.n_pairs);
    let mut out = Vec::with_capacity(spec.n_pairs);
    let mut attempts = 0usize;
    while out.len() < spec.n_pairs {
        attempts += 1;
        if attempts > spec.n_pairs * 50 {
            return Err(Error::config(format!(
                "lexicon of {} words is too small for {} distinct sentences",
                spec.lexicon_size, spec.n_pairs
            )));
        }
        let len = rng.random_range(MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS);
        let s: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.lexicon_size)).collect();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

fn split(pairs: Vec<(String, String)>) -> SplitCorpus {
    let (tr, dv, _) = split_sizes(pairs.len());
    let mut it = pairs.into_iter();
    let train = it.by_ref().take(tr).collect();
    let dev = it.by_ref().take(dv).collect();
    SplitCorpus { train, dev, test: it.collect() }
}

/// Parallel corpus translating base sentences into `target` word by word.
pub fn make_task(spec: &TaskSpec, target: &CipherLang) -> Result<SplitCorpus> {
    if target.word_map.len() < spec.lexicon_size {
        return Err(Error::config(format!(
            "cipher {} covers {} words, lexicon has {}",
            target.name,
            target.word_map.len(),
            spec.lexicon_size
        )));
    }
    let lex = base_lexicon(spec.base_seed, spec.lexicon_size)?;
    let pairs = sample_sentences(spec)?
        .into_iter()
        .map(|s| {
            let src: Vec<&str> = s.iter().map(|&i| lex[i].as_str()).collect();
            let tgt: Vec<&str> = s.iter().map(|&i| target.word_map[i].as_str()).collect();
            (src.join(" "), tgt.join(" "))
        })
        .collect();
    Ok(split(pairs))
}

/// Task whose target equals its source.
pub fn make_copy_task(spec: &TaskSpec) -> Result<SplitCorpus> {
    let lex = base_lexicon(spec.base_seed, spec.lexicon_size)?;
    let pairs = sample_sentences(spec)?
        .into_iter()
        .map(|s| {
            let src: Vec<&str> = s.iter().map(|&i| lex[i].as_str()).collect();
            let line = src.join(" ");
            (line.clone(), line)
        })
        .collect();
    Ok(split(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> TaskSpec {
        TaskSpec { base_seed: 11, sample_seed: 12, n_pairs: n, lexicon_size: 60 }
    }

    #[test]
    fn deterministic_and_script_independent_sources() {
        let lat = CipherLang::new("lat", Script::Latin, 60, 1).unwrap();
        let cyr = CipherLang::new("cyr", Script::Cyrillic, 60, 1).unwrap();
        let a = make_task(&spec(100), &lat).unwrap();
        assert_eq!(a, make_task(&spec(100), &lat).unwrap());
        let b = make_task(&spec(100), &cyr).unwrap();
        let src = |c: &SplitCorpus| c.train.iter().map(|p| p.0.clone()).collect::<Vec<_>>();
        assert_eq!(src(&a), src(&b));
        assert_ne!(a.train[0].1, b.train[0].1);
        assert!(b.train[0].1.chars().all(|c| c == ' ' || ('а'..='я').contains(&c)));
    }

    #[test]
    fn split_rule() {
        assert_eq!(split_sizes(30), (27, 1, 2));
        assert_eq!(split_sizes(800), (720, 40, 40));
        let c = make_copy_task(&spec(30)).unwrap();
        assert_eq!(c.sizes(), (27, 1, 2));
        for (s, t) in &c.train {
            assert_eq!(s, t);
            let n = s.split(' ').count();
            assert!((MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS).contains(&n));
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let c = make_copy_task(&spec(400)).unwrap();
        let train: HashSet<&String> = c.train.iter().map(|p| &p.0).collect();
        assert!(c.dev.iter().chain(&c.test).all(|p| !train.contains(&p.0)));
    }

    #[test]
    fn cipher_is_injective_with_exact_alphabet() {
        let pua = CipherLang::new("odia", Script::PrivateUse, 200, 4).unwrap();
        let set: HashSet<&String> = pua.word_map.iter().collect();
        assert_eq!(set.len(), 200);
        let used: BTreeSet<char> = pua.word_map.iter().flat_map(|w| w.chars()).collect();
        assert_eq!(used, pua.alphabet);
        assert!(pua.alphabet.iter().all(|&c| ('\u{E000}'..='\u{F8FF}').contains(&c)));
    }

    #[test]
    fn config_errors() {
        let lat = CipherLang::new("lat", Script::Latin, 60, 1).unwrap();
        assert!(make_task(&spec(29), &lat).is_err());
        let tiny = TaskSpec { lexicon_size: 2, ..spec(9000) };
        assert!(matches!(make_copy_task(&tiny), Err(Error::Config(_))));
        let short = CipherLang::new("s", Script::Latin, 10, 1).unwrap();
        assert!(make_task(&spec(100), &short).is_err());
        assert!(Script::parse("klingon").is_err());
    }
}

//! Segmentation mismatch statistics and length filtering.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Fragmentation of a corpus under one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationReport {
    pub tokens_per_sentence: f64,
    pub tokens_per_word: f64,
    pub sentence_count: usize,
    pub word_count: usize,
    pub token_count: usize,
    /// Sentences longer than the length limit. They are still counted in the
    /// averages above.
    pub filtered_count: usize,
}

pub fn fragmentation<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
    length_limit: Option<usize>,
) -> Result<FragmentationReport> {
    let mut sentences = 0usize;
    let mut words = 0usize;
    let mut tokens = 0usize;
    let mut filtered = 0usize;
    for sentence in corpus {
        let seg = vocab.segment(sentence);
        sentences += 1;
        words += seg.word_count;
        tokens += seg.token_count();
        if length_limit.is_some_and(|limit| seg.token_count() > limit) {
            filtered += 1;
        }
    }
    if sentences == 0 {
        return Err(Error::data("fragmentation of an empty corpus"));
    }
    Ok(FragmentationReport {
        tokens_per_sentence: tokens as f64 / sentences as f64,
        tokens_per_word: if words == 0 { 0.0 } else { tokens as f64 / words as f64 },
        sentence_count: sentences,
        word_count: words,
        token_count: tokens,
        filtered_count: filtered,
    })
}

/// Keeps the pairs whose source and target both segment into at most
/// `length_limit` tokens.
pub fn filter_long(
    pairs: &[(String, String)],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    length_limit: usize,
) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter(|(src, tgt)| {
            source_vocab.segment(src).token_count() <= length_limit
                && target_vocab.segment(tgt).token_count() <= length_limit
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocabulary, MANDATORY};
    use alloc::string::ToString;
    use alloc::vec;

    fn vocab_with(extra: &[&str]) -> Vocabulary {
        let mut entries: Vec<String> = MANDATORY.iter().map(|s| s.to_string()).collect();
        entries.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::new(entries).unwrap()
    }

    #[test]
    fn hand_counted_report() {
        let v = vocab_with(&["a", "b", "ab_"]);
        let r = fragmentation(["ab ab"], &v, None).unwrap();
        assert_eq!(r.tokens_per_sentence, 2.0);
        assert_eq!(r.tokens_per_word, 1.0);
        assert_eq!(r.filtered_count, 0);
    }

    #[test]
    fn empty_corpus_is_error() {
        let v = vocab_with(&[]);
        assert!(matches!(fragmentation(core::iter::empty(), &v, None), Err(Error::Data(_))));
    }

    #[test]
    fn filtered_count_reports_long_sentences() {
        let v = vocab_with(&["a"]);
        // "aaa" -> a a a _ : 4 tokens
        let r = fragmentation(["aaa", "a"], &v, Some(3)).unwrap();
        assert_eq!(r.filtered_count, 1);
        assert_eq!(r.sentence_count, 2);
        assert_eq!(r.token_count, 6);
    }

    #[test]
    fn filter_limits() {
        let v = vocab_with(&["a"]);
        // 100 a's plus the end marker: 101 tokens.
        let long: String = core::iter::repeat_n('a', 100).collect();
        let pairs = vec![(long.clone(), "a".to_string()), ("a".to_string(), "a".to_string())];
        assert_eq!(filter_long(&pairs, &v, &v, 100).len(), 1);
        assert_eq!(filter_long(&pairs, &v, &v, 500).len(), 2);
        assert!(filter_long(&[], &v, &v, 100).is_empty());
        let swapped = vec![("a".to_string(), long)];
        assert!(filter_long(&swapped, &v, &v, 100).is_empty());
    }

    #[test]
    fn mismatched_script_fragments_more() {
        let cyr = ["привет мир привет", "мир дом кот", "кот дом привет"];
        let lat = ["hello world hello", "world house cat", "cat house hello"];
        let own = build_vocabulary(cyr, 64).unwrap();
        let other = build_vocabulary(lat, 64).unwrap();
        let a = fragmentation(cyr, &own, None).unwrap();
        let b = fragmentation(cyr, &other, None).unwrap();
        assert!(b.tokens_per_word > a.tokens_per_word);
    }
}

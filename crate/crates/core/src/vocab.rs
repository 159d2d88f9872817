//! Subword vocabularies with greedy longest-match segmentation.
//!
//! Every word is first written in an escaped form: `_` becomes `\u`, `\`
//! becomes `\\`, and a single `_` is appended to mark the end of the word.
//! Segmentation splits the escaped word greedily into the longest vocabulary
//! entries. A character that no entry can match at its position is replaced
//! by its codepoint escape `\<decimal>;`, itself segmented from the fallback
//! alphabet (`\`, `;`, `_`, `u` and the ten digits) that every vocabulary
//! carries. Any string can therefore be segmented, and detokenization
//! restores it exactly.
//!
//! Vocabularies also reserve two control entries, `<pad>` and `<eos>`, plus
//! any number of `<pad_N>` fillers. Reserved entries own embedding rows but
//! never take part in segmentation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use hashbrown::{HashMap, HashSet};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Marker appended to the escaped form of every word.
pub const END_OF_WORD: char = '_';
/// Padding control entry.
pub const PAD: &str = "<pad>";
/// End-of-sequence control entry; also used as the decoder start symbol.
pub const EOS: &str = "<eos>";
/// Longest candidate substring (in characters) considered during induction.
pub const MAX_CANDIDATE_CHARS: usize = 20;

/// Entries every vocabulary must contain, in the order `build_vocabulary`
/// places them.
pub const MANDATORY: [&str; 16] = [
    PAD, EOS, "\\", ";", "_", "u", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
];

/// True for `<pad>`, `<eos>` and `<pad_N>`.
pub fn is_reserved(entry: &str) -> bool {
    if entry == PAD || entry == EOS {
        return true;
    }
    entry
        .strip_prefix("<pad_")
        .and_then(|rest| rest.strip_suffix('>'))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Escapes one word, keeping characters for which `keep` returns true.
/// The result ends with the end-of-word marker.
pub fn escape_word(word: &str, keep: impl Fn(char) -> bool) -> String {
    let mut out = String::with_capacity(word.len() + 1);
    for c in word.chars() {
        match c {
            '_' => out.push_str("\\u"),
            '\\' => out.push_str("\\\\"),
            c if keep(c) => out.push(c),
            c => {
                let _ = write!(out, "\\{};", c as u32);
            }
        }
    }
    out.push(END_OF_WORD);
    out
}

/// Escapes an arbitrary string without the end-of-word marker, keeping every
/// character except `_` and `\`.
pub fn escape(s: &str) -> String {
    let mut out = escape_word(s, |_| true);
    out.pop();
    out
}

/// Strict inverse of [`escape`]: rejects dangling or malformed escapes.
pub fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('u') => out.push('_'),
            Some('\\') => out.push('\\'),
            Some(d) if d.is_ascii_digit() => {
                let mut code = d.to_digit(10).unwrap_or(0);
                loop {
                    match chars.next() {
                        Some(';') => break,
                        Some(d) if d.is_ascii_digit() => {
                            code = code
                                .checked_mul(10)
                                .and_then(|v| v.checked_add(d.to_digit(10).unwrap_or(0)))
                                .ok_or_else(|| Error::data("escaped codepoint overflows"))?;
                        }
                        _ => return Err(Error::data("unterminated codepoint escape")),
                    }
                }
                let ch = char::from_u32(code)
                    .ok_or_else(|| Error::data(format!("invalid codepoint {code} in escape")))?;
                out.push(ch);
            }
            Some(other) => return Err(Error::data(format!("unknown escape \\{other}"))),
            None => return Err(Error::data("dangling backslash")),
        }
    }
    Ok(out)
}

/// Lenient variant of [`unescape`] used for model output: malformed escape
/// sequences are kept verbatim.
fn unescape_lossy(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            match bytes.get(i + 1) {
                Some(b'u') => {
                    out.push('_');
                    i += 2;
                    continue;
                }
                Some(b'\\') => {
                    out.push('\\');
                    i += 2;
                    continue;
                }
                Some(d) if d.is_ascii_digit() => {
                    let digits_end = bytes[i + 1..]
                        .iter()
                        .position(|b| !b.is_ascii_digit())
                        .map_or(bytes.len(), |p| i + 1 + p);
                    if bytes.get(digits_end) == Some(&b';') {
                        let decoded = s[i + 1..digits_end]
                            .parse::<u32>()
                            .ok()
                            .and_then(char::from_u32);
                        if let Some(ch) = decoded {
                            out.push(ch);
                            i = digits_end + 1;
                            continue;
                        }
                    }
                }
                _ => {}
            }
            out.push('\\');
            i += 1;
        } else {
            let ch = s[i..].chars().next().unwrap_or('\u{fffd}');
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

/// Result of segmenting one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub token_ids: Vec<u32>,
    pub word_count: usize,
}

impl SegmentedSentence {
    pub fn token_count(&self) -> usize {
        self.token_ids.len()
    }
}

/// An ordered list of escaped subwords; an entry's index is its embedding row.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    alphabet: HashSet<char>,
    max_entry_chars: usize,
    pad_id: u32,
    eos_id: u32,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for Vocabulary {}

fn entry_problem(entry: &str) -> Option<&'static str> {
    if entry.is_empty() {
        return Some("empty entry");
    }
    if entry.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Some("entry contains whitespace or control characters");
    }
    if is_reserved(entry) {
        return None;
    }
    if let Some(pos) = entry.find(END_OF_WORD) {
        if pos + 1 != entry.len() {
            return Some("end-of-word marker inside an entry");
        }
    }
    None
}

impl Vocabulary {
    /// Validates and indexes a list of escaped entries. Errors carry the
    /// 0-based entry index as the line number.
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if let Some(problem) = entry_problem(entry) {
                return Err(Error::Parse { line: i, message: problem.to_string() });
            }
            if index.insert(entry.clone(), i as u32).is_some() {
                return Err(Error::Parse {
                    line: i,
                    message: format!("duplicate entry {entry:?}"),
                });
            }
        }
        let missing: Vec<&str> =
            MANDATORY.iter().copied().filter(|m| !index.contains_key(*m)).collect();
        if !missing.is_empty() {
            return Err(Error::Parse {
                line: entries.len(),
                message: format!("fallback alphabet incomplete, missing {missing:?}"),
            });
        }
        let alphabet = entries
            .iter()
            .filter_map(|e| {
                let mut it = e.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) if c != '\\' && c != END_OF_WORD => Some(c),
                    _ => None,
                }
            })
            .collect();
        let max_entry_chars = entries
            .iter()
            .filter(|e| !is_reserved(e))
            .map(|e| e.chars().count())
            .max()
            .unwrap_or(1);
        let pad_id = index[PAD];
        let eos_id = index[EOS];
        Ok(Vocabulary { entries, index, alphabet, max_entry_chars, pad_id, eos_id })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn index_of(&self, entry: &str) -> Option<u32> {
        self.index.get(entry).copied()
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.index.contains_key(entry)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    /// True when `c` is a single-character entry, so it can always be
    /// written literally.
    pub fn in_alphabet(&self, c: char) -> bool {
        self.alphabet.contains(&c)
    }

    /// Id and character length of the longest entry starting at `pos`.
    fn longest_match(&self, s: &str, bounds: &[usize], pos: usize) -> Option<(u32, usize)> {
        let longest = self.max_entry_chars.min(bounds.len() - 1 - pos);
        (1..=longest).rev().find_map(|len| match self.index.get(&s[bounds[pos]..bounds[pos + len]]) {
            Some(&id) if !is_reserved(&s[bounds[pos]..bounds[pos + len]]) => Some((id, len)),
            _ => None,
        })
    }

    fn char_bounds(s: &str) -> Vec<usize> {
        s.char_indices().map(|(i, _)| i).chain(core::iter::once(s.len())).collect()
    }

    fn segment_word_into(&self, word: &str, out: &mut Vec<u32>) {
        let escaped = escape_word(word, |_| true);
        let bounds = Self::char_bounds(&escaped);
        let mut pos = 0;
        while pos + 1 < bounds.len() {
            if let Some((id, len)) = self.longest_match(&escaped, &bounds, pos) {
                out.push(id);
                pos += len;
                continue;
            }
            let c = escaped[bounds[pos]..].chars().next().expect("in bounds");
            let mut code = String::new();
            let _ = write!(code, "\\{};", c as u32);
            let cb = Self::char_bounds(&code);
            let mut p = 0;
            while p + 1 < cb.len() {
                // Always matches: escapes only use fallback characters.
                let (id, len) = self.longest_match(&code, &cb, p).expect("fallback alphabet present");
                out.push(id);
                p += len;
            }
            pos += 1;
        }
    }

    /// Splits `sentence` on whitespace and segments every word greedily.
    pub fn segment(&self, sentence: &str) -> SegmentedSentence {
        let mut token_ids = Vec::new();
        let mut word_count = 0;
        for word in sentence.split_whitespace() {
            word_count += 1;
            self.segment_word_into(word, &mut token_ids);
        }
        SegmentedSentence { token_ids, word_count }
    }

    /// Token ids for `sentence`, without any control symbols.
    pub fn encode(&self, sentence: &str) -> Vec<u32> {
        self.segment(sentence).token_ids
    }

    /// Inverse of [`Vocabulary::segment`]. Reserved entries are skipped;
    /// malformed escapes in model output are kept verbatim.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut escaped = String::new();
        for &id in ids {
            let entry = self
                .get(id)
                .ok_or_else(|| Error::data(format!("token id {id} out of range for {}", self.len())))?;
            if !is_reserved(entry) {
                escaped.push_str(entry);
            }
        }
        let mut words: Vec<String> = Vec::new();
        for piece in escaped.split(END_OF_WORD) {
            if !piece.is_empty() {
                words.push(unescape_lossy(piece));
            }
        }
        Ok(words.join(" "))
    }

    /// Serialized file form: one entry per line, LF-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(entry);
            out.push('\n');
        }
        out
    }

    /// Parses the file form produced by [`Vocabulary::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::new(Vec::new());
        }
        let mut entries = Vec::new();
        for (line, raw) in body.split('\n').enumerate() {
            if raw.ends_with('\r') {
                return Err(Error::Parse { line, message: "CR line ending".to_string() });
            }
            if raw.is_empty() {
                return Err(Error::Parse { line, message: "blank line".to_string() });
            }
            entries.push(raw.to_string());
        }
        Self::new(entries)
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest.iter() {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Counts of escaped words in a corpus.
fn escaped_word_counts<'a>(corpus: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for sentence in corpus {
        for word in sentence.split_whitespace() {
            *counts.entry(escape_word(word, |_| true)).or_insert(0) += 1;
        }
    }
    counts
}

/// Induces a vocabulary of exactly `target_size` entries.
///
/// Every substring (up to [`MAX_CANDIDATE_CHARS`] characters) of every
/// escaped word is scored by occurrence count times length; the best
/// `target_size - 16` candidates follow the mandatory entries, ties broken
/// lexicographically. Missing slots are filled with `<pad_N>` entries.
pub fn build_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    target_size: usize,
) -> Result<Vocabulary> {
    if target_size < MANDATORY.len() {
        return Err(Error::config(format!(
            "target size {target_size} is smaller than the {} mandatory entries",
            MANDATORY.len()
        )));
    }
    let words = escaped_word_counts(corpus);
    let mandatory: BTreeSet<&str> = MANDATORY.iter().copied().collect();
    let mut scores: HashMap<&str, u64> = HashMap::new();
    for (word, &count) in &words {
        let bounds: Vec<usize> =
            word.char_indices().map(|(i, _)| i).chain(core::iter::once(word.len())).collect();
        let n = bounds.len() - 1;
        for start in 0..n {
            for len in 1..=MAX_CANDIDATE_CHARS.min(n - start) {
                let cand = &word[bounds[start]..bounds[start + len]];
                // Control characters cannot be stored; they stay escaped.
                if cand.ends_with(char::is_control) {
                    break;
                }
                if mandatory.contains(cand) || is_reserved(cand) {
                    continue;
                }
                *scores.entry(cand).or_insert(0) += count * len as u64;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = scores.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let budget = target_size - MANDATORY.len();
    let mut entries: Vec<String> = MANDATORY.iter().map(|s| s.to_string()).collect();
    entries.extend(ranked.iter().take(budget).map(|(s, _)| s.to_string()));
    let mut k = 0;
    while entries.len() < target_size {
        entries.push(format!("<pad_{k}>"));
        k += 1;
    }
    Vocabulary::new(entries)
}

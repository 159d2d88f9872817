//! Parent vocabulary transformation.
//!
//! Subwords present in both the parent and the child vocabulary stay at their
//! parent index, so they keep their trained embedding row. Every parent-only
//! slot is handed to a child-only subword; the [`Strategy`] decides which
//! child subword lands in which slot.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use hashbrown::{HashMap, HashSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Pairing rule between child-only subwords and parent-only slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Child vocabulary order onto ascending slots.
    Ordered,
    /// Descending child corpus frequency onto ascending slots.
    Frequency,
    /// Seeded uniform permutation onto ascending slots.
    Random { seed: u64 },
    /// Each child-only subword, in child order, takes the free slot whose
    /// former parent subword is nearest in edit distance (lowest slot on ties).
    Levenshtein,
    /// Shuffles every child subword, shared ones included. Breaks position
    /// preservation; only useful to reproduce that it hurts.
    RandomAll { seed: u64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ordered => "ordered",
            Strategy::Frequency => "frequency",
            Strategy::Random { .. } => "random",
            Strategy::Levenshtein => "levenshtein",
            Strategy::RandomAll { .. } => "random_all",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Strategy::Random { seed } | Strategy::RandomAll { seed } => Some(*seed),
            _ => None,
        }
    }

    /// Parses `ordered`, `frequency`, `levenshtein`, `random`, `random_all`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "ordered" => Strategy::Ordered,
            "frequency" => Strategy::Frequency,
            "levenshtein" => Strategy::Levenshtein,
            "random" => Strategy::Random { seed },
            "random_all" | "random-all" => Strategy::RandomAll { seed },
            other => return Err(Error::config(format!("unknown strategy {other:?}"))),
        })
    }
}

/// Output of the transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabMapping {
    pub transformed: Vocabulary,
    /// Sorted slots whose entry is unchanged from the parent.
    pub shared_indices: Vec<usize>,
    /// (child subword, slot) for every slot that changed owner.
    pub assignment: Vec<(String, usize)>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingStats {
    pub shared_fraction: f64,
    pub reassigned_count: usize,
}

impl VocabMapping {
    pub fn stats(&self) -> MappingStats {
        mapping_stats(self)
    }
}

pub fn mapping_stats(mapping: &VocabMapping) -> MappingStats {
    let size = mapping.transformed.len();
    MappingStats {
        shared_fraction: if size == 0 {
            0.0
        } else {
            mapping.shared_indices.len() as f64 / size as f64
        },
        reassigned_count: mapping.assignment.len(),
    }
}

/// Entry-level result of [`transform_entries`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedEntries {
    pub entries: Vec<String>,
    pub shared_indices: Vec<usize>,
    pub assignment: Vec<(String, usize)>,
}

/// Edit distance over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(ca != cb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check_unique(entries: &[String], which: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        if index.insert(e.clone(), i).is_some() {
            return Err(Error::data(format!("duplicate {which} entry {e:?} at index {i}")));
        }
    }
    Ok(index)
}

/// Works on raw entry lists. `child_frequencies[i]` is the corpus count of
/// `child[i]` and is required by [`Strategy::Frequency`].
pub fn transform_entries(
    parent: &[String],
    child: &[String],
    strategy: Strategy,
    child_frequencies: Option<&[u64]>,
) -> Result<TransformedEntries> {
    if parent.len() != child.len() {
        return Err(Error::config(format!(
            "parent has {} entries but child has {}; build the child with the parent size",
            parent.len(),
            child.len()
        )));
    }
    let parent_index = check_unique(parent, "parent")?;
    let child_index = check_unique(child, "child")?;

    if let Strategy::RandomAll { seed } = strategy {
        let mut entries = child.to_vec();
        entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut shared_indices = Vec::new();
        let mut assignment = Vec::new();
        for (slot, e) in entries.iter().enumerate() {
            if *e == parent[slot] {
                shared_indices.push(slot);
            } else {
                assignment.push((e.clone(), slot));
            }
        }
        return Ok(TransformedEntries { entries, shared_indices, assignment });
    }

    let mut free_slots: Vec<usize> = Vec::new();
    let mut shared_indices = Vec::new();
    for (slot, e) in parent.iter().enumerate() {
        if child_index.contains_key(e) {
            shared_indices.push(slot);
        } else {
            free_slots.push(slot);
        }
    }
    let mut child_only: Vec<usize> =
        (0..child.len()).filter(|&i| !parent_index.contains_key(&child[i])).collect();
    debug_assert_eq!(child_only.len(), free_slots.len());

    let pairs: Vec<(usize, usize)> = match strategy {
        Strategy::Ordered => child_only.into_iter().zip(free_slots).collect(),
        Strategy::Frequency => {
            let freq = child_frequencies
                .ok_or_else(|| Error::config("frequency strategy needs child corpus frequencies"))?;
            if freq.len() != child.len() {
                return Err(Error::config(format!(
                    "{} frequencies given for {} child entries",
                    freq.len(),
                    child.len()
                )));
            }
            child_only.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
            child_only.into_iter().zip(free_slots).collect()
        }
        Strategy::Random { seed } => {
            child_only.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            child_only.into_iter().zip(free_slots).collect()
        }
        Strategy::Levenshtein => {
            let mut taken = alloc::vec![false; free_slots.len()];
            let mut out = Vec::with_capacity(child_only.len());
            for c in child_only {
                let mut best: Option<(usize, usize)> = None;
                for (k, &slot) in free_slots.iter().enumerate() {
                    if taken[k] {
                        continue;
                    }
                    let d = levenshtein(&child[c], &parent[slot]);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, k));
                        if d == 0 {
                            break;
                        }
                    }
                }
                let (_, k) = best.expect("as many free slots as child-only subwords");
                taken[k] = true;
                out.push((c, free_slots[k]));
            }
            out
        }
        Strategy::RandomAll { .. } => unreachable!(),
    };

    let mut entries = parent.to_vec();
    let mut assignment = Vec::with_capacity(pairs.len());
    for (c, slot) in pairs {
        entries[slot] = child[c].clone();
        assignment.push((child[c].clone(), slot));
    }
    assignment.sort_by_key(|&(_, slot)| slot);
    Ok(TransformedEntries { entries, shared_indices, assignment })
}

/// Transforms `parent` so that it holds exactly the entries of `child`, with
/// shared subwords at their parent positions.
pub fn transform_vocabulary(
    parent: &Vocabulary,
    child: &Vocabulary,
    strategy: Strategy,
    child_frequencies: Option<&[u64]>,
) -> Result<VocabMapping> {
    let t = transform_entries(parent.entries(), child.entries(), strategy, child_frequencies)?;
    let transformed = Vocabulary::new(t.entries)?;
    Ok(VocabMapping {
        transformed,
        shared_indices: t.shared_indices,
        assignment: t.assignment,
        strategy,
    })
}

/// Token counts of each vocabulary entry over a corpus.
pub fn token_frequencies<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
) -> Vec<u64> {
    let mut counts = alloc::vec![0u64; vocab.len()];
    for sentence in corpus {
        for id in vocab.encode(sentence) {
            counts[id as usize] += 1;
        }
    }
    counts
}

/// Serializable summary of a mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub strategy: String,
    pub seed: Option<u64>,
    pub shared_fraction: f64,
    pub reassigned_count: usize,
    pub assignment: Vec<(String, usize)>,
}

impl From<&VocabMapping> for MappingReport {
    fn from(m: &VocabMapping) -> Self {
        let stats = m.stats();
        MappingReport {
            strategy: m.strategy.name().to_string(),
            seed: m.strategy.seed(),
            shared_fraction: stats.shared_fraction,
            reassigned_count: stats.reassigned_count,
            assignment: m.assignment.clone(),
        }
    }
}

/// Checks the structural guarantees of a non-`RandomAll` mapping.
pub fn verify_mapping(parent: &[String], child: &[String], entries: &[String]) -> Result<()> {
    if entries.len() != parent.len() {
        return Err(Error::data("transformed size differs from parent size"));
    }
    let child_set: HashSet<&String> = child.iter().collect();
    for (i, p) in parent.iter().enumerate() {
        if child_set.contains(p) && entries[i] != *p {
            return Err(Error::data(format!("shared subword {p:?} moved from slot {i}")));
        }
    }
    let mut seen: HashSet<&String> = HashSet::new();
    for e in entries {
        if !child_set.contains(e) || !seen.insert(e) {
            return Err(Error::data(format!("entry {e:?} is not a unique child subword")));
        }
    }
    if seen.len() != child.len() {
        return Err(Error::data("some child subword is missing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn traced_ordered_example() {
        let parent = s(&["a", "b", "c", "d"]);
        let child = s(&["b", "e", "c", "f"]);
        let t = transform_entries(&parent, &child, Strategy::Ordered, None).unwrap();
        assert_eq!(t.entries, s(&["e", "b", "c", "f"]));
        assert_eq!(t.shared_indices, vec![1, 2]);
        assert_eq!(t.assignment, vec![("e".to_string(), 0), ("f".to_string(), 3)]);
        verify_mapping(&parent, &child, &t.entries).unwrap();
    }

    #[test]
    fn identity_for_every_strategy() {
        let v = s(&["a", "b", "c", "d"]);
        for st in [
            Strategy::Ordered,
            Strategy::Frequency,
            Strategy::Random { seed: 3 },
            Strategy::Levenshtein,
        ] {
            let t = transform_entries(&v, &v, st, Some(&[1, 2, 3, 4])).unwrap();
            assert_eq!(t.entries, v);
            assert!(t.assignment.is_empty());
        }
    }

    #[test]
    fn frequency_orders_by_count() {
        let parent = s(&["a", "b", "c", "d"]);
        let child = s(&["b", "e", "c", "f"]);
        let t = transform_entries(&parent, &child, Strategy::Frequency, Some(&[5, 1, 5, 9])).unwrap();
        assert_eq!(t.entries, s(&["f", "b", "c", "e"]));
        assert!(matches!(
            transform_entries(&parent, &child, Strategy::Frequency, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn levenshtein_prefers_similar_slot() {
        let parent = s(&["cat", "dog", "x", "house"]);
        let child = s(&["x", "hous", "dig", "cart"]);
        let t = transform_entries(&parent, &child, Strategy::Levenshtein, None).unwrap();
        assert_eq!(t.entries, s(&["cart", "dig", "x", "hous"]));
    }

    #[test]
    fn random_is_seeded() {
        let parent = s(&["a", "b", "c", "d", "g", "h"]);
        let child = s(&["p", "q", "r", "t", "v", "w"]);
        let a = transform_entries(&parent, &child, Strategy::Random { seed: 7 }, None).unwrap();
        let b = transform_entries(&parent, &child, Strategy::Random { seed: 7 }, None).unwrap();
        assert_eq!(a, b);
        assert!(a.shared_indices.is_empty());
        verify_mapping(&parent, &child, &a.entries).unwrap();
    }

    #[test]
    fn errors() {
        let p = s(&["a", "b"]);
        assert!(matches!(
            transform_entries(&p, &s(&["a"]), Strategy::Ordered, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            transform_entries(&p, &s(&["c", "c"]), Strategy::Ordered, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn random_all_keeps_child_set() {
        let parent = s(&["a", "b", "c", "d"]);
        let child = s(&["b", "e", "c", "f"]);
        let t = transform_entries(&parent, &child, Strategy::RandomAll { seed: 1 }, None).unwrap();
        let mut sorted = t.entries.clone();
        sorted.sort();
        assert_eq!(sorted, s(&["b", "c", "e", "f"]));
    }

    #[test]
    fn edit_distance() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("Леоне", "Леон"), 1);
    }
}

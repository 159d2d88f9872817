use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use recycle_core::eval::bleu;
use recycle_core::stats::fragmentation;
use recycle_core::transform::{transform_entries, verify_mapping, Strategy as Assign};
use recycle_core::vocab::{escape, unescape, MANDATORY};
use recycle_core::{build_vocabulary, Vocabulary};

fn pool_char() -> impl Strategy<Value = char> {
    prop_oneof![
        4 => proptest::char::range('a', 'z'),
        3 => proptest::char::range('а', 'я'),
        2 => proptest::char::range('\u{E000}', '\u{E01F}'),
        1 => prop::sample::select(vec!['_', '\\', ';', '0', '7', 'u', '-', '.', 'Л', '字', '😀']),
        1 => any::<char>().prop_filter("no whitespace", |c| !c.is_whitespace()),
    ]
}

fn word() -> impl Strategy<Value = String> {
    prop::collection::vec(pool_char(), 1..8).prop_map(|cs| cs.into_iter().collect())
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..8).prop_map(|ws| ws.join(" "))
}

fn latin_vocab() -> Vocabulary {
    let corpus = ["the quick brown fox jumps over the lazy dog", "a stitch in time saves nine", "lorem ipsum dolor sit amet"];
    build_vocabulary(corpus, 120).unwrap()
}

fn cyrillic_vocab() -> Vocabulary {
    let corpus = ["съешь же ещё этих мягких французских булок", "да выпей чаю", "широкая электрификация южных губерний"];
    build_vocabulary(corpus, 150).unwrap()
}

fn fallback_only() -> Vocabulary {
    build_vocabulary([""], 16).unwrap()
}

fn without(v: &Vocabulary, entry: &str) -> Vocabulary {
    Vocabulary::new(v.entries().iter().filter(|e| *e != entry).cloned().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn segment_round_trips(s in sentence()) {
        for v in [latin_vocab(), cyrillic_vocab(), fallback_only()] {
            let ids = v.encode(&s);
            prop_assert_eq!(v.detokenize(&ids).unwrap(), s.clone());
            prop_assert_eq!(v.segment(&s).word_count, s.split_whitespace().count());
        }
    }

    #[test]
    fn escape_round_trips(s in any::<String>()) {
        let e = escape(&s);
        prop_assert_eq!(unescape(&e).unwrap(), s);
    }

    #[test]
    fn segmentation_is_a_pure_function(s in sentence()) {
        let v = latin_vocab();
        let reloaded = Vocabulary::from_text(&v.to_text()).unwrap();
        prop_assert_eq!(v.encode(&s), v.encode(&s));
        prop_assert_eq!(v.encode(&s), reloaded.encode(&s));
    }

    #[test]
    fn removing_an_unused_entry_changes_nothing(s in sentence(), pick in any::<prop::sample::Index>()) {
        let v = cyrillic_vocab();
        let used: HashSet<u32> = v.encode(&s).into_iter().collect();
        let unused: Vec<&String> = v
            .entries()
            .iter()
            .enumerate()
            .filter(|(i, e)| !used.contains(&(*i as u32)) && !MANDATORY.contains(&e.as_str()))
            .map(|(_, e)| e)
            .collect();
        prop_assume!(!unused.is_empty());
        let gone = unused[pick.index(unused.len())];
        let smaller = without(&v, gone);
        let text = |v: &Vocabulary| -> Vec<String> {
            v.encode(&s).into_iter().map(|i| v.get(i).unwrap().to_string()).collect()
        };
        prop_assert_eq!(text(&v), text(&smaller));
    }

    #[test]
    fn removing_any_optional_entry_stays_lossless(s in sentence(), pick in any::<prop::sample::Index>()) {
        let v = latin_vocab();
        let optional: Vec<&String> = v.entries().iter().filter(|e| !MANDATORY.contains(&e.as_str())).collect();
        let smaller = without(&v, optional[pick.index(optional.len())]);
        prop_assert_eq!(smaller.detokenize(&smaller.encode(&s)).unwrap(), s);
    }

    #[test]
    fn removing_a_character_never_shortens(s in sentence(), pick in any::<prop::sample::Index>()) {
        let v = cyrillic_vocab();
        let chars: Vec<&String> = v
            .entries()
            .iter()
            .filter(|e| e.chars().count() == 1 && !MANDATORY.contains(&e.as_str()))
            .collect();
        let smaller = without(&v, chars[pick.index(chars.len())]);
        prop_assert!(smaller.encode(&s).len() >= v.encode(&s).len());
    }

    #[test]
    fn build_is_deterministic(corpus in prop::collection::vec(sentence(), 1..20), size in 16usize..200) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let a = build_vocabulary(refs.iter().copied(), size).unwrap();
        let b = build_vocabulary(refs.iter().copied(), size).unwrap();
        prop_assert_eq!(a.len(), size);
        prop_assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn fragmentation_means_are_exact(corpus in prop::collection::vec(sentence(), 1..30)) {
        let v = latin_vocab();
        let r = fragmentation(corpus.iter().map(String::as_str), &v, None).unwrap();
        let tokens: usize = corpus.iter().map(|s| v.encode(s).len()).sum();
        let words: usize = corpus.iter().map(|s| s.split_whitespace().count()).sum();
        prop_assert_eq!(r.tokens_per_sentence, tokens as f64 / corpus.len() as f64);
        prop_assert_eq!(r.filtered_count, 0);
        if words > 0 {
            prop_assert!(r.tokens_per_word >= 1.0);
        }
    }
}

/// Random parent/child entry lists of equal size with a chosen overlap.
fn vocab_pair() -> impl Strategy<Value = (Vec<String>, Vec<String>, Vec<u64>)> {
    (4usize..80, 0.0f64..=1.0, any::<u64>()).prop_map(|(n, overlap, seed)| {
        let shared = (n as f64 * overlap) as usize;
        let parent: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let mut child: Vec<String> = (0..shared).map(|i| format!("p{}", (i * 7 + seed as usize % 5) % n)).collect();
        child.sort();
        child.dedup();
        let mut k = 0;
        while child.len() < n {
            child.push(format!("c{k}"));
            k += 1;
        }
        // Deterministic shuffle so shared entries are not all in front.
        let mut keyed: Vec<(u64, String)> =
            child.into_iter().enumerate().map(|(i, c)| ((i as u64).wrapping_mul(seed | 1).rotate_left(17), c)).collect();
        keyed.sort();
        let child: Vec<String> = keyed.into_iter().map(|(_, c)| c).collect();
        let freqs = (0..n as u64).map(|i| (i * 31 + seed) % 11).collect();
        (parent, child, freqs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn transform_invariants((parent, child, freqs) in vocab_pair(), seed in any::<u64>()) {
        let parent_pos: HashMap<&String, usize> = parent.iter().enumerate().map(|(i, e)| (e, i)).collect();
        let strategies = [Assign::Ordered, Assign::Frequency, Assign::Random { seed }, Assign::Levenshtein];
        let mut shared_sets = Vec::new();
        for st in strategies {
            let t = transform_entries(&parent, &child, st, Some(&freqs)).unwrap();
            prop_assert_eq!(t.entries.len(), parent.len());
            let mut seen = HashSet::new();
            for e in &t.entries {
                prop_assert!(child.contains(e));
                prop_assert!(seen.insert(e));
            }
            for c in &child {
                if let Some(&i) = parent_pos.get(c) {
                    prop_assert_eq!(&t.entries[i], c);
                }
            }
            let slots: HashSet<usize> = t.assignment.iter().map(|a| a.1).collect();
            let parent_only: HashSet<usize> =
                parent.iter().enumerate().filter(|(_, p)| !child.contains(p)).map(|(i, _)| i).collect();
            prop_assert_eq!(slots, parent_only);
            verify_mapping(&parent, &child, &t.entries).unwrap();
            shared_sets.push(t.shared_indices);
        }
        prop_assert!(shared_sets.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seeded_strategies_are_deterministic((parent, child, _f) in vocab_pair(), seed in any::<u64>()) {
        for st in [Assign::Random { seed }, Assign::RandomAll { seed }] {
            let a = transform_entries(&parent, &child, st, None).unwrap();
            let b = transform_entries(&parent, &child, st, None).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

fn corpus_pair() -> impl Strategy<Value = Vec<(String, String)>> {
    let w = prop::sample::select(vec!["a", "b", "c", "d", "e", "f", ",", "."]);
    let s = prop::collection::vec(w, 1..10).prop_map(|v| v.join(" "));
    prop::collection::vec((s.clone(), s), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bleu_ignores_order_and_duplication(pairs in corpus_pair(), rot in 0usize..12) {
        let hyps: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let base = bleu(&hyps, &refs, false).unwrap();
        prop_assert!((0.0..=100.0).contains(&base.score));

        let k = rot % pairs.len();
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        h2.reverse();
        r2.reverse();
        prop_assert_eq!(bleu(&h2, &r2, false).unwrap().score, base.score);

        let h3: Vec<&str> = hyps.iter().chain(&hyps).copied().collect();
        let r3: Vec<&str> = refs.iter().chain(&refs).copied().collect();
        prop_assert!((bleu(&h3, &r3, false).unwrap().score - base.score).abs() < 1e-9);

        prop_assert_eq!(bleu(&refs, &refs, false).unwrap().score, 100.0);
    }
}

#[test]
fn greedy_removal_can_shorten_a_word() {
    // Greedy longest match is not minimal: dropping "abc" lets "ab" + "cd_" win.
    let mut entries: Vec<String> = MANDATORY.iter().map(|s| s.to_string()).collect();
    entries.extend(["a", "b", "c", "d", "ab", "cd_", "abc"].map(String::from));
    let v = Vocabulary::new(entries).unwrap();
    assert_eq!(v.encode("abcd").len(), 3);
    assert_eq!(without(&v, "abc").encode("abcd").len(), 2);
}

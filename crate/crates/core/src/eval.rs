//! Corpus BLEU and paired bootstrap resampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
/// Identifier of the tokenizer below, printed in score signatures.
pub const TOKENIZER_ID: &str = "13a-punct";

/// Splits on whitespace after isolating every Unicode punctuation character
/// as its own token. Case is preserved.
pub fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        let punct = c.general_category_group() == GeneralCategoryGroup::Punctuation;
        if c.is_whitespace() || punct {
            if let Some(st) = start.take() {
                out.push(&s[st..i]);
            }
            if punct {
                out.push(&s[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

/// Additive sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<'a, 'b>(toks: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn sentence_stats(hyp: &str, reference: &str) -> BleuStats {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    let mut st = BleuStats { hyp_len: h.len() as u64, ref_len: r.len() as u64, ..BleuStats::default() };
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        st.totals[n - 1] = h.len().saturating_sub(n - 1) as u64;
        st.matches[n - 1] = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
    }
    st
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub smoothing: bool,
}

impl BleuScore {
    /// Settings that make two scores comparable.
    pub fn signature(&self) -> String {
        signature(self.smoothing)
    }
}

pub fn signature(smoothing: bool) -> String {
    let smooth = if smoothing { "add-one" } else { "none" };
    format!("ngram={MAX_ORDER}|tok={TOKENIZER_ID}|smooth={smooth}|case=mixed")
}

/// Score from accumulated statistics. Orders without any hypothesis n-gram
/// (hypotheses shorter than n) are left out of the geometric mean.
#[allow(clippy::needless_range_loop)]
pub fn score_stats(st: &BleuStats, smoothing: bool) -> BleuScore {
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut used = 0usize;
    let mut zero = false;
    for n in 0..MAX_ORDER {
        let (m, t) = (st.matches[n] as f64, st.totals[n] as f64);
        if st.totals[n] == 0 {
            continue;
        }
        let p = if smoothing && n > 0 { (m + 1.0) / (t + 1.0) } else { m / t };
        precisions[n] = p * 100.0;
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += libm::log(p);
        }
        used += 1;
    }
    let brevity_penalty = if st.hyp_len == 0 {
        0.0
    } else if st.hyp_len < st.ref_len {
        libm::exp(1.0 - st.ref_len as f64 / st.hyp_len as f64)
    } else {
        1.0
    };
    let score = if zero || used == 0 {
        0.0
    } else {
        (brevity_penalty * libm::exp(log_sum / used as f64) * 100.0).clamp(0.0, 100.0)
    };
    BleuScore { score, precisions, brevity_penalty, hyp_len: st.hyp_len, ref_len: st.ref_len, smoothing }
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::data(format!("{what}: {a} hypotheses but {b} references")));
    }
    Ok(())
}

fn all_stats<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Vec<BleuStats> {
    hyps.iter().zip(refs).map(|(h, r)| sentence_stats(h.as_ref(), r.as_ref())).collect()
}

/// Case-sensitive corpus BLEU with one reference per sentence.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R], smoothing: bool) -> Result<BleuScore> {
    check_lengths("bleu", hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::data("bleu needs at least one sentence"));
    }
    let mut total = BleuStats::default();
    for st in all_stats(hyps, refs) {
        total.add(&st);
    }
    Ok(score_stats(&total, smoothing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// Fraction of resamples where system B does not beat system A.
    pub p_like: f64,
    pub significant: bool,
    pub n_samples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub bleu_a: f64,
    pub bleu_b: f64,
}

/// Paired bootstrap test of "B is better than A". Resample `i` draws its
/// indices from its own ChaCha stream, so results do not depend on the
/// order resamples are computed in.
pub fn paired_bootstrap<A: AsRef<str>, B: AsRef<str>, R: AsRef<str>>(
    hyp_a: &[A],
    hyp_b: &[B],
    refs: &[R],
    n_samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<SignificanceResult> {
    check_lengths("system A", hyp_a.len(), refs.len())?;
    check_lengths("system B", hyp_b.len(), refs.len())?;
    if refs.len() < 2 {
        return Err(Error::data("paired bootstrap needs at least 2 sentences"));
    }
    if n_samples == 0 {
        return Err(Error::config("n_samples must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1)")));
    }
    let sa = all_stats(hyp_a, refs);
    let sb = all_stats(hyp_b, refs);
    let full = |s: &[BleuStats]| {
        let mut t = BleuStats::default();
        s.iter().for_each(|x| t.add(x));
        score_stats(&t, false).score
    };
    let l = refs.len();
    let mut not_better = 0usize;
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (mut ta, mut tb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..l {
            let j = rng.random_range(0..l);
            ta.add(&sa[j]);
            tb.add(&sb[j]);
        }
        if score_stats(&tb, false).score <= score_stats(&ta, false).score {
            not_better += 1;
        }
    }
    let p_like = not_better as f64 / n_samples as f64;
    Ok(SignificanceResult {
        p_like,
        significant: p_like < alpha,
        n_samples,
        alpha,
        seed,
        bleu_a: full(&sa),
        bleu_b: full(&sb),
    })
}

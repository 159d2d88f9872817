//! Incremental decoding with cached keys and values.

use alloc::vec;
use alloc::vec::Vec;

use super::model::{Lin, Mha, Transformer};
use super::ops::{layer_norm, linear, softmax_prefix, Segment};
use super::real::{gemm, lit, Real, View};

/// Encoder output projected once into every decoder layer's cross-attention
/// keys and values.
pub(crate) struct Memory<T> {
    pub seg: Vec<Segment>,
    /// `(keys, values)` per decoder layer, packed like the source batch.
    pub kv: Vec<(Vec<T>, Vec<T>)>,
}

/// Self-attention keys and values of one partial hypothesis.
#[derive(Debug, Clone)]
pub(crate) struct HypCache<T> {
    pub k: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub len: usize,
}

impl<T: Real> HypCache<T> {
    fn new(layers: usize) -> Self {
        HypCache { k: vec![Vec::new(); layers], v: vec![Vec::new(); layers], len: 0 }
    }
}

fn lin_rows<T: Real>(m: &Transformer<T>, l: Lin, x: &[T]) -> Vec<T> {
    linear(x, x.len() / l.din, l.din, &m.params[l.w], &m.params[l.b], l.dout)
}

/// Attention of one query row over `len` key/value rows stored with row
/// stride `d`, written into `out`.
#[allow(clippy::too_many_arguments)]
fn attend_row<T: Real>(q: &[T], k: &[T], v: &[T], len: usize, d: usize, heads: usize, scores: &mut Vec<T>, out: &mut [T]) {
    let dh = d / heads;
    let scale = lit::<T>(1.0 / libm::sqrt(dh as f64));
    scores.resize(len, T::zero());
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
            *s = qh.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
        }
        softmax_prefix(scores, len);
        let oh = &mut out[h * dh..(h + 1) * dh];
        oh.iter_mut().for_each(|x| *x = T::zero());
        for (j, &p) in scores.iter().enumerate() {
            let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
            for (o, &x) in oh.iter_mut().zip(vj) {
                *o += p * x;
            }
        }
    }
}

impl<T: Real> Transformer<T> {
    pub(crate) fn memory(&self, sources: &[&[u32]], eos: u32) -> Memory<T> {
        let mut src = Vec::new();
        let mut seg = Vec::with_capacity(sources.len());
        for s in sources {
            seg.push(Segment { start: src.len(), len: s.len() + 1 });
            src.extend_from_slice(s);
            src.push(eos);
        }
        let enc = self.encode_packed(&src, &seg);
        let kv = self
            .layout
            .dec
            .iter()
            .map(|l| (lin_rows(self, l.cross_attn.k, &enc), lin_rows(self, l.cross_attn.v, &enc)))
            .collect();
        Memory { seg, kv }
    }

    pub(crate) fn new_cache(&self) -> HypCache<T> {
        HypCache::new(self.cfg.n_layers)
    }

    /// Feeds one token per hypothesis and returns `[rows, vocab]` logits.
    /// `sources[i]` indexes the memory segment hypothesis `i` attends to.
    pub(crate) fn decode_step(
        &self,
        tokens: &[u32],
        caches: &mut [HypCache<T>],
        sources: &[usize],
        mem: &Memory<T>,
    ) -> Vec<T> {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let rows = tokens.len();
        let emb = &self.params[self.layout.tgt_embed];
        let scale = lit::<T>(libm::sqrt(d as f64));
        let mut y = vec![T::zero(); rows * d];
        for (i, (&tok, cache)) in tokens.iter().zip(caches.iter()).enumerate() {
            let pos = cache.len.min(self.cfg.max_len - 1);
            let t = tok as usize;
            for j in 0..d {
                y[i * d + j] = emb[t * d + j] * scale + self.pe[pos * d + j];
            }
        }
        let mut scores = Vec::new();
        let mut ctx = vec![T::zero(); rows * d];
        for (li, layer) in self.layout.dec.iter().enumerate() {
            let (h, _) = layer_norm(&y, d, &self.params[layer.ln_self.g], &self.params[layer.ln_self.b]);
            let Mha { q, k, v, o } = layer.self_attn;
            let (qs, ks, vs) = (lin_rows(self, q, &h), lin_rows(self, k, &h), lin_rows(self, v, &h));
            for (i, cache) in caches.iter_mut().enumerate() {
                cache.k[li].extend_from_slice(&ks[i * d..(i + 1) * d]);
                cache.v[li].extend_from_slice(&vs[i * d..(i + 1) * d]);
                let len = cache.k[li].len() / d;
                attend_row(&qs[i * d..(i + 1) * d], &cache.k[li], &cache.v[li], len, d, heads, &mut scores, &mut ctx[i * d..(i + 1) * d]);
            }
            let a = lin_rows(self, o, &ctx);
            y.iter_mut().zip(&a).for_each(|(x, &s)| *x += s);

            let (h, _) = layer_norm(&y, d, &self.params[layer.ln_cross.g], &self.params[layer.ln_cross.b]);
            let qs = lin_rows(self, layer.cross_attn.q, &h);
            let (mk, mv) = &mem.kv[li];
            for (i, &src) in sources.iter().enumerate() {
                let s = mem.seg[src];
                let range = s.start * d..(s.start + s.len) * d;
                attend_row(&qs[i * d..(i + 1) * d], &mk[range.clone()], &mv[range], s.len, d, heads, &mut scores, &mut ctx[i * d..(i + 1) * d]);
            }
            let c = lin_rows(self, layer.cross_attn.o, &ctx);
            y.iter_mut().zip(&c).for_each(|(x, &s)| *x += s);

            let (h, _) = layer_norm(&y, d, &self.params[layer.ln_ffn.g], &self.params[layer.ln_ffn.b]);
            let mut hid = lin_rows(self, layer.ffn_in, &h);
            hid.iter_mut().for_each(|x| {
                if *x < T::zero() {
                    *x = T::zero()
                }
            });
            let f = lin_rows(self, layer.ffn_out, &hid);
            y.iter_mut().zip(&f).for_each(|(x, &s)| *x += s);
        }
        for cache in caches.iter_mut() {
            cache.len += 1;
        }
        let norm = self.layout.dec_norm;
        let (out, _) = layer_norm(&y, d, &self.params[norm.g], &self.params[norm.b]);
        let vsz = self.cfg.vocab_size;
        let mut logits = vec![T::zero(); rows * vsz];
        gemm(T::one(), &out, View::dense(rows, d), emb, View::dense(vsz, d).t(), T::zero(), &mut logits, View::dense(rows, vsz));
        logits
    }

    fn output_budget(&self, _src_len: usize) -> usize {
        self.cfg.max_len - 1
    }

    /// Greedy decoding of many sources at once. Outputs exclude `<eos>`.
    pub fn greedy(&self, sources: &[&[u32]], eos: u32) -> Vec<Vec<u32>> {
        let sources: Vec<&[u32]> = sources.iter().map(|s| self.clip_source(s)).collect();
        let mem = self.memory(&sources, eos);
        let vsz = self.cfg.vocab_size;
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); sources.len()];
        let mut active: Vec<usize> = (0..sources.len()).collect();
        let mut caches: Vec<HypCache<T>> = active.iter().map(|_| self.new_cache()).collect();
        let mut tokens: Vec<u32> = vec![eos; sources.len()];
        let budgets: Vec<usize> = sources.iter().map(|s| self.output_budget(s.len())).collect();
        while !active.is_empty() {
            let logits = self.decode_step(&tokens, &mut caches, &active, &mem);
            let mut keep = Vec::with_capacity(active.len());
            for (r, &sent) in active.iter().enumerate() {
                let best = argmax(&logits[r * vsz..(r + 1) * vsz]) as u32;
                if best != eos {
                    out[sent].push(best);
                    if out[sent].len() < budgets[sent] {
                        keep.push(r);
                    }
                }
            }
            active = keep.iter().map(|&r| active[r]).collect();
            tokens = active.iter().map(|&s| *out[s].last().unwrap_or(&eos)).collect();
            let mut next = Vec::with_capacity(keep.len());
            for (i, c) in caches.into_iter().enumerate() {
                if keep.binary_search(&i).is_ok() {
                    next.push(c);
                }
            }
            caches = next;
        }
        out
    }

    /// Beam search over one source at a time; `beam == 1` is plain greedy.
    pub fn beam_search(&self, sources: &[&[u32]], eos: u32, beam: usize) -> Vec<Vec<u32>> {
        if beam <= 1 {
            return self.greedy(sources, eos);
        }
        sources.iter().map(|s| self.beam_one(self.clip_source(s), eos, beam)).collect()
    }

    fn clip_source<'a>(&self, s: &'a [u32]) -> &'a [u32] {
        &s[..s.len().min(self.cfg.max_len - 1)]
    }

    fn beam_one(&self, src: &[u32], eos: u32, beam: usize) -> Vec<u32> {
        let mem = self.memory(&[src], eos);
        let vsz = self.cfg.vocab_size;
        let budget = self.output_budget(src.len());
        let penalty = |len: usize| libm::pow((5.0 + len as f64) / 6.0, 0.6);
        // (tokens, log-prob, cache)
        let mut live: Vec<(Vec<u32>, f64, HypCache<T>)> = vec![(Vec::new(), 0.0, self.new_cache())];
        let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
        for _ in 0..=budget {
            if live.is_empty() {
                break;
            }
            let tokens: Vec<u32> = live.iter().map(|h| *h.0.last().unwrap_or(&eos)).collect();
            let mut caches: Vec<HypCache<T>> = live.iter().map(|h| h.2.clone()).collect();
            let srcs = vec![0; live.len()];
            let logits = self.decode_step(&tokens, &mut caches, &srcs, &mem);
            let mut cand: Vec<(f64, usize, u32)> = Vec::new();
            for (r, h) in live.iter().enumerate() {
                let row = &logits[r * vsz..(r + 1) * vsz];
                let logp = log_softmax(row);
                let mut top: Vec<usize> = (0..vsz).collect();
                top.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
                for &t in top.iter().take(beam) {
                    cand.push((h.1 + logp[t], r, t as u32));
                }
            }
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(beam);
            for (score, r, t) in cand {
                if next.len() >= beam {
                    break;
                }
                let mut toks = live[r].0.clone();
                if t == eos || toks.len() + 1 > budget {
                    if t != eos {
                        toks.push(t);
                    }
                    let n = toks.len();
                    done.push((toks, score / penalty(n)));
                    if done.len() >= beam {
                        break;
                    }
                } else {
                    toks.push(t);
                    next.push((toks, score, caches[r].clone()));
                }
            }
            if done.len() >= beam {
                break;
            }
            live = next;
        }
        for (toks, score, _) in live {
            let n = toks.len();
            done.push((toks, score / penalty(n)));
        }
        done.into_iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(_, (t, _))| t)
            .unwrap_or_default()
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let z: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
    z.into_iter().map(|x| x - lse).collect()
}

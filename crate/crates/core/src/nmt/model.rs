//! Pre-norm encoder-decoder transformer with hand-written backpropagation.
//!
//! Activations are packed: every sequence of a batch occupies a contiguous
//! block of rows in a `[rows, d_model]` matrix, so all position-wise layers
//! run as one matrix product per batch and only attention works per
//! sequence.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Component, ModelConfig, OptimizerConfig};
use super::ops::{
    attention, attention_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    positional_table, NormCache, Segment,
};
use super::real::{gemm, lit, Real, View};
use crate::checkpoint::{
    Checkpoint, Metadata, Moments, Tensor, SHARED_EMBEDDING, SOURCE_EMBEDDING, TARGET_EMBEDDING,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub component: Component,
}

impl ParamInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Mha {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln_attn: Norm,
    pub attn: Mha,
    pub ln_ffn: Norm,
    pub ffn_in: Lin,
    pub ffn_out: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln_self: Norm,
    pub self_attn: Mha,
    pub ln_cross: Norm,
    pub cross_attn: Mha,
    pub ln_ffn: Norm,
    pub ffn_in: Lin,
    pub ffn_out: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub src_embed: usize,
    pub tgt_embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_norm: Norm,
    pub dec: Vec<DecLayer>,
    pub dec_norm: Norm,
}

struct LayoutBuilder {
    info: Vec<ParamInfo>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, component: Component) -> usize {
        self.info.push(ParamInfo { name, shape, component });
        self.info.len() - 1
    }

    fn lin(&mut self, prefix: &str, din: usize, dout: usize, c: Component) -> Lin {
        let w = self.add(format!("{prefix}.weight"), vec![din, dout], c);
        let b = self.add(format!("{prefix}.bias"), vec![dout], c);
        Lin { w, b, din, dout }
    }

    fn norm(&mut self, prefix: &str, d: usize, c: Component) -> Norm {
        let g = self.add(format!("{prefix}.gain"), vec![d], c);
        let b = self.add(format!("{prefix}.bias"), vec![d], c);
        Norm { g, b }
    }

    fn mha(&mut self, prefix: &str, d: usize) -> Mha {
        let c = Component::Attention;
        Mha {
            q: self.lin(&format!("{prefix}.q"), d, d, c),
            k: self.lin(&format!("{prefix}.k"), d, d, c),
            v: self.lin(&format!("{prefix}.v"), d, d, c),
            o: self.lin(&format!("{prefix}.o"), d, d, c),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamInfo>) {
    let d = cfg.d_model;
    let mut b = LayoutBuilder { info: Vec::new() };
    let (src_embed, tgt_embed) = if cfg.share_embeddings {
        let e = b.add(SHARED_EMBEDDING.to_string(), vec![cfg.vocab_size, d], Component::Embeddings);
        (e, e)
    } else {
        let s = b.add(SOURCE_EMBEDDING.to_string(), vec![cfg.vocab_size, d], Component::Embeddings);
        let t = b.add(TARGET_EMBEDDING.to_string(), vec![cfg.vocab_size, d], Component::Embeddings);
        (s, t)
    };
    let enc = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("encoder.layer{i}");
            let c = Component::Encoder;
            EncLayer {
                ln_attn: b.norm(&format!("{p}.ln_attn"), d, c),
                attn: b.mha(&format!("{p}.self_attn"), d),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d, c),
                ffn_in: b.lin(&format!("{p}.ffn_in"), d, cfg.ffn_dim, c),
                ffn_out: b.lin(&format!("{p}.ffn_out"), cfg.ffn_dim, d, c),
            }
        })
        .collect();
    let enc_norm = b.norm("encoder.ln_final", d, Component::Encoder);
    let dec = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("decoder.layer{i}");
            let c = Component::Decoder;
            DecLayer {
                ln_self: b.norm(&format!("{p}.ln_self"), d, c),
                self_attn: b.mha(&format!("{p}.self_attn"), d),
                ln_cross: b.norm(&format!("{p}.ln_cross"), d, c),
                cross_attn: b.mha(&format!("{p}.cross_attn"), d),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d, c),
                ffn_in: b.lin(&format!("{p}.ffn_in"), d, cfg.ffn_dim, c),
                ffn_out: b.lin(&format!("{p}.ffn_out"), cfg.ffn_dim, d, c),
            }
        })
        .collect();
    let dec_norm = b.norm("decoder.ln_final", d, Component::Decoder);
    (Layout { src_embed, tgt_embed, enc, enc_norm, dec, dec_norm }, b.info)
}

/// Token ids of one training pair, without control symbols.
pub type Pair<'a> = (&'a [u32], &'a [u32]);

/// Adam state `(m, v, config)` handed to [`Transformer::to_checkpoint`].
pub type AdamState<'a, T> = (&'a [Vec<T>], &'a [Vec<T>], OptimizerConfig);

/// A packed batch: sources end with `<eos>`; the decoder reads `<eos>`
/// followed by the target and predicts the target followed by `<eos>`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<u32>,
    pub src_seg: Vec<Segment>,
    pub dec_in: Vec<u32>,
    pub dec_out: Vec<u32>,
    pub tgt_seg: Vec<Segment>,
}

impl Batch {
    pub fn new(pairs: &[Pair<'_>], eos: u32) -> Self {
        let mut b = Batch {
            src: Vec::new(),
            src_seg: Vec::with_capacity(pairs.len()),
            dec_in: Vec::new(),
            dec_out: Vec::new(),
            tgt_seg: Vec::with_capacity(pairs.len()),
        };
        for (src, tgt) in pairs {
            b.src_seg.push(Segment { start: b.src.len(), len: src.len() + 1 });
            b.src.extend_from_slice(src);
            b.src.push(eos);
            b.tgt_seg.push(Segment { start: b.dec_in.len(), len: tgt.len() + 1 });
            b.dec_in.push(eos);
            b.dec_in.extend_from_slice(tgt);
            b.dec_out.extend_from_slice(tgt);
            b.dec_out.push(eos);
        }
        b
    }

    pub fn target_tokens(&self) -> usize {
        self.dec_out.len()
    }
}

/// Loss sums over the target tokens of a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    /// Label-smoothed cross-entropy summed over tokens (the training objective).
    pub smoothed_sum: f64,
    /// Plain negative log-likelihood summed over tokens.
    pub nll_sum: f64,
    pub tokens: usize,
    /// Teacher-forced argmax hits.
    pub correct: usize,
}

impl LossStats {
    pub fn add(&mut self, o: &LossStats) {
        self.smoothed_sum += o.smoothed_sum;
        self.nll_sum += o.nll_sum;
        self.tokens += o.tokens;
        self.correct += o.correct;
    }

    pub fn mean_nll(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.nll_sum / self.tokens as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

struct MhaCache<T> {
    x_kv: Option<Vec<T>>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
}

struct FfnCache<T> {
    hidden: Vec<T>,
}

struct EncLayerCache<T> {
    ln_attn: NormCache<T>,
    h_attn: Vec<T>,
    attn: MhaCache<T>,
    drop_attn: Option<Vec<T>>,
    ln_ffn: NormCache<T>,
    h_ffn: Vec<T>,
    ffn: FfnCache<T>,
    drop_ffn: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    ln_self: NormCache<T>,
    h_self: Vec<T>,
    self_attn: MhaCache<T>,
    drop_self: Option<Vec<T>>,
    ln_cross: NormCache<T>,
    h_cross: Vec<T>,
    cross_attn: MhaCache<T>,
    drop_cross: Option<Vec<T>>,
    ln_ffn: NormCache<T>,
    h_ffn: Vec<T>,
    ffn: FfnCache<T>,
    drop_ffn: Option<Vec<T>>,
}

/// Dropout masks are drawn from this when present.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Real>(&mut self, n: usize) -> Vec<T> {
        let keep = lit::<T>(1.0 / (1.0 - self.rate));
        (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect()
    }
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Encoder-decoder transformer parameters plus their layout.
#[derive(Debug, Clone)]
pub struct Transformer<T> {
    pub(crate) cfg: ModelConfig,
    pub(crate) info: Vec<ParamInfo>,
    pub(crate) params: Vec<Vec<T>>,
    pub(crate) layout: Layout,
    pub(crate) pe: Vec<T>,
}

impl<T: Real> Transformer<T> {
    /// Fresh model with seeded uniform initialization.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (layout, info) = build_layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model as f64;
        let params = info
            .iter()
            .map(|p| {
                let n = p.numel();
                let bound = if p.component == Component::Embeddings {
                    Some(libm::sqrt(3.0 / d))
                } else if p.name.ends_with(".weight") {
                    Some(libm::sqrt(6.0 / (p.shape[0] + p.shape[1]) as f64))
                } else {
                    None
                };
                match bound {
                    Some(a) => (0..n).map(|_| lit(rng.random_range(-a..a))).collect(),
                    None if p.name.ends_with(".gain") => vec![T::one(); n],
                    None => vec![T::zero(); n],
                }
            })
            .collect();
        let pe = positional_table(cfg.max_len, cfg.d_model);
        Ok(Transformer { cfg: cfg.clone(), info, params, layout, pe })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.info.iter().map(ParamInfo::numel).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    /// Loads parameters from a checkpoint; names and shapes must match the
    /// layout the checkpoint's model config describes.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(&ckpt.metadata.model)?;
        if ckpt.tensors.len() != model.info.len() {
            return Err(Error::config(format!(
                "checkpoint has {} tensors, model expects {}",
                ckpt.tensors.len(),
                model.info.len()
            )));
        }
        for (i, p) in model.info.iter().enumerate() {
            let t = ckpt
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks tensor {}", p.name)))?;
            if t.shape != p.shape {
                return Err(Error::config(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            model.params[i] = t.data.iter().map(|&v| T::of_f32(v)).collect();
        }
        Ok(model)
    }

    /// Snapshot as a checkpoint. `moments` are `(m, v)` per parameter.
    pub fn to_checkpoint(
        &self,
        step: u64,
        vocab_hash: &str,
        moments: Option<AdamState<'_, T>>,
    ) -> Checkpoint {
        let to_tensor =
            |p: &ParamInfo, data: &[T]| Tensor { shape: p.shape.clone(), data: data.iter().map(|v| v.as_f32()).collect() };
        let tensors: BTreeMap<String, Tensor> = self
            .info
            .iter()
            .zip(&self.params)
            .map(|(p, data)| (p.name.clone(), to_tensor(p, data)))
            .collect();
        let mut optimizer_state = BTreeMap::new();
        let mut optimizer = None;
        if let Some((m, v, cfg)) = moments {
            optimizer = Some(cfg);
            for (i, p) in self.info.iter().enumerate() {
                optimizer_state
                    .insert(p.name.clone(), Moments { m: to_tensor(p, &m[i]), v: to_tensor(p, &v[i]) });
            }
        }
        Checkpoint {
            tensors,
            step,
            optimizer_state,
            metadata: Metadata {
                vocab_hash: vocab_hash.to_string(),
                vocab_size: self.cfg.vocab_size,
                model: self.cfg.clone(),
                optimizer,
            },
        }
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params[i]
    }

    fn embed(&self, ids: &[u32], segs: &[Segment], table: usize) -> Vec<T> {
        let d = self.cfg.d_model;
        let e = self.p(table);
        let scale = lit::<T>(libm::sqrt(d as f64));
        let mut x = vec![T::zero(); ids.len() * d];
        for s in segs {
            for pos in 0..s.len {
                let r = s.start + pos;
                let id = ids[r] as usize;
                let row = &mut x[r * d..(r + 1) * d];
                let er = &e[id * d..(id + 1) * d];
                let pr = &self.pe[pos * d..(pos + 1) * d];
                for j in 0..d {
                    row[j] = er[j] * scale + pr[j];
                }
            }
        }
        x
    }

    fn embed_backward(&self, ids: &[u32], dx: &[T], grads: &mut [Vec<T>], table: usize) {
        let d = self.cfg.d_model;
        let scale = lit::<T>(libm::sqrt(d as f64));
        let g = &mut grads[table];
        for (r, &id) in ids.iter().enumerate() {
            let id = id as usize;
            for j in 0..d {
                g[id * d + j] += dx[r * d + j] * scale;
            }
        }
    }

    fn lin(&self, l: Lin, x: &[T]) -> Vec<T> {
        linear(x, x.len() / l.din, l.din, self.p(l.w), self.p(l.b), l.dout)
    }

    fn lin_back(&self, l: Lin, x: &[T], dy: &[T], grads: &mut [Vec<T>], dx: Option<&mut [T]>) {
        let n = x.len() / l.din;
        let (dw, db) = two_mut(grads, l.w, l.b);
        linear_backward(x, n, l.din, self.p(l.w), l.dout, dy, dw, db, dx);
    }

    fn norm(&self, n: Norm, x: &[T]) -> (Vec<T>, NormCache<T>) {
        layer_norm(x, self.cfg.d_model, self.p(n.g), self.p(n.b))
    }

    fn norm_back(&self, n: Norm, dy: &[T], cache: &NormCache<T>, grads: &mut [Vec<T>], dx: &mut [T]) {
        let (dg, db) = two_mut(grads, n.g, n.b);
        layer_norm_backward(dy, cache, self.cfg.d_model, self.p(n.g), dg, db, dx);
    }

    #[allow(clippy::too_many_arguments)]
    fn mha_forward(
        &self,
        m: Mha,
        x_q: &[T],
        x_kv: Option<&[T]>,
        qseg: &[Segment],
        kseg: &[Segment],
        causal: bool,
    ) -> (Vec<T>, MhaCache<T>) {
        let q = self.lin(m.q, x_q);
        let kv_in = x_kv.unwrap_or(x_q);
        let k = self.lin(m.k, kv_in);
        let v = self.lin(m.v, kv_in);
        let (ctx, probs) = attention(&q, &k, &v, qseg, kseg, self.cfg.d_model, self.cfg.n_heads, causal);
        let out = self.lin(m.o, &ctx);
        (out, MhaCache { x_kv: x_kv.map(|s| s.to_vec()), q, k, v, probs, ctx })
    }

    /// Returns the gradient of the query-side input; the key/value-side
    /// gradient is added into `dx_kv` for cross attention, or folded into
    /// the returned gradient for self attention.
    #[allow(clippy::too_many_arguments)]
    fn mha_backward(
        &self,
        m: Mha,
        x_q: &[T],
        cache: &MhaCache<T>,
        dout: &[T],
        qseg: &[Segment],
        kseg: &[Segment],
        grads: &mut [Vec<T>],
        dx_kv: Option<&mut [T]>,
    ) -> Vec<T> {
        let d = self.cfg.d_model;
        let mut dctx = vec![T::zero(); cache.ctx.len()];
        self.lin_back(m.o, &cache.ctx, dout, grads, Some(&mut dctx));
        let (dq, dk, dv) = attention_backward(
            &dctx, &cache.q, &cache.k, &cache.v, &cache.probs, qseg, kseg, d, self.cfg.n_heads,
        );
        let mut dxq = vec![T::zero(); x_q.len()];
        self.lin_back(m.q, x_q, &dq, grads, Some(&mut dxq));
        match (&cache.x_kv, dx_kv) {
            (Some(x_kv), Some(dkv)) => {
                self.lin_back(m.k, x_kv, &dk, grads, Some(&mut *dkv));
                self.lin_back(m.v, x_kv, &dv, grads, Some(dkv));
            }
            (None, None) => {
                self.lin_back(m.k, x_q, &dk, grads, Some(&mut dxq));
                self.lin_back(m.v, x_q, &dv, grads, Some(&mut dxq));
            }
            _ => unreachable!("cross attention always carries its key/value input"),
        }
        dxq
    }

    fn ffn_forward(&self, fin: Lin, fout: Lin, h: &[T]) -> (Vec<T>, FfnCache<T>) {
        let mut hidden = self.lin(fin, h);
        for v in hidden.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let out = self.lin(fout, &hidden);
        (out, FfnCache { hidden })
    }

    fn ffn_backward(&self, fin: Lin, fout: Lin, h: &[T], cache: &FfnCache<T>, dout: &[T], grads: &mut [Vec<T>]) -> Vec<T> {
        let mut dhidden = vec![T::zero(); cache.hidden.len()];
        self.lin_back(fout, &cache.hidden, dout, grads, Some(&mut dhidden));
        for (g, &a) in dhidden.iter_mut().zip(&cache.hidden) {
            if a <= T::zero() {
                *g = T::zero();
            }
        }
        let mut dh = vec![T::zero(); h.len()];
        self.lin_back(fin, h, &dhidden, grads, Some(&mut dh));
        dh
    }

    fn drop_mask(&self, n: usize, dropout: &mut Option<Dropout<'_>>) -> Option<Vec<T>> {
        dropout.as_mut().filter(|d| d.rate > 0.0).map(|d| d.mask(n))
    }

    /// Mean label-smoothed loss and its gradient, accumulated into `grads`
    /// scaled by `1 / target_tokens`.
    pub fn loss_and_grad(&self, batch: &Batch, label_smoothing: f64, grads: &mut [Vec<T>]) -> LossStats {
        self.run(batch, label_smoothing, Some(grads), None)
    }

    /// Loss statistics without gradients or dropout.
    pub fn evaluate(&self, batch: &Batch, label_smoothing: f64) -> LossStats {
        self.run(batch, label_smoothing, None, None)
    }

    pub(crate) fn train_step_grads(
        &self,
        batch: &Batch,
        label_smoothing: f64,
        grads: &mut [Vec<T>],
        rng: &mut ChaCha8Rng,
    ) -> LossStats {
        let dropout = Dropout { rate: self.cfg.dropout, rng };
        self.run(batch, label_smoothing, Some(grads), Some(dropout))
    }

    /// Runs the encoder on packed sources; returns the final (normed) states.
    pub(crate) fn encode_packed(&self, src: &[u32], seg: &[Segment]) -> Vec<T> {
        let mut x = self.embed(src, seg, self.layout.src_embed);
        for layer in &self.layout.enc {
            let (h, _) = self.norm(layer.ln_attn, &x);
            let (a, _) = self.mha_forward(layer.attn, &h, None, seg, seg, false);
            add_into(&mut x, &a);
            let (h, _) = self.norm(layer.ln_ffn, &x);
            let (f, _) = self.ffn_forward(layer.ffn_in, layer.ffn_out, &h);
            add_into(&mut x, &f);
        }
        self.norm(self.layout.enc_norm, &x).0
    }

    fn run(
        &self,
        batch: &Batch,
        label_smoothing: f64,
        grads: Option<&mut [Vec<T>]>,
        mut dropout: Option<Dropout<'_>>,
    ) -> LossStats {
        let d = self.cfg.d_model;
        let lay = &self.layout;
        let (sseg, tseg) = (&batch.src_seg[..], &batch.tgt_seg[..]);

        // Encoder.
        let mut x = self.embed(&batch.src, sseg, lay.src_embed);
        let drop_src = self.drop_mask(x.len(), &mut dropout);
        apply_mask(&mut x, &drop_src);
        let mut enc_caches = Vec::with_capacity(lay.enc.len());
        for layer in &lay.enc {
            let (h_attn, ln_attn) = self.norm(layer.ln_attn, &x);
            let (mut a, attn) = self.mha_forward(layer.attn, &h_attn, None, sseg, sseg, false);
            let drop_attn = self.drop_mask(a.len(), &mut dropout);
            apply_mask(&mut a, &drop_attn);
            add_into(&mut x, &a);
            let (h_ffn, ln_ffn) = self.norm(layer.ln_ffn, &x);
            let (mut f, ffn) = self.ffn_forward(layer.ffn_in, layer.ffn_out, &h_ffn);
            let drop_ffn = self.drop_mask(f.len(), &mut dropout);
            apply_mask(&mut f, &drop_ffn);
            add_into(&mut x, &f);
            enc_caches.push(EncLayerCache { ln_attn, h_attn, attn, drop_attn, ln_ffn, h_ffn, ffn, drop_ffn });
        }
        let (enc_out, enc_norm_cache) = self.norm(lay.enc_norm, &x);

        // Decoder.
        let mut y = self.embed(&batch.dec_in, tseg, lay.tgt_embed);
        let drop_tgt = self.drop_mask(y.len(), &mut dropout);
        apply_mask(&mut y, &drop_tgt);
        let mut dec_caches = Vec::with_capacity(lay.dec.len());
        for layer in &lay.dec {
            let (h_self, ln_self) = self.norm(layer.ln_self, &y);
            let (mut a, self_attn) = self.mha_forward(layer.self_attn, &h_self, None, tseg, tseg, true);
            let drop_self = self.drop_mask(a.len(), &mut dropout);
            apply_mask(&mut a, &drop_self);
            add_into(&mut y, &a);
            let (h_cross, ln_cross) = self.norm(layer.ln_cross, &y);
            let (mut c, cross_attn) =
                self.mha_forward(layer.cross_attn, &h_cross, Some(&enc_out), tseg, sseg, false);
            let drop_cross = self.drop_mask(c.len(), &mut dropout);
            apply_mask(&mut c, &drop_cross);
            add_into(&mut y, &c);
            let (h_ffn, ln_ffn) = self.norm(layer.ln_ffn, &y);
            let (mut f, ffn) = self.ffn_forward(layer.ffn_in, layer.ffn_out, &h_ffn);
            let drop_ffn = self.drop_mask(f.len(), &mut dropout);
            apply_mask(&mut f, &drop_ffn);
            add_into(&mut y, &f);
            dec_caches.push(DecLayerCache {
                ln_self,
                h_self,
                self_attn,
                drop_self,
                ln_cross,
                h_cross,
                cross_attn,
                drop_cross,
                ln_ffn,
                h_ffn,
                ffn,
                drop_ffn,
            });
        }
        let (out, dec_norm_cache) = self.norm(lay.dec_norm, &y);

        // Output projection tied to the target embedding.
        let n = batch.dec_out.len();
        let vsz = self.cfg.vocab_size;
        let emb = self.p(lay.tgt_embed);
        let mut logits = vec![T::zero(); n * vsz];
        gemm(T::one(), &out, View::dense(n, d), emb, View::dense(vsz, d).t(), T::zero(), &mut logits, View::dense(n, vsz));

        let eps = label_smoothing;
        let uniform = eps / vsz as f64;
        let inv_n = lit::<T>(1.0 / n as f64);
        let mut stats = LossStats { tokens: n, ..LossStats::default() };
        for r in 0..n {
            let row = &mut logits[r * vsz..(r + 1) * vsz];
            let target = batch.dec_out[r] as usize;
            let logits_target = row[target];
            let (mut max, mut arg) = (row[0], 0);
            for (j, &v) in row.iter().enumerate() {
                if v > max {
                    max = v;
                    arg = j;
                }
            }
            if arg == target {
                stats.correct += 1;
            }
            let mut sum = T::zero();
            let mut shifted_sum = 0.0f64;
            for v in row.iter_mut() {
                let z = *v - max;
                shifted_sum += z.to_f64().unwrap_or(f64::NAN);
                *v = z.exp();
                sum += *v;
            }
            let log_sum = sum.ln().to_f64().unwrap_or(f64::NAN);
            let logp_target = (logits_target - max).to_f64().unwrap_or(f64::NAN) - log_sum;
            stats.nll_sum -= logp_target;
            let mean_logp = shifted_sum / vsz as f64 - log_sum;
            stats.smoothed_sum += -(1.0 - eps) * logp_target - eps * mean_logp;
            if grads.is_some() {
                let inv_sum = T::one() / sum;
                let u = lit::<T>(uniform);
                for (j, v) in row.iter_mut().enumerate() {
                    let mut g = *v * inv_sum - u;
                    if j == target {
                        g -= lit::<T>(1.0 - eps);
                    }
                    *v = g * inv_n;
                }
            }
        }
        let Some(grads) = grads else {
            return stats;
        };
        let dlogits = logits;

        // Output projection backward.
        gemm(T::one(), &dlogits, View::dense(n, vsz).t(), &out, View::dense(n, d), T::one(), &mut grads[lay.tgt_embed], View::dense(vsz, d));
        let mut dout = vec![T::zero(); n * d];
        gemm(T::one(), &dlogits, View::dense(n, vsz), emb, View::dense(vsz, d), T::zero(), &mut dout, View::dense(n, d));
        drop(dlogits);

        let mut dy = vec![T::zero(); n * d];
        self.norm_back(lay.dec_norm, &dout, &dec_norm_cache, grads, &mut dy);
        let mut denc = vec![T::zero(); enc_out.len()];
        for (layer, cache) in lay.dec.iter().zip(dec_caches.iter()).rev() {
            let mut df = dy.clone();
            apply_mask(&mut df, &cache.drop_ffn);
            let dh = self.ffn_backward(layer.ffn_in, layer.ffn_out, &cache.h_ffn, &cache.ffn, &df, grads);
            self.norm_back(layer.ln_ffn, &dh, &cache.ln_ffn, grads, &mut dy);

            let mut dc = dy.clone();
            apply_mask(&mut dc, &cache.drop_cross);
            let dh = self.mha_backward(
                layer.cross_attn,
                &cache.h_cross,
                &cache.cross_attn,
                &dc,
                tseg,
                sseg,
                grads,
                Some(&mut denc),
            );
            self.norm_back(layer.ln_cross, &dh, &cache.ln_cross, grads, &mut dy);

            let mut da = dy.clone();
            apply_mask(&mut da, &cache.drop_self);
            let dh = self.mha_backward(layer.self_attn, &cache.h_self, &cache.self_attn, &da, tseg, tseg, grads, None);
            self.norm_back(layer.ln_self, &dh, &cache.ln_self, grads, &mut dy);
        }
        apply_mask(&mut dy, &drop_tgt);
        self.embed_backward(&batch.dec_in, &dy, grads, lay.tgt_embed);

        let mut dx = vec![T::zero(); x.len()];
        self.norm_back(lay.enc_norm, &denc, &enc_norm_cache, grads, &mut dx);
        for (layer, cache) in lay.enc.iter().zip(enc_caches.iter()).rev() {
            let mut df = dx.clone();
            apply_mask(&mut df, &cache.drop_ffn);
            let dh = self.ffn_backward(layer.ffn_in, layer.ffn_out, &cache.h_ffn, &cache.ffn, &df, grads);
            self.norm_back(layer.ln_ffn, &dh, &cache.ln_ffn, grads, &mut dx);

            let mut da = dx.clone();
            apply_mask(&mut da, &cache.drop_attn);
            let dh = self.mha_backward(layer.attn, &cache.h_attn, &cache.attn, &da, sseg, sseg, grads, None);
            self.norm_back(layer.ln_attn, &dh, &cache.ln_attn, grads, &mut dx);
        }
        apply_mask(&mut dx, &drop_src);
        self.embed_backward(&batch.src, &dx, grads, lay.src_embed);
        stats
    }
}

/// Two distinct mutable entries of a slice.
fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b, "parameter indices out of order");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

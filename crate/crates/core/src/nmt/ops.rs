//! Forward and backward kernels on packed `[rows, dim]` activations.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, lit, Real, View};

pub const LN_EPS: f64 = 1e-6;

/// `y = x w + b` with `w` stored `[din, dout]`.
pub fn linear<T: Real>(x: &[T], n: usize, din: usize, w: &[T], b: &[T], dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * dout];
    for row in y.chunks_exact_mut(dout) {
        row.copy_from_slice(b);
    }
    gemm(T::one(), x, View::dense(n, din), w, View::dense(din, dout), T::one(), &mut y, View::dense(n, dout));
    y
}

/// Accumulates weight and bias gradients of [`linear`] and, when `dx` is
/// given, adds the input gradient into it.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    n: usize,
    din: usize,
    w: &[T],
    dout: usize,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(T::one(), x, View::dense(n, din).t(), dy, View::dense(n, dout), T::one(), dw, View::dense(din, dout));
    for row in dy.chunks_exact(dout) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    if let Some(dx) = dx {
        gemm(T::one(), dy, View::dense(n, dout), w, View::dense(din, dout).t(), T::one(), dx, View::dense(n, din));
    }
}

/// Saved state of a layer norm forward pass.
#[derive(Debug, Clone, Default)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::one() / lit::<T>(d as f64);
    let eps = lit::<T>(LN_EPS);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Adds the input gradient of a layer norm into `dx` and accumulates the
/// gain and bias gradients.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &NormCache<T>,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = dy.len() / d;
    let inv_d = T::one() / lit::<T>(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] += rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

/// Contiguous rows `[start, start + len)` of one sequence in a packed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Scaled dot-product attention over packed sequences. Query segment `i`
/// attends to key segment `i`; `causal` masks keys after the query position.
/// Returns the context `[nq, d]` and the attention probabilities, stored per
/// (segment, head) as dense `lq x lk` blocks.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    qseg: &[Segment],
    kseg: &[Segment],
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();
    let nq = q.len() / d;
    let mut ctx = vec![T::zero(); nq * d];
    let total: usize = qseg.iter().zip(kseg).map(|(a, b)| a.len * b.len).sum::<usize>() * heads;
    let mut probs = vec![T::zero(); total];
    let mut off = 0;
    for (qs, ks) in qseg.iter().zip(kseg) {
        let (lq, lk) = (qs.len, ks.len);
        for h in 0..heads {
            let p = &mut probs[off..off + lq * lk];
            gemm(
                scale,
                q,
                View::block(qs.start * d + h * dh, lq, dh, d),
                k,
                View::block(ks.start * d + h * dh, lk, dh, d).t(),
                T::zero(),
                p,
                View::dense(lq, lk),
            );
            for i in 0..lq {
                let row = &mut p[i * lk..(i + 1) * lk];
                let visible = if causal { (i + 1).min(lk) } else { lk };
                softmax_prefix(row, visible);
            }
            gemm(
                T::one(),
                p,
                View::dense(lq, lk),
                v,
                View::block(ks.start * d + h * dh, lk, dh, d),
                T::zero(),
                &mut ctx,
                View::block(qs.start * d + h * dh, lq, dh, d),
            );
            off += lq * lk;
        }
    }
    (ctx, probs)
}

/// Softmax over `row[..visible]`, zeroing the rest.
pub fn softmax_prefix<T: Real>(row: &mut [T], visible: usize) {
    let max = row[..visible].iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row[..visible].iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    for x in row[..visible].iter_mut() {
        *x *= inv;
    }
    for x in row[visible..].iter_mut() {
        *x = T::zero();
    }
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    dctx: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    qseg: &[Segment],
    kseg: &[Segment],
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut off = 0;
    let mut dp = Vec::new();
    for (qs, ks) in qseg.iter().zip(kseg) {
        let (lq, lk) = (qs.len, ks.len);
        for h in 0..heads {
            let p = &probs[off..off + lq * lk];
            let qv = View::block(qs.start * d + h * dh, lq, dh, d);
            let kv = View::block(ks.start * d + h * dh, lk, dh, d);
            // dV += P^T dC
            gemm(T::one(), p, View::dense(lq, lk).t(), dctx, qv, T::one(), &mut dv, kv);
            // dP = dC V^T
            dp.clear();
            dp.resize(lq * lk, T::zero());
            gemm(T::one(), dctx, qv, v, kv.t(), T::zero(), &mut dp, View::dense(lq, lk));
            // dS = P * (dP - rowsum(dP * P)), folded with the score scale.
            for i in 0..lq {
                let pr = &p[i * lk..(i + 1) * lk];
                let dr = &mut dp[i * lk..(i + 1) * lk];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (g, &pv) in dr.iter_mut().zip(pr) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            gemm(T::one(), &dp, View::dense(lq, lk), k, kv, T::one(), &mut dq, qv);
            gemm(T::one(), &dp, View::dense(lq, lk).t(), q, qv, T::one(), &mut dk, kv);
            off += lq * lk;
        }
    }
    (dq, dk, dv)
}

/// Sinusoidal position encodings, `[len, d]`.
pub fn positional_table<T: Real>(len: usize, d: usize) -> Vec<T> {
    let mut table = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = libm::pow(10000.0, -2.0 * i as f64 / d as f64);
            let angle = pos as f64 * freq;
            table[pos * d + 2 * i] = lit(libm::sin(angle));
            table[pos * d + 2 * i + 1] = lit(libm::cos(angle));
        }
    }
    table
}

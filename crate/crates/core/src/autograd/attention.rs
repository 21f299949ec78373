use alloc::vec;
use alloc::vec::Vec;

use crate::real::{gemm_view, MatRef, Real};

/// Returns the `[n, d]` output and the softmax weights `[heads, n, l]`.
/// `bias [n, l]` is added to the scaled logits of every head.
#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    bias: Option<&[T]>,
    n: usize,
    l: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = vec![T::zero(); heads * n * l];
    for h in 0..heads {
        let off = h * n * l;
        let qh = MatRef::rm(q, h * dh, n, dh, d);
        let kt = MatRef::rm(k, h * dh, l, dh, d).t();
        gemm_view(qh, kt, T::zero(), &mut probs, off, l);
        for (r, row) in probs[off..off + n * l].chunks_mut(l).enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s *= scale;
                if let Some(b) = bias {
                    *s += b[r * l + j];
                }
            }
            let mx = row.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
            let mut sum = T::zero();
            for s in row.iter_mut() {
                *s = (*s - mx).exp();
                sum += *s;
            }
            let inv = T::one() / sum;
            for s in row.iter_mut() {
                *s *= inv;
            }
        }
        let p = MatRef::rm(&probs, off, n, l, l);
        let vh = MatRef::rm(v, h * dh, l, dh, d);
        gemm_view(p, vh, T::zero(), &mut out, h * dh, d);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv, dbias)`; `dbias` is summed over heads.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    g: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    n: usize,
    l: usize,
    d: usize,
    heads: usize,
    want_bias: bool,
) -> (Vec<T>, Vec<T>, Vec<T>, Option<Vec<T>>) {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); l * d];
    let mut dv = vec![T::zero(); l * d];
    let mut ds = vec![T::zero(); n * l];
    let mut dbias = want_bias.then(|| vec![T::zero(); n * l]);
    for h in 0..heads {
        let off = h * n * l;
        let p = MatRef::rm(probs, off, n, l, l);
        let go = MatRef::rm(g, h * dh, n, dh, d);
        gemm_view(p.t(), go, T::zero(), &mut dv, h * dh, d);
        gemm_view(go, MatRef::rm(v, h * dh, l, dh, d).t(), T::zero(), &mut ds, 0, l);
        for (row, prow) in ds.chunks_mut(l).zip(probs[off..off + n * l].chunks(l)) {
            let dot: T = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for (s, &pv) in row.iter_mut().zip(prow) {
                *s = pv * (*s - dot);
            }
        }
        if let Some(db) = dbias.as_mut() {
            for (o, &v) in db.iter_mut().zip(&ds) {
                *o += v;
            }
        }
        for s in ds.iter_mut() {
            *s *= scale;
        }
        let dsm = MatRef::rm(&ds, 0, n, l, l);
        gemm_view(dsm, MatRef::rm(k, h * dh, l, dh, d), T::zero(), &mut dq, h * dh, d);
        gemm_view(dsm.t(), MatRef::rm(q, h * dh, n, dh, d), T::zero(), &mut dk, h * dh, d);
    }
    (dq, dk, dv, dbias)
}

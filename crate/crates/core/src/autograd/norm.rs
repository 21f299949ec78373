use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Normalized values and inverse std per group, kept for the reverse pass.
pub(super) struct Saved<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    groups: usize,
    size: usize,
    per_group_affine: bool,
}

/// Normalizes `groups` contiguous runs of `size` values each.
///
/// With `per_group_affine` (instance norm) `gamma[g]` scales group `g`;
/// otherwise (layer norm) `gamma[j]` scales element `j` of every group.
pub(super) fn forward<T: Real>(
    x: &[T],
    groups: usize,
    size: usize,
    gamma: &[T],
    beta: &[T],
    per_group_affine: bool,
    keep: bool,
) -> (Vec<T>, Saved<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = if keep { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut rstd = vec![T::zero(); groups];
    let inv_n = T::one() / T::of(size as f64);
    let eps = T::of(NORM_EPS);
    for gi in 0..groups {
        let seg = &x[gi * size..(gi + 1) * size];
        let mean = seg.iter().copied().sum::<T>() * inv_n;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let r = T::one() / (var + eps).sqrt();
        rstd[gi] = r;
        for (j, &v) in seg.iter().enumerate() {
            let h = (v - mean) * r;
            let (gm, bt) = if per_group_affine { (gamma[gi], beta[gi]) } else { (gamma[j], beta[j]) };
            out[gi * size + j] = h * gm + bt;
            if keep {
                xhat[gi * size + j] = h;
            }
        }
    }
    (out, Saved { xhat, rstd, groups, size, per_group_affine })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(super) fn backward<T: Real>(dy: &[T], gamma: &[T], s: &Saved<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); dy.len()];
    let mut dg = vec![T::zero(); gamma.len()];
    let mut db = vec![T::zero(); gamma.len()];
    let n = T::of(s.size as f64);
    let mut dxhat = vec![T::zero(); s.size];
    for gi in 0..s.groups {
        let range = gi * s.size..(gi + 1) * s.size;
        let dys = &dy[range.clone()];
        let xh = &s.xhat[range.clone()];
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for j in 0..s.size {
            let a = if s.per_group_affine { gi } else { j };
            dg[a] += dys[j] * xh[j];
            db[a] += dys[j];
            let d = dys[j] * gamma[a];
            dxhat[j] = d;
            sum_d += d;
            sum_dx += d * xh[j];
        }
        let k = s.rstd[gi] / n;
        for (j, o) in dx[range].iter_mut().enumerate() {
            *o = k * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
        }
    }
    (dx, dg, db)
}

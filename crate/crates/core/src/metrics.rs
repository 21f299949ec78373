//! Training losses (pair loss, NCC-based translation loss) and evaluation
//! metrics (TRE, rTRE).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::PointDisplacements;
use crate::real::Real;
use crate::volume::Volume;
use crate::{Error, Point3, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Added to `Var(a) * Var(b)` under the square root of the NCC denominator.
pub const NCC_EPS: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_LOCAL_WINDOW: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NccWindow {
    /// One Pearson correlation over all voxels.
    #[default]
    Global,
    /// Mean of per-window correlations over all fully contained cubic windows
    /// of the given odd side.
    Local(usize),
}

/// Mean over points of `|d_i + q_i - q_t_i|^2`.
pub fn l_pair(d_pred: &PointDisplacements, q: &[Point3], q_t: &[Point3]) -> Result<f64> {
    let d = d_pred.offsets();
    if d.len() != q.len() || q.len() != q_t.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions, {} queries, {} targets",
            d.len(),
            q.len(),
            q_t.len()
        )));
    }
    if d.is_empty() {
        return Err(Error::InvalidArgument("pair loss over zero points".into()));
    }
    let mut s = 0.0;
    for i in 0..d.len() {
        for a in 0..3 {
            let r = d[i][a] + q[i][a] - q_t[i][a];
            s += r * r;
        }
    }
    Ok(s / d.len() as f64)
}

pub fn ncc(a: &Volume, b: &Volume, window: NccWindow) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    ncc_slices(a.data(), b.data(), a.dims(), window)
}

pub fn ncc_slices<T: Real>(a: &[T], b: &[T], dims: [usize; 3], window: NccWindow) -> Result<f64> {
    Ok(ncc_with_grad(a, b, dims, window, false, false)?.0)
}

/// `-NCC`.
pub fn l_trans(fixed: &Volume, warped: &Volume, window: NccWindow) -> Result<f64> {
    Ok(-ncc(fixed, warped, window)?)
}

pub(crate) struct NccOutput {
    pub value: f64,
    pub grad_a: Option<Vec<f64>>,
    pub grad_b: Option<Vec<f64>>,
}

impl NccOutput {
    pub(crate) fn into_tuple(self) -> (f64, Option<Vec<f64>>, Option<Vec<f64>>) {
        (self.value, self.grad_a, self.grad_b)
    }
}

fn check_window(dims: [usize; 3], window: NccWindow) -> Result<()> {
    if let NccWindow::Local(w) = window {
        if w % 2 == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("NCC window must be odd, got {w}")));
        }
        if dims.iter().any(|&d| d < w) {
            return Err(Error::InvalidArgument(format!("NCC window {w} larger than volume {dims:?}")));
        }
    }
    Ok(())
}

/// NCC value and (optionally) its gradient with respect to either input.
#[allow(clippy::type_complexity)]
pub(crate) fn ncc_with_grad<T: Real>(
    a: &[T],
    b: &[T],
    dims: [usize; 3],
    window: NccWindow,
    want_a: bool,
    want_b: bool,
) -> Result<(f64, Option<Vec<f64>>, Option<Vec<f64>>)> {
    let n = dims[0] * dims[1] * dims[2];
    if a.len() != n || b.len() != n {
        return Err(Error::ShapeMismatch(format!("NCC inputs of {} and {} voxels for {dims:?}", a.len(), b.len())));
    }
    check_window(dims, window)?;
    let out = match window {
        NccWindow::Global => ncc_global(a, b, want_a, want_b),
        NccWindow::Local(w) => ncc_local(a, b, dims, w, want_a, want_b),
    };
    Ok(out.into_tuple())
}

fn ncc_global<T: Real>(a: &[T], b: &[T], want_a: bool, want_b: bool) -> NccOutput {
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x.to_f64_lossy() - ma, y.to_f64_lossy() - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    let den = (va * vb + NCC_EPS).sqrt();
    let value = cov / den;
    let den3 = den * den * den;
    let grad_b = want_b.then(|| {
        let c = cov * va / den3;
        a.iter()
            .zip(b)
            .map(|(x, y)| (x.to_f64_lossy() - ma) / den - c * (y.to_f64_lossy() - mb))
            .collect()
    });
    let grad_a = want_a.then(|| {
        let c = cov * vb / den3;
        a.iter()
            .zip(b)
            .map(|(x, y)| (y.to_f64_lossy() - mb) / den - c * (x.to_f64_lossy() - ma))
            .collect()
    });
    NccOutput { value, grad_a, grad_b }
}

/// Sums over every length-`w` window along `axis` ("valid" mode).
fn box_valid(data: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut od = dims;
    od[axis] = dims[axis] - w + 1;
    let stride = [dims[1] * dims[2], dims[2], 1];
    let ostride = [od[1] * od[2], od[2], 1];
    let mut out = vec![0.0; od[0] * od[1] * od[2]];
    let len = dims[axis];
    let mut prefix = vec![0.0; len + 1];
    let mut other = [0usize; 2];
    let axes: Vec<usize> = (0..3).filter(|&x| x != axis).collect();
    for i in 0..dims[axes[0]] {
        for j in 0..dims[axes[1]] {
            other[0] = i;
            other[1] = j;
            let base = other[0] * stride[axes[0]] + other[1] * stride[axes[1]];
            let obase = other[0] * ostride[axes[0]] + other[1] * ostride[axes[1]];
            for k in 0..len {
                prefix[k + 1] = prefix[k] + data[base + k * stride[axis]];
            }
            for s in 0..od[axis] {
                out[obase + s * ostride[axis]] = prefix[s + w] - prefix[s];
            }
        }
    }
    (out, od)
}

/// Adjoint of [`box_valid`]: scatters each window value back over its support.
fn box_adjoint(data: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut od = dims;
    od[axis] = dims[axis] + w - 1;
    let stride = [dims[1] * dims[2], dims[2], 1];
    let ostride = [od[1] * od[2], od[2], 1];
    let mut out = vec![0.0; od[0] * od[1] * od[2]];
    let ns = dims[axis];
    let mut prefix = vec![0.0; ns + 1];
    let axes: Vec<usize> = (0..3).filter(|&x| x != axis).collect();
    for i in 0..dims[axes[0]] {
        for j in 0..dims[axes[1]] {
            let base = i * stride[axes[0]] + j * stride[axes[1]];
            let obase = i * ostride[axes[0]] + j * ostride[axes[1]];
            for k in 0..ns {
                prefix[k + 1] = prefix[k] + data[base + k * stride[axis]];
            }
            for p in 0..od[axis] {
                let lo = (p + 1).saturating_sub(w);
                let hi = p.min(ns - 1);
                out[obase + p * ostride[axis]] = prefix[hi + 1] - prefix[lo];
            }
        }
    }
    (out, od)
}

fn box3_valid(data: &[f64], dims: [usize; 3], w: usize) -> Vec<f64> {
    let (t, d) = box_valid(data, dims, 0, w);
    let (t, d) = box_valid(&t, d, 1, w);
    box_valid(&t, d, 2, w).0
}

fn box3_adjoint(data: &[f64], dims_valid: [usize; 3], w: usize) -> Vec<f64> {
    let (t, d) = box_adjoint(data, dims_valid, 0, w);
    let (t, d) = box_adjoint(&t, d, 1, w);
    box_adjoint(&t, d, 2, w).0
}

fn ncc_local<T: Real>(a: &[T], b: &[T], dims: [usize; 3], w: usize, want_a: bool, want_b: bool) -> NccOutput {
    let af: Vec<f64> = a.iter().map(|v| v.to_f64_lossy()).collect();
    let bf: Vec<f64> = b.iter().map(|v| v.to_f64_lossy()).collect();
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let sa = box3_valid(&af, dims, w);
    let sb = box3_valid(&bf, dims, w);
    let saa = box3_valid(&sq(&af, &af), dims, w);
    let sbb = box3_valid(&sq(&bf, &bf), dims, w);
    let sab = box3_valid(&sq(&af, &bf), dims, w);
    let m = (w * w * w) as f64;
    let nw = sa.len();
    let vdims = [dims[0] - w + 1, dims[1] - w + 1, dims[2] - w + 1];
    let mut total = 0.0;
    // Per-window coefficients for the gradient.
    let mut inv_d = vec![0.0; if want_a || want_b { nw } else { 0 }];
    let mut ca = vec![0.0; if want_a { nw } else { 0 }];
    let mut cb = vec![0.0; if want_b { nw } else { 0 }];
    for i in 0..nw {
        let va = (saa[i] - sa[i] * sa[i] / m).max(0.0);
        let vb = (sbb[i] - sb[i] * sb[i] / m).max(0.0);
        let cov = sab[i] - sa[i] * sb[i] / m;
        let den = (va * vb + NCC_EPS).sqrt();
        total += cov / den;
        if want_a || want_b {
            inv_d[i] = 1.0 / den;
            let den3 = den * den * den;
            if want_b {
                cb[i] = cov * va / den3;
            }
            if want_a {
                ca[i] = cov * vb / den3;
            }
        }
    }
    let value = total / nw as f64;
    let scale = 1.0 / nw as f64;
    // d ncc_w / d b_i = (a_i - mean_a_w) / D_w - c_w (b_i - mean_b_w)
    let grad_for = |x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], c: &[f64]| -> Vec<f64> {
        let k_inv = box3_adjoint(&inv_d, vdims, w);
        let k_mx: Vec<f64> = (0..nw).map(|i| sx[i] / m * inv_d[i]).collect();
        let k_mx = box3_adjoint(&k_mx, vdims, w);
        let k_c = box3_adjoint(c, vdims, w);
        let k_cmy: Vec<f64> = (0..nw).map(|i| c[i] * sy[i] / m).collect();
        let k_cmy = box3_adjoint(&k_cmy, vdims, w);
        (0..x.len())
            .map(|i| scale * (x[i] * k_inv[i] - k_mx[i] - y[i] * k_c[i] + k_cmy[i]))
            .collect()
    };
    let grad_b = want_b.then(|| grad_for(&af, &bf, &sa, &sb, &cb));
    let grad_a = want_a.then(|| grad_for(&bf, &af, &sb, &sa, &ca));
    NccOutput { value, grad_a, grad_b }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_pair: f64,
    pub l_trans: f64,
    pub total: f64,
    pub alpha: f64,
}

/// `l_pair + alpha * l_trans`.
pub fn total_loss(l_pair: f64, l_trans: f64, alpha: f64) -> LossReport {
    LossReport { l_pair, l_trans, total: l_pair + alpha * l_trans, alpha }
}

/// Mean Euclidean distance between corresponding points (both in mm).
pub fn tre(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("TRE over zero points".into()));
    }
    let s: f64 = a.iter().zip(b).map(|(p, q)| dist(*p, *q)).sum();
    Ok(s / a.len() as f64)
}

/// TRE divided by the physical diagonal `sqrt(w^2 + h^2 + d^2)`.
pub fn rtre(tre_mm: f64, dims_mm: [f64; 3]) -> f64 {
    tre_mm / norm(dims_mm)
}

pub fn norm(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dist(a: Point3, b: Point3) -> f64 {
    norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Per-pair evaluation record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tre_mm: f64,
    pub rtre: f64,
    /// Euclidean norm of the translation error; absent without ground truth.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub offset_mm: Option<f64>,
    pub seconds_per_pair: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn pair_loss_examples() {
        let q = [[1.0, 1.0, 1.0]];
        let qt = [[4.0, 5.0, 1.0]];
        let d = PointDisplacements::new(vec![[3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(l_pair(&d, &q, &qt).unwrap(), 0.0);
        let z = PointDisplacements::new(vec![[0.0; 3]]).unwrap();
        assert_eq!(l_pair(&z, &q, &qt).unwrap(), 25.0);
        assert!(l_pair(&z, &q, &[]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let r = total_loss(25.0, -1.0, 0.01);
        assert!((r.total - 24.99).abs() < 1e-12);
        assert_eq!(total_loss(3.0, 0.5, 0.0).total, 3.0);
        assert_eq!(DEFAULT_ALPHA, 0.01);
    }

    #[test]
    fn tre_examples() {
        let a = [[0.0; 3], [1.0, 1.0, 1.0]];
        assert_eq!(tre(&a, &a).unwrap(), 0.0);
        let b = [[1.0, 2.0, 2.0], [2.0, 3.0, 3.0]];
        assert!((tre(&a, &b).unwrap() - 3.0).abs() < 1e-12);
        assert!((tre(&[[0.0; 3]], &[[3.0, 4.0, 0.0]]).unwrap() - 5.0).abs() < 1e-12);
        assert!(tre(&[], &[]).is_err());
    }

    #[test]
    fn rtre_example() {
        assert_eq!(rtre(0.0, [128.0; 3]), 0.0);
        assert!((rtre(3.0, [128.0; 3]) - 0.013532).abs() < 1e-5);
    }

    #[test]
    fn global_ncc_identities() {
        let a = noise(1000, 1);
        let dims = [10, 10, 10];
        let g = NccWindow::Global;
        assert!((ncc_slices(&a, &a, dims, g).unwrap() - 1.0).abs() < 1e-6);
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 7.0).collect();
        assert!((ncc_slices(&a, &b, dims, g).unwrap() - 1.0).abs() < 1e-6);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((ncc_slices(&a, &c, dims, g).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn local_ncc_matches_direct_window_loop() {
        let dims = [6, 7, 8];
        let n = 6 * 7 * 8;
        let a = noise(n, 5);
        let b: Vec<f64> = noise(n, 9).iter().zip(&a).map(|(x, y)| x + 0.5 * y).collect();
        let w = 3;
        let mut total = 0.0;
        let mut count = 0;
        for z in 0..=dims[0] - w {
            for y in 0..=dims[1] - w {
                for x in 0..=dims[2] - w {
                    let idx: Vec<usize> = (0..w * w * w)
                        .map(|k| ((z + k / 9) * 7 + y + (k / 3) % 3) * 8 + x + k % 3)
                        .collect();
                    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / 27.0;
                    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / 27.0;
                    let cov: f64 = idx.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum();
                    let va: f64 = idx.iter().map(|&i| (a[i] - ma).powi(2)).sum();
                    let vb: f64 = idx.iter().map(|&i| (b[i] - mb).powi(2)).sum();
                    total += cov / (va * vb + NCC_EPS).sqrt();
                    count += 1;
                }
            }
        }
        let want = total / count as f64;
        let got = ncc_slices(&a, &b, dims, NccWindow::Local(3)).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn zero_variance_windows_are_finite() {
        let dims = [9, 9, 9];
        let a = vec![0.0f64; 729];
        let b = noise(729, 2);
        let v = ncc_slices(&a, &b, dims, NccWindow::Local(3)).unwrap();
        assert!(v.is_finite() && v.abs() < 1e-6);
        let g = ncc_slices(&a, &b, dims, NccWindow::Global).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn even_window_and_shape_mismatch_rejected() {
        let a = vec![0.0f64; 64];
        assert!(ncc_slices(&a, &a, [4, 4, 4], NccWindow::Local(2)).is_err());
        assert!(ncc_slices(&a, &a[..63], [4, 4, 4], NccWindow::Global).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let dims = [5, 6, 7];
        let n = 210;
        let a = noise(n, 3);
        let b: Vec<f64> = noise(n, 4).iter().zip(&a).map(|(x, y)| 0.3 * x + y).collect();
        for window in [NccWindow::Global, NccWindow::Local(3)] {
            let (_, ga, gb) = ncc_with_grad(&a, &b, dims, window, true, true).unwrap();
            let (ga, gb) = (ga.unwrap(), gb.unwrap());
            for &i in &[0usize, 17, 100, 209] {
                let h = 1e-6;
                let mut bp = b.clone();
                bp[i] += h;
                let mut bm = b.clone();
                bm[i] -= h;
                let fd = (ncc_slices(&a, &bp, dims, window).unwrap() - ncc_slices(&a, &bm, dims, window).unwrap()) / (2.0 * h);
                assert!((fd - gb[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{window:?} b[{i}]: {fd} vs {}", gb[i]);
                let mut ap = a.clone();
                ap[i] += h;
                let mut am = a.clone();
                am[i] -= h;
                let fd = (ncc_slices(&ap, &b, dims, window).unwrap() - ncc_slices(&am, &b, dims, window).unwrap()) / (2.0 * h);
                assert!((fd - ga[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{window:?} a[{i}]");
            }
        }
    }
}

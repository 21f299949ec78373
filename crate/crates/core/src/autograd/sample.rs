use alloc::vec::Vec;

use crate::real::Real;
use crate::Point3;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Sub-box of a feature grid along x, `[x0, x0 + width)`, used to keep
/// samples inside one half of a merged map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRegion {
    pub x0: usize,
    pub width: usize,
}

/// Eight flat spatial indices and weights.
pub(super) type Taps<T> = [(usize, T); 8];

/// Border-clamped trilinear taps at region-local point `p = (x, y, z)`.
pub(super) fn taps<T: Real>(dims: [usize; 3], region: SampleRegion, p: Point3) -> Taps<T> {
    let [d, h, w] = dims;
    assert!(region.width > 0 && region.x0 + region.width <= w, "sample: region outside grid");
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        let hi = (n - 1) as f64;
        let v = if v.is_finite() { v.clamp(0.0, hi) } else { 0.0 };
        let i0 = (v.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, v - i0 as f64)
    };
    let (x0, x1, fx) = axis(p[0], region.width);
    let (y0, y1, fy) = axis(p[1], h);
    let (z0, z1, fz) = axis(p[2], d);
    let mut out = [(0usize, T::zero()); 8];
    let mut n = 0;
    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                out[n] = ((zi * h + yi) * w + region.x0 + xi, T::of(wx * wy * wz));
                n += 1;
            }
        }
    }
    out
}

pub(super) fn forward<T: Real>(x: &[T], c: usize, taps: &[Taps<T>]) -> Vec<T> {
    let s = x.len() / c;
    let mut out = Vec::with_capacity(taps.len() * c);
    for t in taps {
        for ch in 0..c {
            let plane = &x[ch * s..(ch + 1) * s];
            out.push(t.iter().map(|&(i, wt)| wt * plane[i]).sum());
        }
    }
    out
}

pub(super) fn backward<T: Real>(g: &[T], c: usize, taps: &[Taps<T>], dx: &mut [T]) {
    let s = dx.len() / c;
    for (n, t) in taps.iter().enumerate() {
        for ch in 0..c {
            let gv = g[n * c + ch];
            for &(i, wt) in t {
                dx[ch * s + i] += wt * gv;
            }
        }
    }
}

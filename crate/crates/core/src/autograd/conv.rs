use alloc::vec;
use alloc::vec::Vec;

use crate::real::{gemm, Real};

/// Shape bookkeeping for a cubic-kernel 3-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, in_dims: [usize; 3]) -> Self {
        assert!(k > 0 && stride > 0, "conv: kernel and stride must be positive");
        let out = |n: usize| {
            assert!(n + 2 * pad >= k, "conv: input {n} smaller than kernel {k}");
            (n + 2 * pad - k) / stride + 1
        };
        Self { cin, cout, k, stride, pad, in_dims, out_dims: in_dims.map(out) }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }
}

#[inline]
fn src_index(o: usize, kk: usize, g: &ConvGeom, n: usize) -> Option<usize> {
    let i = (o * g.stride + kk) as isize - g.pad as isize;
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_len();
    let k = g.k;
    let mut cols = vec![T::zero(); g.rows() * p];
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..od {
                        let Some(iz) = src_index(oz, kz, g, d) else { continue };
                        for oy in 0..oh {
                            let Some(iy) = src_index(oy, ky, g, h) else { continue };
                            let src = &plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let base = (oz * oh + oy) * ow;
                            for ox in 0..ow {
                                if let Some(ix) = src_index(ox, kx, g, w) {
                                    dst[base + ox] = src[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_len();
    let k = g.k;
    let mut x = vec![T::zero(); g.cin * d * h * w];
    let mut row = 0;
    for c in 0..g.cin {
        let plane = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..od {
                        let Some(iz) = src_index(oz, kz, g, d) else { continue };
                        for oy in 0..oh {
                            let Some(iy) = src_index(oy, ky, g, h) else { continue };
                            let dst = &mut plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let base = (oz * oh + oy) * ow;
                            for ox in 0..ow {
                                if let Some(ix) = src_index(ox, kx, g, w) {
                                    dst[ix] += src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output and, when `keep_cols`, the unfolded input.
pub(super) fn forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom, keep_cols: bool) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let p = g.out_len();
    let mut out = vec![T::zero(); g.cout * p];
    gemm(false, false, g.cout, g.rows(), p, w, &cols, T::zero(), &mut out);
    (out, if keep_cols { cols } else { Vec::new() })
}

pub(super) fn backward_weight<T: Real>(dy: &[T], cols: &[T], g: &ConvGeom, dw: &mut [T]) {
    gemm(false, true, g.cout, g.out_len(), g.rows(), dy, cols, T::one(), dw);
}

pub(super) fn backward_input<T: Real>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_len();
    let mut dcols = vec![T::zero(); g.rows() * p];
    gemm(true, false, g.rows(), g.cout, p, w, dy, T::zero(), &mut dcols);
    col2im(&dcols, g)
}

//! Translation-only rigid transforms, pull-based trilinear warping and
//! landmark transport.

use alloc::format;
use alloc::vec::Vec;

use crate::augment::AugmentSpec;
use crate::real::Real;
use crate::volume::Volume;
use crate::{Error, Point3, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Homogeneous 4x4 transform whose linear block is fixed to the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    translation: Point3,
}

impl RigidTransform {
    pub fn from_translation(t: Point3) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self { translation: t })
    }

    pub fn identity() -> Self {
        Self { translation: [0.0; 3] }
    }

    /// Rejects anything other than `[[I, t], [0, 1]]`.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        for (r, row) in m.iter().enumerate().take(3) {
            for (c, &v) in row.iter().enumerate().take(3) {
                if v != if r == c { 1.0 } else { 0.0 } {
                    return Err(Error::InvalidArgument(format!(
                        "linear block must be the identity (entry [{r}][{c}] = {v})"
                    )));
                }
            }
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument("last row must be (0, 0, 0, 1)".into()));
        }
        Self::from_translation([m[0][3], m[1][3], m[2][3]])
    }

    pub fn translation(&self) -> Point3 {
        self.translation
    }

    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let t = self.translation;
        [
            [1.0, 0.0, 0.0, t[0]],
            [0.0, 1.0, 0.0, t[1]],
            [0.0, 0.0, 1.0, t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let (a, b) = (self.translation, other.translation);
        RigidTransform { translation: [a[0] + b[0], a[1] + b[1], a[2] + b[2]] }
    }

    /// `x_a = M x` for every point.
    pub fn apply(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        let t = self.translation;
        points
            .iter()
            .map(|p| {
                if p.iter().any(|c| !c.is_finite()) {
                    Err(Error::NonFinite("point".into()))
                } else {
                    Ok([p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                }
            })
            .collect()
    }
}

pub fn apply_transform(m: &RigidTransform, points: &[Point3]) -> Result<Vec<Point3>> {
    m.apply(points)
}

/// Per-query displacement `x_t - x`, in voxel units, same order as the queries.
#[derive(Clone, Debug, PartialEq)]
pub struct PointDisplacements {
    offsets: Vec<Point3>,
}

impl PointDisplacements {
    pub fn new(offsets: Vec<Point3>) -> Result<Self> {
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacements".into()));
        }
        Ok(Self { offsets })
    }

    /// Displacements `targets - queries`.
    pub fn between(queries: &[Point3], targets: &[Point3]) -> Result<Self> {
        if queries.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!("{} queries vs {} targets", queries.len(), targets.len())));
        }
        Self::new(
            queries
                .iter()
                .zip(targets)
                .map(|(q, t)| [t[0] - q[0], t[1] - q[1], t[2] - q[2]])
                .collect(),
        )
    }

    pub fn offsets(&self) -> &[Point3] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Component-wise arithmetic mean; `None` for an empty set.
    pub fn mean(&self) -> Option<Point3> {
        if self.offsets.is_empty() {
            return None;
        }
        let mut s = [0.0; 3];
        for o in &self.offsets {
            for a in 0..3 {
                s[a] += o[a];
            }
        }
        let n = self.offsets.len() as f64;
        Some([s[0] / n, s[1] / n, s[2] / n])
    }
}

/// Per-axis integer base offset and fractional weight for sampling at `v - t`.
#[inline]
fn split_shift(t: f64) -> (i64, f64) {
    let s = -t;
    let b = s.floor();
    (b as i64, s - b)
}

/// Pull warp of a `(z, y, x)` grid: `out(v) = src(v - t)`, zero padded.
pub(crate) fn warp_translate_slice<T: Real>(src: &[T], dims: [usize; 3], t: Point3) -> Vec<T> {
    let [d, h, w] = dims;
    let (bx, fx) = split_shift(t[0]);
    let (by, fy) = split_shift(t[1]);
    let (bz, fz) = split_shift(t[2]);
    let wx = [T::one() - T::of(fx), T::of(fx)];
    let wy = [T::one() - T::of(fy), T::of(fy)];
    let wz = [T::one() - T::of(fz), T::of(fz)];
    let mut out = alloc::vec![T::zero(); src.len()];
    for z in 0..d {
        for y in 0..h {
            let row = (z * h + y) * w;
            for (k, &wk) in wz.iter().enumerate() {
                let sz = z as i64 + bz + k as i64;
                if sz < 0 || sz >= d as i64 || wk == T::zero() {
                    continue;
                }
                for (j, &wj) in wy.iter().enumerate() {
                    let sy = y as i64 + by + j as i64;
                    if sy < 0 || sy >= h as i64 || wj == T::zero() {
                        continue;
                    }
                    let wyz = wj * wk;
                    let srow = (sz as usize * h + sy as usize) * w;
                    for (i, &wi) in wx.iter().enumerate() {
                        if wi == T::zero() {
                            continue;
                        }
                        let wgt = wyz * wi;
                        let off = bx + i as i64;
                        // x range with 0 <= x + off < w
                        let lo = (-off).max(0) as usize;
                        let hi = ((w as i64 - off).min(w as i64)).max(0) as usize;
                        for x in lo..hi {
                            out[row + x] += wgt * src[srow + (x as i64 + off) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `sum_v g(v) * out(v)` with respect to `t`, where
/// `out = warp_translate_slice(src, dims, t)`. Accumulated in f64.
pub(crate) fn warp_translate_grad<T: Real>(src: &[T], dims: [usize; 3], t: Point3, g: &[T]) -> Point3 {
    let [d, h, w] = dims;
    let (bx, fx) = split_shift(t[0]);
    let (by, fy) = split_shift(t[1]);
    let (bz, fz) = split_shift(t[2]);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let wz = [1.0 - fz, fz];
    // d weight / d frac for corner 0 and 1; d frac / d t = -1.
    let dw = [-1.0, 1.0];
    let at = |x: i64, y: i64, z: i64| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= w as i64 || y >= h as i64 || z >= d as i64 {
            0.0
        } else {
            src[(z as usize * h + y as usize) * w + x as usize].to_f64_lossy()
        }
    };
    let mut grad = [0.0f64; 3];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let gv = g[(z * h + y) * w + x].to_f64_lossy();
                if gv == 0.0 {
                    continue;
                }
                let (x0, y0, z0) = (x as i64 + bx, y as i64 + by, z as i64 + bz);
                let mut dx = 0.0;
                let mut dy = 0.0;
                let mut dz = 0.0;
                for k in 0..2 {
                    for j in 0..2 {
                        for i in 0..2 {
                            let c = at(x0 + i as i64, y0 + j as i64, z0 + k as i64);
                            if c == 0.0 {
                                continue;
                            }
                            dx += dw[i] * wy[j] * wz[k] * c;
                            dy += wx[i] * dw[j] * wz[k] * c;
                            dz += wx[i] * wy[j] * dw[k] * c;
                        }
                    }
                }
                grad[0] -= gv * dx;
                grad[1] -= gv * dy;
                grad[2] -= gv * dz;
            }
        }
    }
    grad
}

/// Pull warp by a voxel-unit translation `t = (tx, ty, tz)`: output voxel `v`
/// takes the trilinear sample of `vol` at `v - t`; samples outside are zero.
pub fn warp_translate(vol: &Volume, t: Point3) -> Result<Volume> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("translation".into()));
    }
    let data = warp_translate_slice(vol.data(), vol.dims(), t);
    Ok(Volume::from_parts_unchecked(vol.dims(), vol.spacing(), vol.origin(), data))
}

/// Moves points exactly as `spec` moves the voxels of a volume with extents
/// `dims_xyz`, so that sampling the augmented volume at the returned points
/// reproduces the original intensities at `pts`.
pub fn transform_landmarks(spec: &AugmentSpec, dims_xyz: [usize; 3], pts: &[Point3]) -> Result<Vec<Point3>> {
    spec.validate(dims_xyz)?;
    Ok(pts.iter().map(|p| spec.kind.forward_point(*p, dims_xyz)).collect())
}

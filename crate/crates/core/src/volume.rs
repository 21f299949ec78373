//! The scalar volume type and its resampling operations.
//!
//! Storage is `(z, y, x)` with `x` varying fastest. Spacing and origin follow
//! the storage order `(z, y, x)`; continuous voxel coordinates and world
//! points handed to the public API are `(x, y, z)`. Voxel `(0, 0, 0)` sits at
//! `origin`, i.e. the origin is the centre of the first voxel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::{Error, Point3, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    /// Builds a volume, enforcing positive spacing, finite intensities and at
    /// least two voxels along every axis.
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        validate_grid(dims, spacing)?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite origin {origin:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "dims {dims:?} need {n} voxels, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume data (voxel {i})")));
        }
        Ok(Self { dims, spacing, origin, data })
    }

    /// Unit spacing, zero origin.
    pub fn from_data(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3], data)
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::from_data(dims, vec![0.0; dims[0] * dims[1] * dims[2]])
    }

    /// Fills a unit-spacing volume from `f(x, y, z)` evaluated at voxel centres.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::from_data(dims, data)
    }

    /// Same grid, new intensities.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn with_geometry(mut self, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        validate_grid(self.dims, spacing)?;
        self.spacing = spacing;
        self.origin = origin;
        Ok(self)
    }

    pub(crate) fn from_parts_unchecked(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, spacing, origin, data }
    }

    /// `(depth, height, width)` = `(z, y, x)` extents.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Extents in point order `(x, y, z)`.
    pub fn dims_xyz(&self) -> [usize; 3] {
        [self.dims[2], self.dims[1], self.dims[0]]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Trilinear sample at a continuous voxel coordinate with zero padding.
    pub fn sample(&self, p: Point3) -> f32 {
        trilinear(&self.data, self.dims, p)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let n = self.dims_xyz();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= (n[a] - 1) as f64)
    }

    /// Spacing in point order `(sx, sy, sz)`.
    pub fn spacing_xyz(&self) -> [f64; 3] {
        [self.spacing[2], self.spacing[1], self.spacing[0]]
    }

    pub fn origin_xyz(&self) -> [f64; 3] {
        [self.origin[2], self.origin[1], self.origin[0]]
    }

    pub fn voxel_to_world(&self, p: Point3) -> Point3 {
        let (s, o) = (self.spacing_xyz(), self.origin_xyz());
        [o[0] + s[0] * p[0], o[1] + s[1] * p[1], o[2] + s[2] * p[2]]
    }

    pub fn world_to_voxel(&self, w: Point3) -> Point3 {
        let (s, o) = (self.spacing_xyz(), self.origin_xyz());
        [(w[0] - o[0]) / s[0], (w[1] - o[1]) / s[1], (w[2] - o[2]) / s[2]]
    }

    /// World coordinate of the geometric centre, `(x, y, z)`.
    pub fn center_world(&self) -> Point3 {
        let n = self.dims_xyz();
        self.voxel_to_world([
            (n[0] - 1) as f64 / 2.0,
            (n[1] - 1) as f64 / 2.0,
            (n[2] - 1) as f64 / 2.0,
        ])
    }

    /// Physical extent `dims * spacing` in `(x, y, z)` order (mm).
    pub fn extent_mm(&self) -> [f64; 3] {
        let (n, s) = (self.dims_xyz(), self.spacing_xyz());
        [n[0] as f64 * s[0], n[1] as f64 * s[1], n[2] as f64 * s[2]]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn validate_grid(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidVolume(format!("every dimension must be >= 2, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

/// Trilinear interpolation of a `(z, y, x)` grid at point `p = (x, y, z)`.
///
/// Corners falling outside the grid contribute zero, so the interpolant is
/// continuous across the boundary and vanishes one voxel beyond it.
#[inline]
pub(crate) fn trilinear<T: Real>(data: &[T], dims: [usize; 3], p: Point3) -> T {
    let [d, h, w] = dims;
    let fx = p[0].floor();
    let fy = p[1].floor();
    let fz = p[2].floor();
    if !(fx.is_finite() && fy.is_finite() && fz.is_finite()) {
        return T::zero();
    }
    let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
    if x0 < -1 || y0 < -1 || z0 < -1 || x0 >= w as i64 || y0 >= h as i64 || z0 >= d as i64 {
        return T::zero();
    }
    let tx = T::of(p[0] - fx);
    let ty = T::of(p[1] - fy);
    let tz = T::of(p[2] - fz);
    let one = T::one();
    let at = |x: i64, y: i64, z: i64| -> T {
        if x < 0 || y < 0 || z < 0 || x >= w as i64 || y >= h as i64 || z >= d as i64 {
            T::zero()
        } else {
            data[((z as usize) * h + y as usize) * w + x as usize]
        }
    };
    let c00 = at(x0, y0, z0) * (one - tx) + at(x0 + 1, y0, z0) * tx;
    let c10 = at(x0, y0 + 1, z0) * (one - tx) + at(x0 + 1, y0 + 1, z0) * tx;
    let c01 = at(x0, y0, z0 + 1) * (one - tx) + at(x0 + 1, y0, z0 + 1) * tx;
    let c11 = at(x0, y0 + 1, z0 + 1) * (one - tx) + at(x0 + 1, y0 + 1, z0 + 1) * tx;
    let c0 = c00 * (one - ty) + c10 * ty;
    let c1 = c01 * (one - ty) + c11 * ty;
    c0 * (one - tz) + c1 * tz
}

/// Resamples `vol` onto an arbitrary grid by world coordinates.
pub fn resample_onto(vol: &Volume, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Volume> {
    validate_grid(dims, spacing)?;
    let src_s = vol.spacing_xyz();
    let src_o = vol.origin_xyz();
    let dst_s = [spacing[2], spacing[1], spacing[0]];
    let dst_o = [origin[2], origin[1], origin[0]];
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let v = [x as f64, y as f64, z as f64];
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = (dst_o[a] + dst_s[a] * v[a] - src_o[a]) / src_s[a];
                }
                data.push(vol.sample(p));
            }
        }
    }
    Ok(Volume::from_parts_unchecked(dims, spacing, origin, data))
}

/// Resamples onto a grid of `target_dims` / `target_spacing` (both `(z, y, x)`)
/// sharing the physical centre of `vol`.
pub fn resample_to_reference(vol: &Volume, target_dims: [usize; 3], target_spacing: [f64; 3]) -> Result<Volume> {
    validate_grid(target_dims, target_spacing)?;
    let c = vol.center_world();
    let cz = [c[2], c[1], c[0]];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        origin[a] = cz[a] - target_spacing[a] * (target_dims[a] - 1) as f64 / 2.0;
    }
    resample_onto(vol, target_dims, target_spacing, origin)
}

/// Centre-crops the largest region with the aspect ratio of `target`
/// (`(z, y, x)`) and resizes it to `target` by trilinear interpolation.
///
/// Voxel footprints are preserved: output spacing is `spacing * crop / target`
/// and the physical centre is unchanged.
pub fn crop_resize(vol: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.iter().any(|&t| t < 2) {
        return Err(Error::InvalidArgument(format!("crop target must be >= 2 per axis, got {target:?}")));
    }
    let dims = vol.dims();
    let k = (0..3).map(|a| dims[a] as f64 / target[a] as f64).fold(f64::INFINITY, f64::min);
    let mut ratio = [0.0; 3];
    let mut start = [0.0; 3];
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        let crop = k * target[a] as f64;
        ratio[a] = crop / target[a] as f64;
        start[a] = (dims[a] as f64 - crop) / 2.0;
        spacing[a] = vol.spacing[a] * ratio[a];
        // Output voxel j samples source coordinate start + (j + 0.5) * ratio - 0.5.
        origin[a] = vol.origin[a] + vol.spacing[a] * (start[a] + 0.5 * ratio[a] - 0.5);
    }
    let mut data = Vec::with_capacity(target[0] * target[1] * target[2]);
    for z in 0..target[0] {
        let sz = start[0] + (z as f64 + 0.5) * ratio[0] - 0.5;
        for y in 0..target[1] {
            let sy = start[1] + (y as f64 + 0.5) * ratio[1] - 0.5;
            for x in 0..target[2] {
                let sx = start[2] + (x as f64 + 0.5) * ratio[2] - 0.5;
                data.push(vol.sample([sx, sy, sz]));
            }
        }
    }
    Ok(Volume::from_parts_unchecked(target, spacing, origin, data))
}

/// Min-max normalisation to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_min_max(vol: &Volume) -> Volume {
    let (lo, hi) = vol.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        vol.data.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; vol.len()]
    };
    Volume::from_parts_unchecked(vol.dims, vol.spacing, vol.origin, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, |x, y, z| (0.5 * x as f64 + 0.25 * y as f64 - 0.125 * z as f64 + 1.0) as f32).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Volume::new([1, 4, 4], [1.0; 3], [0.0; 3], vec![0.0; 16]).is_err());
        assert!(Volume::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0; 8]).is_err());
        assert!(Volume::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f32::NAN;
        assert!(matches!(Volume::from_data([2, 2, 2], d), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sampling_hits_grid_points_exactly() {
        let v = ramp([4, 5, 6]);
        assert_eq!(v.sample([3.0, 2.0, 1.0]), v.get(3, 2, 1));
        assert_eq!(v.sample([-1.0, 0.0, 0.0]), 0.0);
        // Half a voxel outside: blended with the zero pad.
        assert!((v.sample([-0.5, 0.0, 0.0]) - 0.5 * v.get(0, 0, 0)).abs() < 1e-6);
    }

    #[test]
    fn identity_resample() {
        let v = ramp([5, 6, 7]).with_geometry([2.0, 1.5, 0.5], [3.0, -1.0, 7.0]).unwrap();
        let r = resample_to_reference(&v, v.dims(), v.spacing()).unwrap();
        assert_eq!(r.dims(), v.dims());
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        for a in 0..3 {
            assert!((r.origin()[a] - v.origin()[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_volume_resamples_to_constant_inside_support() {
        let v = Volume::from_fn([6, 6, 6], |_, _, _| 3.5).unwrap();
        let r = resample_to_reference(&v, [9, 9, 9], [0.5, 0.5, 0.5]).unwrap();
        for &x in r.data() {
            assert!((x - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn ramp_upsampling_matches_closed_form() {
        let v = ramp([8, 8, 8]);
        let r = resample_to_reference(&v, [16, 16, 16], [0.5, 0.5, 0.5]).unwrap();
        // Output grid covers source coordinates -0.25 .. 7.25 in steps of 0.5.
        for z in 1..15 {
            for y in 1..15 {
                for x in 1..15 {
                    let (sx, sy, sz) = (-0.25 + 0.5 * x as f64, -0.25 + 0.5 * y as f64, -0.25 + 0.5 * z as f64);
                    let want = 0.5 * sx + 0.25 * sy - 0.125 * sz + 1.0;
                    assert!((r.get(x, y, z) as f64 - want).abs() < 1e-5, "({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn crop_resize_identity_and_metadata() {
        let v = ramp([6, 6, 6]);
        let r = crop_resize(&v, [6, 6, 6]).unwrap();
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let big = Volume::zeros([64, 64, 64]).unwrap();
        let small = crop_resize(&big, [32, 32, 32]).unwrap();
        assert_eq!(small.dims(), [32, 32, 32]);
        assert_eq!(small.spacing(), [2.0, 2.0, 2.0]);
    }

    #[test]
    fn crop_resize_keeps_impulse_and_centre() {
        let mut data = vec![0.0f32; 17 * 17 * 17];
        data[(8 * 17 + 8) * 17 + 8] = 1.0;
        let v = Volume::from_data([17, 17, 17], data).unwrap();
        let r = crop_resize(&v, [9, 9, 9]).unwrap();
        let (imax, _) = r.data().iter().enumerate().fold((0, f32::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        let (x, y, z) = (imax % 9, (imax / 9) % 9, imax / 81);
        for c in [x, y, z] {
            assert!((c as i64 - 4).abs() <= 1);
        }
        let (cv, cr) = (v.center_world(), r.center_world());
        for a in 0..3 {
            assert!((cv[a] - cr[a]).abs() <= 0.5 * r.spacing_xyz()[a]);
        }
    }

    #[test]
    fn crop_resize_anisotropic_input_takes_centered_cube() {
        let v = Volume::from_fn([4, 8, 8], |x, _, _| x as f32).unwrap();
        let r = crop_resize(&v, [4, 4, 4]).unwrap();
        // Central 4 columns of 8 are kept, so x runs 2..=5.
        assert!((r.get(0, 0, 0) - 2.0).abs() < 1e-6);
        assert!((r.get(3, 0, 0) - 5.0).abs() < 1e-6);
        assert_eq!(r.spacing(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalize_maps_to_unit_range() {
        let v = ramp([3, 3, 3]);
        let n = normalize_min_max(&v);
        let (lo, hi) = n.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
        let c = normalize_min_max(&Volume::zeros([2, 2, 2]).unwrap());
        assert!(c.data().iter().all(|&x| x == 0.0));
    }
}

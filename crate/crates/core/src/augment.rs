//! Landmark-consistent spatial augmentation: translation, scaling, flipping
//! and coordinate-axis swapping.
//!
//! Every augmentation is a spatial map `forward` on voxel coordinates. Volumes
//! are resampled by pulling through `inverse`, landmarks are pushed through
//! `forward`, so `augmented(forward(p)) == original(p)`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::geometry::{transform_landmarks, warp_translate};
use crate::landmarks::{in_bounds, retain_pairs, LandmarkSet};
use crate::volume::Volume;
use crate::{Error, Point3, Result};

pub const SCALE_RANGE: (f64, f64) = (0.8, 1.25);
/// Largest per-axis shift as a fraction of the extent.
pub const MAX_SHIFT_FRACTION: f64 = 0.25;
/// Minimum fraction of the volume that must stay in frame after a shift.
pub const MIN_RETAINED_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AugmentKind {
    Identity,
    /// Content moves by `shift` voxels `(x, y, z)`.
    Translate { shift: Point3 },
    /// Isotropic scaling about the volume centre.
    Scale { factor: f64 },
    /// Index reversal along point axis 0 = x, 1 = y, 2 = z.
    Flip { axis: usize },
    /// Output axis `i` takes input axis `perm[i]`.
    AxisSwap { perm: [usize; 3] },
}

impl AugmentKind {
    /// Extents `(x, y, z)` after the map.
    pub fn output_dims(&self, dims_xyz: [usize; 3]) -> [usize; 3] {
        match *self {
            AugmentKind::AxisSwap { perm } => [dims_xyz[perm[0]], dims_xyz[perm[1]], dims_xyz[perm[2]]],
            _ => dims_xyz,
        }
    }

    pub fn forward_point(&self, p: Point3, dims_xyz: [usize; 3]) -> Point3 {
        match *self {
            AugmentKind::Identity => p,
            AugmentKind::Translate { shift } => [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]],
            AugmentKind::Scale { factor } => {
                let c = center(dims_xyz);
                [
                    c[0] + factor * (p[0] - c[0]),
                    c[1] + factor * (p[1] - c[1]),
                    c[2] + factor * (p[2] - c[2]),
                ]
            }
            AugmentKind::Flip { axis } => {
                let mut q = p;
                q[axis] = (dims_xyz[axis] - 1) as f64 - p[axis];
                q
            }
            AugmentKind::AxisSwap { perm } => [p[perm[0]], p[perm[1]], p[perm[2]]],
        }
    }

    /// Maps a point of the augmented grid back to the source grid.
    pub fn inverse_point(&self, q: Point3, dims_xyz: [usize; 3]) -> Point3 {
        match *self {
            AugmentKind::Identity => q,
            AugmentKind::Translate { shift } => [q[0] - shift[0], q[1] - shift[1], q[2] - shift[2]],
            AugmentKind::Scale { factor } => {
                let c = center(dims_xyz);
                [
                    c[0] + (q[0] - c[0]) / factor,
                    c[1] + (q[1] - c[1]) / factor,
                    c[2] + (q[2] - c[2]) / factor,
                ]
            }
            AugmentKind::Flip { .. } => self.forward_point(q, dims_xyz),
            AugmentKind::AxisSwap { perm } => {
                let mut p = [0.0; 3];
                for i in 0..3 {
                    p[perm[i]] = q[i];
                }
                p
            }
        }
    }
}

fn center(dims_xyz: [usize; 3]) -> Point3 {
    [
        (dims_xyz[0] - 1) as f64 / 2.0,
        (dims_xyz[1] - 1) as f64 / 2.0,
        (dims_xyz[2] - 1) as f64 / 2.0,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    /// Seed the parameters were drawn from; 0 for hand-built specs.
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(kind: AugmentKind) -> Self {
        Self { kind, seed: 0 }
    }

    pub fn identity() -> Self {
        Self::new(AugmentKind::Identity)
    }

    /// Draws the augmentation determined by `seed` for a volume of extents
    /// `dims_xyz`. Kind is uniform over the four families; parameters are
    /// uniform over their ranges.
    pub fn from_seed(seed: u64, dims_xyz: [usize; 3]) -> Self {
        let mut rng = Pcg64::seed_from_u64(seed);
        let kind = match rng.random_range(0..4u32) {
            0 => loop {
                let mut shift = [0.0; 3];
                for a in 0..3 {
                    let m = MAX_SHIFT_FRACTION * dims_xyz[a] as f64;
                    shift[a] = rng.random_range(-m..=m);
                }
                if retained_fraction(shift, dims_xyz) >= MIN_RETAINED_FRACTION {
                    break AugmentKind::Translate { shift };
                }
            },
            1 => AugmentKind::Scale { factor: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1) },
            2 => AugmentKind::Flip { axis: rng.random_range(0..3usize) },
            _ => {
                const PERMS: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                AugmentKind::AxisSwap { perm: PERMS[rng.random_range(0..PERMS.len())] }
            }
        };
        Self { kind, seed }
    }

    pub fn validate(&self, dims_xyz: [usize; 3]) -> Result<()> {
        match self.kind {
            AugmentKind::Identity => Ok(()),
            AugmentKind::Translate { shift } => {
                if shift.iter().any(|s| !s.is_finite()) {
                    return Err(Error::NonFinite("augmentation shift".into()));
                }
                for a in 0..3 {
                    if shift[a].abs() > MAX_SHIFT_FRACTION * dims_xyz[a] as f64 + 1e-9 {
                        return Err(Error::InvalidArgument(format!("shift {shift:?} exceeds range")));
                    }
                }
                if retained_fraction(shift, dims_xyz) < MIN_RETAINED_FRACTION {
                    return Err(Error::InvalidArgument(format!("shift {shift:?} leaves too little in frame")));
                }
                Ok(())
            }
            AugmentKind::Scale { factor } => {
                if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&factor) {
                    return Err(Error::InvalidArgument(format!("scale factor {factor} outside {SCALE_RANGE:?}")));
                }
                Ok(())
            }
            AugmentKind::Flip { axis } => {
                if axis > 2 {
                    return Err(Error::InvalidArgument(format!("flip axis {axis}")));
                }
                Ok(())
            }
            AugmentKind::AxisSwap { perm } => {
                let mut seen = [false; 3];
                for &p in &perm {
                    if p > 2 || seen[p] {
                        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation")));
                    }
                    seen[p] = true;
                }
                Ok(())
            }
        }
    }
}

fn retained_fraction(shift: Point3, dims_xyz: [usize; 3]) -> f64 {
    (0..3).map(|a| (1.0 - shift[a].abs() / dims_xyz[a] as f64).max(0.0)).product()
}

/// Draws one augmentation from `rng`.
pub fn sample_spec<R: Rng + ?Sized>(rng: &mut R, dims_xyz: [usize; 3]) -> AugmentSpec {
    AugmentSpec::from_seed(rng.next_u64(), dims_xyz)
}

/// Resamples a volume through the augmentation's spatial map.
pub fn transform_volume(spec: &AugmentSpec, vol: &Volume) -> Result<Volume> {
    let n = vol.dims_xyz();
    spec.validate(n)?;
    match spec.kind {
        AugmentKind::Identity => Ok(vol.clone()),
        AugmentKind::Translate { shift } => warp_translate(vol, shift),
        AugmentKind::Scale { .. } => {
            let mut data = Vec::with_capacity(vol.len());
            for z in 0..n[2] {
                for y in 0..n[1] {
                    for x in 0..n[0] {
                        let p = spec.kind.inverse_point([x as f64, y as f64, z as f64], n);
                        data.push(vol.sample(p));
                    }
                }
            }
            vol.with_data(data)
        }
        AugmentKind::Flip { .. } | AugmentKind::AxisSwap { .. } => {
            let out = spec.kind.output_dims(n);
            let mut data = Vec::with_capacity(vol.len());
            for z in 0..out[2] {
                for y in 0..out[1] {
                    for x in 0..out[0] {
                        let p = spec.kind.inverse_point([x as f64, y as f64, z as f64], n);
                        data.push(vol.get(p[0] as usize, p[1] as usize, p[2] as usize));
                    }
                }
            }
            let (s, o) = (vol.spacing_xyz(), vol.origin_xyz());
            let (mut sp, mut or) = (vol.spacing(), vol.origin());
            if let AugmentKind::AxisSwap { perm } = spec.kind {
                // (z, y, x) storage order of the permuted point axes.
                sp = [s[perm[2]], s[perm[1]], s[perm[0]]];
                or = [o[perm[2]], o[perm[1]], o[perm[0]]];
            }
            Volume::new([out[2], out[1], out[0]], sp, or, data)
        }
    }
}

/// An augmented training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub reference: Volume,
    pub search: Volume,
    pub q: LandmarkSet,
    pub q_t: LandmarkSet,
}

/// Applies the same spatial map to both volumes and transports both landmark
/// sets; pairs with either point leaving its frame are dropped together.
pub fn augment_pair(
    reference: &Volume,
    search: &Volume,
    q: &LandmarkSet,
    q_t: &LandmarkSet,
    spec: &AugmentSpec,
) -> Result<AugmentedPair> {
    if !q.same_names(q_t) {
        return Err(Error::ShapeMismatch("paired landmark sets must share names in order".into()));
    }
    if spec.kind == AugmentKind::Identity {
        return Ok(AugmentedPair {
            reference: reference.clone(),
            search: search.clone(),
            q: q.clone(),
            q_t: q_t.clone(),
        });
    }
    let (nr, ns) = (reference.dims_xyz(), search.dims_xyz());
    let r = transform_volume(spec, reference)?;
    let s = transform_volume(spec, search)?;
    let qa = q.with_points(transform_landmarks(spec, nr, q.points())?)?;
    let qb = q_t.with_points(transform_landmarks(spec, ns, q_t.points())?)?;
    let (nr2, ns2) = (r.dims_xyz(), s.dims_xyz());
    let (qa, qb) = retain_pairs(&qa, &qb, |i| in_bounds(qa.points()[i], nr2) && in_bounds(qb.points()[i], ns2))?;
    if qa.is_empty() {
        return Err(Error::TooFewLandmarks(0, 1));
    }
    Ok(AugmentedPair { reference: r, search: s, q: qa, q_t: qb })
}

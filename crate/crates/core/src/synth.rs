//! Synthetic local-global matching pairs with known translations, and the
//! exhaustive NCC translation search used as a reference solution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::landmarks::{retain_pairs, LandmarkSet};
use crate::metrics::NCC_EPS;
use crate::volume::Volume;
use crate::{Error, Point3, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Fewest landmark pairs a generated pair may carry.
pub const MIN_LANDMARK_PAIRS: usize = 3;
/// Scores closer than this are treated as ties by the exhaustive search.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPairSpec {
    /// Side of the cubic reference volume.
    pub side: usize,
    pub n_blobs: usize,
    /// Side of the cubic search sub-volume.
    pub crop_side: usize,
    /// Displacement of the extraction window from the centred position, `(x, y, z)` voxels.
    pub true_shift: Point3,
    /// Gaussian noise, in units of the reference intensity range.
    pub noise_sigma: f64,
    /// Exponent of the intensity remap applied to the search volume.
    pub modality_gamma: f64,
    pub seed: u64,
}

impl Default for SyntheticPairSpec {
    fn default() -> Self {
        Self {
            side: 64,
            n_blobs: 8,
            crop_side: 48,
            true_shift: [0.0; 3],
            noise_sigma: 0.0,
            modality_gamma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticPairSpec {
    /// Extraction-window position when `true_shift` is zero.
    pub fn centered_offset(&self) -> f64 {
        (self.side as f64 - self.crop_side as f64) / 2.0
    }

    /// Corner of the search window inside the reference, `(x, y, z)`.
    pub fn extraction_offset(&self) -> Point3 {
        let c = self.centered_offset();
        [c + self.true_shift[0], c + self.true_shift[1], c + self.true_shift[2]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_side < 2 || self.crop_side > self.side {
            return Err(Error::InvalidArgument(format!(
                "crop side {} must lie in [2, side = {}]",
                self.crop_side, self.side
            )));
        }
        if self.n_blobs < MIN_LANDMARK_PAIRS {
            return Err(Error::InvalidArgument(format!(
                "n_blobs = {} cannot yield {MIN_LANDMARK_PAIRS} landmarks",
                self.n_blobs
            )));
        }
        let c = self.centered_offset();
        for (a, s) in self.true_shift.iter().enumerate() {
            if !s.is_finite() || s.abs() > c + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "shift {s} on axis {a} moves the {}-voxel window outside the {}-voxel reference",
                    self.crop_side, self.side
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        if !(self.modality_gamma > 0.0 && self.modality_gamma.is_finite()) {
            return Err(Error::InvalidArgument("modality_gamma must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub reference: Volume,
    pub search: Volume,
    /// Landmarks in reference voxel coordinates.
    pub q: LandmarkSet,
    /// The same landmarks in search voxel coordinates.
    pub q_t: LandmarkSet,
    pub true_shift: Point3,
    pub extraction_offset: Point3,
}

struct Blob {
    center: Point3,
    sigma: f64,
    amplitude: f64,
}

struct Wave {
    k: Point3,
    phase: f64,
    amplitude: f64,
}

/// Generates a reference phantom (Gaussian blobs over a plane-wave texture)
/// and a search sub-volume extracted at `centred offset + true_shift`.
///
/// The search volume's origin is the *centred* window position, so world
/// coordinates alone do not reveal the shift.
pub fn gen_pair(spec: &SyntheticPairSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let side = spec.side;
    // blob centres (the landmarks) lie in the nominal crop window, which does
    // not depend on the shift
    let margin = (spec.crop_side as f64 * 0.0625).max(1.0);
    let lo = spec.centered_offset() + margin;
    let hi = spec.centered_offset() + spec.crop_side as f64 - 1.0 - margin;
    let blobs: Vec<Blob> = (0..spec.n_blobs)
        .map(|_| Blob {
            center: [
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
            ],
            sigma: rng.random_range(0.03..=0.07) * side as f64,
            amplitude: rng.random_range(0.5..=1.0),
        })
        .collect();
    let waves: Vec<Wave> = (0..6)
        .map(|_| {
            let dir = unit_vector(&mut rng);
            let wavelength = rng.random_range(0.15..=0.4) * side as f64;
            let k = core::f64::consts::TAU / wavelength;
            Wave {
                k: [dir[0] * k, dir[1] * k, dir[2] * k],
                phase: rng.random_range(0.0..core::f64::consts::TAU),
                amplitude: rng.random_range(0.04..=0.1),
            }
        })
        .collect();
    let reference = Volume::from_fn([side; 3], |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let mut v = 0.2;
        for w in &waves {
            v += w.amplitude * (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).sin();
        }
        for b in &blobs {
            let d2 = (p[0] - b.center[0]).powi(2) + (p[1] - b.center[1]).powi(2) + (p[2] - b.center[2]).powi(2);
            v += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        v as f32
    })?;

    let o = spec.extraction_offset();
    let crop = spec.crop_side;
    let integral = o.iter().all(|v| v.fract() == 0.0);
    let mut data = Vec::with_capacity(crop * crop * crop);
    for z in 0..crop {
        for y in 0..crop {
            for x in 0..crop {
                data.push(if integral {
                    reference.get(x + o[0] as usize, y + o[1] as usize, z + o[2] as usize)
                } else {
                    reference.sample([x as f64 + o[0], y as f64 + o[1], z as f64 + o[2]])
                });
            }
        }
    }
    if spec.modality_gamma != 1.0 || spec.noise_sigma > 0.0 {
        let (lo, hi) = reference.min_max();
        let range = (hi - lo).max(f32::MIN_POSITIVE) as f64;
        for v in data.iter_mut() {
            let u = ((*v - lo) as f64 / range).clamp(0.0, 1.0);
            let n: f64 = if spec.noise_sigma > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
            *v = (lo as f64 + range * (u.powf(spec.modality_gamma) + spec.noise_sigma * n)) as f32;
        }
    }
    let c = spec.centered_offset();
    let sp = reference.spacing();
    let ro = reference.origin();
    let search = Volume::new([crop; 3], sp, [ro[0] + sp[0] * c, ro[1] + sp[1] * c, ro[2] + sp[2] * c], data)?;

    let names: Vec<String> = (0..blobs.len()).map(|i| format!("blob_{i:02}")).collect();
    let q_pts: Vec<Point3> = blobs.iter().map(|b| b.center).collect();
    let qt_pts: Vec<Point3> = q_pts.iter().map(|p| [p[0] - o[0], p[1] - o[1], p[2] - o[2]]).collect();
    let q = LandmarkSet::new(names.clone(), q_pts)?;
    let q_t = LandmarkSet::new(names, qt_pts)?;
    let dims = search.dims_xyz();
    let (q, q_t) = retain_pairs(&q, &q_t, |i| crate::landmarks::in_bounds(q_t.points()[i], dims))?;
    if q.len() < MIN_LANDMARK_PAIRS {
        return Err(Error::TooFewLandmarks(q.len(), MIN_LANDMARK_PAIRS));
    }
    Ok(SyntheticPair { reference, search, q, q_t, true_shift: spec.true_shift, extraction_offset: o })
}

fn unit_vector(rng: &mut Pcg64) -> Point3 {
    loop {
        let v: Point3 = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Global NCC between `search` and the reference region it overlaps when
/// placed at integer `offset`; `None` for an empty overlap.
pub fn overlap_ncc(reference: &Volume, search: &Volume, offset: [i64; 3]) -> Option<f64> {
    let nr = reference.dims_xyz();
    let ns = search.dims_xyz();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = (-offset[a]).max(0);
        let h = (ns[a] as i64).min(nr[a] as i64 - offset[a]);
        if h <= l {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let (rd, sd) = (reference.data(), search.data());
    let (mut sr, mut ss, mut srr, mut sss, mut srs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            let srow = (z * ns[1] + y) * ns[0];
            let rrow = ((z as i64 + offset[2]) as usize * nr[1] + (y as i64 + offset[1]) as usize) * nr[0];
            let rx0 = (lo[0] as i64 + offset[0]) as usize;
            let len = hi[0] - lo[0];
            let rs = &rd[rrow + rx0..rrow + rx0 + len];
            let s = &sd[srow + lo[0]..srow + lo[0] + len];
            let (mut a, mut b, mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (&r, &v) in rs.iter().zip(s) {
                let (r, v) = (r as f64, v as f64);
                a += r;
                b += v;
                aa += r * r;
                bb += v * v;
                ab += r * v;
            }
            sr += a;
            ss += b;
            srr += aa;
            sss += bb;
            srs += ab;
        }
    }
    let n = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as f64;
    let cov = srs - sr * ss / n;
    let vr = (srr - sr * sr / n).max(0.0);
    let vs = (sss - ss * ss / n).max(0.0);
    Some(cov / (vr * vs + NCC_EPS).sqrt())
}

/// Exhaustive integer translation search.
///
/// Returns the offset `o = (x, y, z)` maximising the NCC between `search` and
/// `reference[o .. o + dims(search)]`, scanning every offset within `range`
/// voxels of the centred placement `floor((dims(ref) - dims(search)) / 2)`.
/// Offsets whose overlap is empty are skipped. Ties resolve to the
/// lexicographically smallest `(x, y, z)`.
pub fn brute_force_translation(reference: &Volume, search: &Volume, range: usize) -> Result<[i64; 3]> {
    let nr = reference.dims_xyz();
    let ns = search.dims_xyz();
    let r = range as i64;
    let c: [i64; 3] = core::array::from_fn(|a| (nr[a] as i64 - ns[a] as i64).div_euclid(2));
    let mut best: Option<(f64, [i64; 3])> = None;
    for ox in c[0] - r..=c[0] + r {
        for oy in c[1] - r..=c[1] + r {
            for oz in c[2] - r..=c[2] + r {
                let o = [ox, oy, oz];
                if let Some(score) = overlap_ncc(reference, search, o) {
                    match best {
                        Some((b, _)) if score <= b + TIE_TOLERANCE => {}
                        _ => best = Some((score, o)),
                    }
                }
            }
        }
    }
    best.map(|(_, o)| o)
        .ok_or_else(|| Error::InvalidArgument("no offset in range overlaps the reference".into()))
}

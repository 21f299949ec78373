use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Point3, Result};

/// Named points in continuous voxel coordinates `(x, y, z)` of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    names: Vec<String>,
    points: Vec<Point3>,
}

impl LandmarkSet {
    pub fn new(names: Vec<String>, points: Vec<Point3>) -> Result<Self> {
        if names.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} points",
                names.len(),
                points.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateName(n.clone()));
            }
        }
        for (n, p) in names.iter().zip(&points) {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("landmark `{n}`")));
            }
        }
        Ok(Self { names, points })
    }

    /// Names `p0`, `p1`, ... for anonymous query points.
    pub fn anonymous(points: Vec<Point3>) -> Result<Self> {
        let names = (0..points.len()).map(|i| format!("p{i}")).collect();
        Self::new(names, points)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fails on the first point outside `[0, n - 1]` per axis; `dims_xyz` is
    /// `(width, height, depth)`.
    pub fn check_bounds(&self, dims_xyz: [usize; 3]) -> Result<()> {
        for (n, p) in self.names.iter().zip(&self.points) {
            if !in_bounds(*p, dims_xyz) {
                return Err(Error::OutOfBounds { name: n.clone() });
            }
        }
        Ok(())
    }

    pub fn same_names(&self, other: &LandmarkSet) -> bool {
        self.names == other.names
    }

    pub fn with_points(&self, points: Vec<Point3>) -> Result<Self> {
        Self::new(self.names.clone(), points)
    }
}

pub fn in_bounds(p: Point3, dims_xyz: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (dims_xyz[a] - 1) as f64)
}

/// Keeps the pairs for which `keep(i)` holds, in both sets.
pub fn retain_pairs(
    a: &LandmarkSet,
    b: &LandmarkSet,
    mut keep: impl FnMut(usize) -> bool,
) -> Result<(LandmarkSet, LandmarkSet)> {
    if !a.same_names(b) {
        return Err(Error::ShapeMismatch("paired landmark sets must share names in order".into()));
    }
    let mut names = Vec::new();
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for i in 0..a.len() {
        if keep(i) {
            names.push(a.names[i].clone());
            pa.push(a.points[i]);
            pb.push(b.points[i]);
        }
    }
    Ok((LandmarkSet::new(names.clone(), pa)?, LandmarkSet::new(names, pb)?))
}

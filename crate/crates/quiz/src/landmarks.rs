//! Landmark CSV files with the header `name,x,y,z`.

use std::path::Path;

use quiz_core::LandmarkSet;

use crate::error::{format_err, Result};

/// Formats with nine significant digits, trimming trailing zeros.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let dec = (8 - mag).clamp(0, 17) as usize;
    let s = format!("{v:.dec$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn save_landmarks(set: &LandmarkSet, path: &Path) -> Result<()> {
    let err = |e: csv::Error| format_err(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["name", "x", "y", "z"]).map_err(err)?;
    for (name, p) in set.names().iter().zip(set.points()) {
        w.write_record([name.clone(), sig9(p[0]), sig9(p[1]), sig9(p[2])]).map_err(err)?;
    }
    w.flush().map_err(|e| format_err(path, e.to_string()))
}

/// Reads a landmark file; with `bounds_xyz`, every point must lie inside
/// `[0, dim - 1]` on each axis.
pub fn load_landmarks(path: &Path, bounds_xyz: Option<[usize; 3]>) -> Result<LandmarkSet> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "x", "y", "z"] {
        return Err(format_err(path, format!("expected header name,x,y,z, found {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let (mut names, mut points) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        if rec.len() != 4 {
            return Err(format_err(path, format!("line {line}: expected 4 fields, found {}", rec.len())));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = rec[k + 1]
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {line}: bad coordinate {:?}", &rec[k + 1])))?;
        }
        names.push(rec[0].to_string());
        points.push(p);
    }
    let set = LandmarkSet::new(names, points).map_err(|e| format_err(path, e.to_string()))?;
    if let Some(b) = bounds_xyz {
        set.check_bounds(b).map_err(|e| format_err(path, e.to_string()))?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(12.345678912345), "12.3456789");
        assert_eq!(sig9(-0.5), "-0.5");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(123456789.4), "123456789");
    }
}

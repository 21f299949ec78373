//! Dataset layout: `<root>/pairs/<id>/{ref.qvol, search.qvol, q.csv, q_t.csv, meta.json}`
//! (each `.qvol` header with its `.raw` payload).

use std::fs;
use std::path::{Path, PathBuf};

use quiz_core::synth::{gen_pair, SyntheticPair, SyntheticPairSpec};
use quiz_core::train::{prepare_pair, Sample};
use quiz_core::{LandmarkSet, Point3, Volume};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, IoContext, Result};
use crate::landmarks::{load_landmarks, save_landmarks};
use crate::qvol::{load_volume, save_volume};

/// Ground truth and provenance of a pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    /// Generator settings, for synthetic pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticPairSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_shift: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_offset: Option<Point3>,
    /// World-space displacement (mm, `(x, y, z)`) carrying a reference point
    /// onto its match in the search volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_mm: Option<Point3>,
}

/// A pair as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub reference: Volume,
    pub search: Volume,
    pub q: LandmarkSet,
    pub q_t: LandmarkSet,
    pub meta: PairMeta,
}

impl Pair {
    pub fn from_synthetic(id: impl Into<String>, p: SyntheticPair, spec: &SyntheticPairSpec) -> Self {
        let s = p.reference.spacing_xyz();
        let translation_mm = Some([0, 1, 2].map(|k| -p.true_shift[k] * s[k]));
        let meta = PairMeta {
            spec: Some(spec.clone()),
            true_shift: Some(p.true_shift),
            extraction_offset: Some(p.extraction_offset),
            translation_mm,
        };
        Self { id: id.into(), reference: p.reference, search: p.search, q: p.q, q_t: p.q_t, meta }
    }

    /// The pair in the model frame.
    pub fn prepare(&self, input_size: usize) -> Result<Sample> {
        Ok(prepare_pair(&self.reference, &self.search, &self.q, &self.q_t, input_size)?)
    }
}

pub fn pairs_dir(root: &Path) -> PathBuf {
    root.join("pairs")
}

pub fn save_pair(root: &Path, pair: &Pair) -> Result<()> {
    let dir = pairs_dir(root).join(&pair.id);
    fs::create_dir_all(&dir).at(&dir)?;
    save_volume(&pair.reference, &dir.join("ref.qvol"))?;
    save_volume(&pair.search, &dir.join("search.qvol"))?;
    save_landmarks(&pair.q, &dir.join("q.csv"))?;
    save_landmarks(&pair.q_t, &dir.join("q_t.csv"))?;
    let meta = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&pair.meta).map_err(|e| format_err(&meta, e.to_string()))?;
    fs::write(&meta, json).at(&meta)
}

/// Loads one pair directory. A missing `meta.json` yields empty metadata.
pub fn load_pair(dir: &Path) -> Result<Pair> {
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let reference = load_volume(&dir.join("ref.qvol"))?;
    let search = load_volume(&dir.join("search.qvol"))?;
    let q = load_landmarks(&dir.join("q.csv"), Some(reference.dims_xyz()))?;
    let q_t = load_landmarks(&dir.join("q_t.csv"), Some(search.dims_xyz()))?;
    if !q.same_names(&q_t) {
        return Err(format_err(dir, "q.csv and q_t.csv list different landmark names"));
    }
    let mp = dir.join("meta.json");
    let meta = if mp.exists() {
        let text = fs::read_to_string(&mp).at(&mp)?;
        serde_json::from_str(&text).map_err(|e| format_err(&mp, e.to_string()))?
    } else {
        PairMeta::default()
    };
    Ok(Pair { id, reference, search, q, q_t, meta })
}

/// Sorted pair ids under `root/pairs`; an error when there are none.
pub fn list_pairs(root: &Path) -> Result<Vec<String>> {
    let dir = pairs_dir(root);
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("no dataset at {}: missing {}", root.display(), dir.display())));
    }
    let mut ids = Vec::new();
    for e in fs::read_dir(&dir).at(&dir)? {
        let e = e.at(&dir)?;
        if e.path().join("ref.qvol").is_file() {
            ids.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no pairs found in {}", dir.display())));
    }
    Ok(ids)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Pair>> {
    list_pairs(root)?.iter().map(|id| load_pair(&pairs_dir(root).join(id))).collect()
}

/// Settings for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub side: usize,
    pub crop_side: usize,
    pub n_blobs: usize,
    /// Integer shifts are drawn uniformly from `[-max_shift, max_shift]` per axis.
    pub max_shift: i64,
    pub noise_sigma: f64,
    pub modality_gamma: f64,
    /// Index of the first pair, so disjoint sets can share a seed.
    pub first_index: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        let s = SyntheticPairSpec::default();
        Self {
            n: 20,
            seed: 0,
            side: s.side,
            crop_side: s.crop_side,
            n_blobs: s.n_blobs,
            max_shift: 8,
            noise_sigma: 0.0,
            modality_gamma: 1.0,
            first_index: 0,
        }
    }
}

const MAX_ATTEMPTS: u64 = 64;

/// Generates pairs in memory; pair `i` depends only on `(seed, i)`.
pub fn synth_pairs(opts: &SynthOptions) -> Result<Vec<Pair>> {
    (opts.first_index..opts.first_index + opts.n).map(|i| synth_one(opts, i)).collect()
}

fn synth_one(opts: &SynthOptions, i: usize) -> Result<Pair> {
    let base = opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
    let mut rng = Pcg64::seed_from_u64(base);
    let m = opts.max_shift;
    let shift = [0; 3].map(|_: i32| rng.random_range(-m..=m) as f64);
    let mut last = None;
    // a draw whose landmarks mostly leave the crop is redrawn with a derived seed
    for attempt in 0..MAX_ATTEMPTS {
        let spec = SyntheticPairSpec {
            side: opts.side,
            n_blobs: opts.n_blobs,
            crop_side: opts.crop_side,
            true_shift: shift,
            noise_sigma: opts.noise_sigma,
            modality_gamma: opts.modality_gamma,
            seed: base.wrapping_add(attempt.wrapping_mul(0x5851_F42D_4C95_7F2D)),
        };
        match gen_pair(&spec) {
            Ok(p) => return Ok(Pair::from_synthetic(format!("pair_{i:04}"), p, &spec)),
            Err(e @ quiz_core::Error::TooFewLandmarks(..)) => last = Some(e),
            Err(e) => return Err(e.into()),
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Generates and writes a dataset; returns the pair ids.
pub fn synth_dataset(root: &Path, opts: &SynthOptions) -> Result<Vec<String>> {
    let pairs = synth_pairs(opts)?;
    for p in &pairs {
        save_pair(root, p)?;
    }
    Ok(pairs.into_iter().map(|p| p.id).collect())
}

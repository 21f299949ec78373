//! Evaluation over a dataset: recovered translation, offset error against
//! the stored ground truth, and landmark TRE / rTRE.

use std::path::Path;
use std::time::Instant;

use quiz_core::metrics::{mean_std, norm, rtre, tre, MetricsReport};
use quiz_core::synth::brute_force_translation;
use quiz_core::train::Sample;
use quiz_core::{Point3, QuizModel};
use serde::{Deserialize, Serialize};

use crate::dataset::Pair;
use crate::error::Result;

/// Produces per-landmark displacements in model-frame voxels for `sample.q`.
pub trait Predictor {
    fn displacements(&self, pair: &Pair, sample: &Sample) -> Result<Vec<Point3>>;
}

pub struct ModelPredictor<'a>(pub &'a QuizModel<f32>);

impl Predictor for ModelPredictor<'_> {
    fn displacements(&self, _: &Pair, s: &Sample) -> Result<Vec<Point3>> {
        Ok(self.0.predict(&s.reference, &s.search, s.q.points())?.offsets().to_vec())
    }
}

/// Always predicts no motion.
pub struct ZeroPredictor;

impl Predictor for ZeroPredictor {
    fn displacements(&self, _: &Pair, s: &Sample) -> Result<Vec<Point3>> {
        Ok(vec![[0.0; 3]; s.q.len()])
    }
}

/// Returns the annotated correspondences.
pub struct PerfectPredictor;

impl Predictor for PerfectPredictor {
    fn displacements(&self, _: &Pair, s: &Sample) -> Result<Vec<Point3>> {
        Ok(s.target_displacements())
    }
}

/// Exhaustive integer search maximizing global NCC on the raw volumes.
pub struct OraclePredictor {
    pub range: usize,
}

impl Predictor for OraclePredictor {
    fn displacements(&self, pair: &Pair, s: &Sample) -> Result<Vec<Point3>> {
        let o = brute_force_translation(&pair.reference, &pair.search, self.range)?;
        let o = o.map(|v| v as f64);
        Ok(pair
            .q
            .points()
            .iter()
            .zip(s.q.points())
            .map(|(raw, m)| {
                let hit = [raw[0] - o[0], raw[1] - o[1], raw[2] - o[2]];
                let w = s.reference.world_to_voxel(pair.search.voxel_to_world(hit));
                [w[0] - m[0], w[1] - m[1], w[2] - m[2]]
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub predicted_translation_mm: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_translation_mm: Option<Point3>,
    /// Per-axis error of the recovered translation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_axes_mm: Option<Point3>,
    /// TRE of the identity transform, for comparison.
    pub baseline_tre_mm: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_pairs: usize,
    /// `mean(std)` strings, population std.
    pub tre_mm: String,
    pub rtre: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_mm: Option<String>,
    pub seconds_per_pair: String,
    pub mean_tre_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_offset_mm: Option<f64>,
    /// Fraction of pairs whose TRE beats the identity transform.
    pub improved_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairRecord>,
    pub summary: EvalSummary,
}

pub fn mean_std_string(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.3}({s:.3})")
}

/// Seconds are reported as zero when `timed` is false, so that reports are
/// reproducible byte for byte.
pub fn evaluate(pairs: &[Pair], predictor: &dyn Predictor, input_size: usize, timed: bool) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let start = Instant::now();
        let sample = pair.prepare(input_size)?;
        let d = predictor.displacements(pair, &sample)?;
        let t = quiz_core::model::reduce_mean_displacement(&quiz_core::PointDisplacements::new(d)?)?;
        let seconds = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
        let sp = sample.reference.spacing_xyz();
        let mm = |p: &Point3| [p[0] * sp[0], p[1] * sp[1], p[2] * sp[2]];
        let target: Vec<Point3> = sample.q_t.points().iter().map(mm).collect();
        let moved: Vec<Point3> =
            sample.q.points().iter().map(|p| mm(&[p[0] + t[0], p[1] + t[1], p[2] + t[2]])).collect();
        let still: Vec<Point3> = sample.q.points().iter().map(mm).collect();
        let tre_mm = tre(&moved, &target)?;
        let baseline_tre_mm = tre(&still, &target)?;
        let predicted = mm(&t);
        let truth = pair.meta.translation_mm;
        let axes = truth.map(|g| [predicted[0] - g[0], predicted[1] - g[1], predicted[2] - g[2]]);
        let metrics = MetricsReport {
            tre_mm,
            rtre: rtre(tre_mm, pair.reference.extent_mm()),
            offset_mm: axes.map(norm),
            seconds_per_pair: seconds,
        };
        records.push(PairRecord {
            id: pair.id.clone(),
            predicted_translation_mm: predicted,
            true_translation_mm: truth,
            offset_axes_mm: axes,
            baseline_tre_mm,
            metrics,
        });
    }
    Ok(EvalReport { summary: summarize(&records), pairs: records })
}

fn summarize(records: &[PairRecord]) -> EvalSummary {
    let col = |f: &dyn Fn(&PairRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let tres = col(&|r| r.metrics.tre_mm);
    let offsets: Vec<f64> = records.iter().filter_map(|r| r.metrics.offset_mm).collect();
    let improved = records.iter().filter(|r| r.metrics.tre_mm < r.baseline_tre_mm).count();
    let n = records.len().max(1) as f64;
    EvalSummary {
        n_pairs: records.len(),
        tre_mm: mean_std_string(&tres),
        rtre: mean_std_string(&col(&|r| r.metrics.rtre)),
        offset_mm: (!offsets.is_empty()).then(|| mean_std_string(&offsets)),
        seconds_per_pair: mean_std_string(&col(&|r| r.metrics.seconds_per_pair)),
        mean_tre_mm: mean_std(&tres).0,
        mean_offset_mm: (!offsets.is_empty()).then(|| mean_std(&offsets).0),
        improved_fraction: improved as f64 / n,
    }
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| crate::error::format_err(path, e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|source| crate::Error::Io { path: path.to_path_buf(), source })
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|source| crate::Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| crate::error::format_err(path, e.to_string()))
}

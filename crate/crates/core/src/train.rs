//! Two-stage training: the pair loss alone, then the pair loss plus the
//! similarity of the reset search volume to the reference.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, sample_spec};
use crate::autograd::{Graph, Var};
use crate::landmarks::LandmarkSet;
use crate::metrics::{NccWindow, DEFAULT_ALPHA};
use crate::model::{volume_tensor, Bound, ModelConfig, QuizModel};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::volume::{crop_resize, normalize_min_max, resample_onto, Volume};
use crate::{Error, Point3, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub dataset_dir: String,
    /// Probability that a drawn pair is augmented.
    pub augment_prob: f64,
    pub ncc_window: NccWindow,
    /// Number of training pairs in the fixed probe batch.
    pub probe_size: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 2,
            alpha: DEFAULT_ALPHA,
            stage1_iters: 1400,
            stage2_iters: 600,
            seed: 0,
            checkpoint_every: 500,
            dataset_dir: "data".into(),
            augment_prob: 0.5,
            ncc_window: NccWindow::Global,
            probe_size: 4,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad(format!("augment_prob must lie in [0, 1], got {}", self.augment_prob));
        }
        self.model.validate()
    }

    pub fn total_iters(&self) -> usize {
        self.stage1_iters + self.stage2_iters
    }

    /// Stage (1 or 2) of a zero-based iteration.
    pub fn stage_of(&self, iteration: usize) -> u8 {
        if iteration < self.stage1_iters {
            1
        } else {
            2
        }
    }
}

/// A pair in the model frame: both volumes share one cubic grid, and `q`,
/// `q_t` are voxel coordinates on that grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub reference: Volume,
    pub search: Volume,
    pub q: LandmarkSet,
    pub q_t: LandmarkSet,
}

impl Sample {
    pub fn new(reference: Volume, search: Volume, q: LandmarkSet, q_t: LandmarkSet) -> Result<Self> {
        let d = reference.dims();
        if d[0] != d[1] || d[1] != d[2] || search.dims() != d {
            return Err(Error::ShapeMismatch(format!(
                "model-frame volumes must share one cube, got {:?} and {:?}",
                d,
                search.dims()
            )));
        }
        if q.is_empty() || !q.same_names(&q_t) {
            return Err(Error::InvalidArgument("a sample needs matching, non-empty landmark sets".into()));
        }
        Ok(Self { reference, search, q, q_t })
    }

    /// `q_t - q` for every landmark.
    pub fn target_displacements(&self) -> Vec<Point3> {
        self.q
            .points()
            .iter()
            .zip(self.q_t.points())
            .map(|(a, b)| [b[0] - a[0], b[1] - a[1], b[2] - a[2]])
            .collect()
    }
}

/// Brings a raw pair into the model frame.
///
/// Both volumes are min-max normalized; the reference is centre-cropped and
/// resized to `input_size` cubed if needed; the search volume is resampled
/// onto that grid by world position (zero outside its field of view), and
/// both landmark sets are mapped through world coordinates.
pub fn prepare_pair(
    reference: &Volume,
    search: &Volume,
    q: &LandmarkSet,
    q_t: &LandmarkSet,
    input_size: usize,
) -> Result<Sample> {
    let target = [input_size; 3];
    let r = normalize_min_max(reference);
    let r = if r.dims() == target { r } else { crop_resize(&r, target)? };
    let s = normalize_min_max(search);
    let s = resample_onto(&s, r.dims(), r.spacing(), r.origin())?;
    let qm: Vec<Point3> = q.points().iter().map(|&p| r.world_to_voxel(reference.voxel_to_world(p))).collect();
    let qtm: Vec<Point3> = q_t.points().iter().map(|&p| r.world_to_voxel(search.voxel_to_world(p))).collect();
    Sample::new(r, s, q.with_points(qm)?, q_t.with_points(qtm)?)
}

/// Losses of one optimizer step, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub stage: u8,
    pub l_pair: f64,
    /// `-NCC` of the reset search volume; absent in stage 1.
    pub l_trans: Option<f64>,
    pub total: f64,
    pub batch: Vec<usize>,
}

struct SampleLoss {
    loss: Var,
    l_pair: f64,
    l_trans: Option<f64>,
}

fn sample_loss(
    model: &QuizModel<f32>,
    g: &mut Graph<f32>,
    b: &Bound,
    s: &Sample,
    stage: u8,
    alpha: f64,
    window: NccWindow,
) -> Result<SampleLoss> {
    let r = g.constant(volume_tensor(&s.reference));
    let sv = g.constant(volume_tensor(&s.search));
    let fm = model.encode_graph(g, b, r, sv)?;
    let pred = model.quiz_graph(g, b, fm, s.q.points())?;
    let lp = g.pair_loss(pred, &s.target_displacements());
    let l_pair = g.value(lp).data()[0] as f64;
    if stage == 1 {
        return Ok(SampleLoss { loss: lp, l_pair, l_trans: None });
    }
    let dims = s.reference.dims();
    let t = g.mean_rows(pred);
    let back = g.scale(t, -1.0);
    let src = g.constant(Tensor::new(&dims, s.search.data().to_vec())?);
    let warped = g.warp(src, back);
    let fixed = g.constant(Tensor::new(&dims, s.reference.data().to_vec())?);
    let ncc = g.ncc(fixed, warped, window)?;
    let l_trans = -(g.value(ncc).data()[0] as f64);
    let loss = g.weighted_sum(&[(lp, 1.0), (ncc, -(alpha as f32))]);
    Ok(SampleLoss { loss, l_pair, l_trans: Some(l_trans) })
}

/// Batch loss and per-parameter gradients (in `model.params()` order).
#[allow(clippy::type_complexity)]
pub fn loss_and_grads(
    model: &QuizModel<f32>,
    batch: &[&Sample],
    stage: u8,
    alpha: f64,
    window: NccWindow,
) -> Result<(f64, f64, Option<f64>, Vec<Option<Vec<f32>>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = Graph::<f32>::new();
    let b = model.bind(&mut g);
    let w = 1.0 / batch.len() as f32;
    let mut terms = Vec::with_capacity(batch.len());
    let (mut lp, mut lt) = (0.0, 0.0);
    for s in batch {
        let sl = sample_loss(model, &mut g, &b, s, stage, alpha, window)?;
        terms.push((sl.loss, w));
        lp += sl.l_pair;
        lt += sl.l_trans.unwrap_or(0.0);
    }
    let root = g.weighted_sum(&terms);
    let total = g.value(root).data()[0] as f64;
    let n = batch.len() as f64;
    let mut grads = g.backward(root);
    let gs = b.vars().iter().map(|&v| grads.take(v)).collect();
    Ok((total, lp / n, (stage == 2).then_some(lt / n), gs))
}

/// Mean pair loss of a model over samples, without augmentation.
pub fn pair_loss_on(model: &QuizModel<f32>, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut acc = 0.0;
    for s in samples {
        let d = model.predict(&s.reference, &s.search, s.q.points())?;
        acc += crate::metrics::l_pair(&d, s.q.points(), s.q_t.points())?;
    }
    Ok(acc / samples.len() as f64)
}

/// Optimizer state plus the sampling stream of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    model: QuizModel<f32>,
    opt: Adam,
    rng: Pcg64,
    iteration: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: QuizModel<f32>) -> Result<Self> {
        cfg.validate()?;
        if model.config() != &cfg.model {
            return Err(Error::InvalidConfig("model does not match the training configuration".into()));
        }
        let opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, model.params());
        let rng = Pcg64::seed_from_u64(cfg.seed ^ 0x7121_5eed);
        Ok(Self { cfg, model, opt, rng, iteration: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &QuizModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> QuizModel<f32> {
        self.model
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.total_iters()
    }

    /// Indices of the fixed probe batch.
    pub fn probe_ids(&self, n_samples: usize) -> Vec<usize> {
        (0..self.cfg.probe_size.min(n_samples)).collect()
    }

    /// Stage-1 loss of the current model on the probe batch.
    pub fn probe_loss(&self, data: &[Sample]) -> Result<f64> {
        let probe: Vec<&Sample> = self.probe_ids(data.len()).into_iter().map(|i| &data[i]).collect();
        pair_loss_on(&self.model, &probe)
    }

    /// Draws a batch, augments it, and applies one Adam update.
    pub fn step(&mut self, data: &[Sample]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let it = self.iteration;
        let stage = self.cfg.stage_of(it);
        let ids: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..data.len())).collect();
        let mut owned = Vec::with_capacity(ids.len());
        for &i in &ids {
            let s = &data[i];
            let aug = self.cfg.augment_prob > 0.0 && self.rng.random_bool(self.cfg.augment_prob);
            let spec = sample_spec(&mut self.rng, s.reference.dims_xyz());
            let drawn = if aug { augment_pair(&s.reference, &s.search, &s.q, &s.q_t, &spec).ok() } else { None };
            owned.push(match drawn {
                Some(a) => Sample::new(a.reference, a.search, a.q, a.q_t)?,
                None => s.clone(),
            });
        }
        let batch: Vec<&Sample> = owned.iter().collect();
        let alpha = if stage == 2 { self.cfg.alpha } else { 0.0 };
        let (total, l_pair, l_trans, grads) = loss_and_grads(&self.model, &batch, stage, alpha, self.cfg.ncc_window)?;
        let finite_grads = grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()));
        if !total.is_finite() || !finite_grads {
            return Err(Error::NonFiniteLoss { iteration: it, batch: ids });
        }
        self.opt.step(self.model.params_mut(), &grads)?;
        self.iteration += 1;
        Ok(StepReport { iteration: it, stage, l_pair, l_trans, total, batch: ids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_pair, SyntheticPairSpec};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            channels: 8,
            encoder_blocks: [1, 1, 1],
            tf_layers: 1,
            tf_heads: 2,
            tf_dim: 12,
            mlp_hidden: 16,
            corr_temperature: 10.0,
        }
    }

    fn tiny_sample(seed: u64, shift: Point3) -> Sample {
        let spec = SyntheticPairSpec { side: 24, crop_side: 16, n_blobs: 10, true_shift: shift, seed, ..Default::default() };
        let p = gen_pair(&spec).unwrap();
        prepare_pair(&p.reference, &p.search, &p.q, &p.q_t, 16).unwrap()
    }

    #[test]
    fn prepared_targets_are_minus_shift() {
        let shift = [2.0, -1.0, 3.0];
        let spec = SyntheticPairSpec { side: 64, crop_side: 48, n_blobs: 12, true_shift: shift, seed: 5, ..Default::default() };
        let p = gen_pair(&spec).unwrap();
        let s = prepare_pair(&p.reference, &p.search, &p.q, &p.q_t, 64).unwrap();
        for d in s.target_displacements() {
            for k in 0..3 {
                assert!((d[k] + shift[k]).abs() < 1e-9);
            }
        }
        // the search content sits at the reference position minus the shift,
        // up to the affine change from per-volume normalization
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for z in 20..30 {
            for y in 20..30 {
                for x in 20..30 {
                    a.push(s.reference.get(x, y, z));
                    b.push(s.search.get(x - 2, y + 1, z - 3));
                }
            }
        }
        let ncc = crate::metrics::ncc_slices(&a, &b, [10, 10, 10], NccWindow::Global).unwrap();
        assert!(ncc > 1.0 - 1e-6, "{ncc}");
    }

    #[test]
    fn config_checks_and_stages() {
        let c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.total_iters(), 2000);
        assert_eq!(c.stage_of(1399), 1);
        assert_eq!(c.stage_of(1400), 2);
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn steps_are_reproducible() {
        let data = vec![tiny_sample(1, [1.0, 0.0, -1.0]), tiny_sample(2, [0.0, 2.0, 1.0])];
        let cfg = TrainConfig {
            model: tiny_model(),
            stage1_iters: 2,
            stage2_iters: 2,
            lr: 1e-3,
            augment_prob: 0.5,
            ..Default::default()
        };
        let run = || {
            let m = QuizModel::new(cfg.model.clone(), 9).unwrap();
            let mut t = Trainer::new(cfg.clone(), m).unwrap();
            let mut log = Vec::new();
            while !t.is_done() {
                log.push(t.step(&data).unwrap());
            }
            (log, t.into_model().params().to_vec())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a[0].l_trans.is_none() && a[3].l_trans.is_some());
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let cfg = TrainConfig { model: tiny_model(), stage1_iters: 0, stage2_iters: 0, ..Default::default() };
        let m = QuizModel::new(cfg.model.clone(), 3).unwrap();
        let t = Trainer::new(cfg, m.clone()).unwrap();
        assert!(t.is_done());
        assert_eq!(t.into_model().params(), m.params());
    }

    #[test]
    fn every_parameter_gets_gradient_after_warmup() {
        let data = vec![tiny_sample(4, [1.0, -2.0, 0.0])];
        let cfg = TrainConfig { model: tiny_model(), lr: 1e-3, augment_prob: 0.0, ..Default::default() };
        let m = QuizModel::new(cfg.model.clone(), 11).unwrap();
        let mut t = Trainer::new(cfg, m).unwrap();
        for _ in 0..3 {
            t.step(&data).unwrap();
        }
        let batch = [&data[0]];
        let (_, _, _, grads) = loss_and_grads(t.model(), &batch, 1, 0.0, NccWindow::Global).unwrap();
        for (p, g) in t.model().params().iter().zip(&grads) {
            let s: f32 = g.as_ref().map(|g| g.iter().map(|v| v.abs()).sum()).unwrap_or(0.0);
            assert!(s > 0.0, "{} has no gradient", p.name);
        }
    }
}

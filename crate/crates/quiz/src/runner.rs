//! Training driver: dataset loading, CSV loss logs, probe tracking and
//! checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use quiz_core::train::{Sample, StepReport, TrainConfig, Trainer};
use quiz_core::QuizModel;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::dataset::{load_dataset, Pair};
use crate::error::{format_err, Error, IoContext, Result};

/// Which part of the schedule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    Both,
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub iterations: usize,
    pub probe_initial: f64,
    pub probe_final: f64,
}

struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let f = File::create(&path).at(&path)?;
        let mut c = Self { path, w: BufWriter::new(f) };
        c.line(header)?;
        Ok(c)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.w, "{s}").at(&self.path)
    }

    fn flush(&mut self) -> Result<()> {
        self.w.flush().at(&self.path)
    }
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    iteration: usize,
    batch_ids: Vec<&'a str>,
}

pub fn prepare_samples(pairs: &[Pair], input_size: usize) -> Result<Vec<Sample>> {
    pairs.iter().map(|p| p.prepare(input_size)).collect()
}

/// Trains on the dataset named in `cfg`, writing logs and checkpoints to `out_dir`.
pub fn run_training(
    cfg: &TrainConfig,
    out_dir: &Path,
    init: Option<QuizModel<f32>>,
    stages: Stages,
) -> Result<RunSummary> {
    let pairs = load_dataset(Path::new(&cfg.dataset_dir))?;
    let samples = prepare_samples(&pairs, cfg.model.input_size)?;
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    train_samples(cfg, &samples, &ids, out_dir, init, stages)
}

/// As [`run_training`] on samples already in the model frame.
pub fn train_samples(
    cfg: &TrainConfig,
    samples: &[Sample],
    ids: &[&str],
    out_dir: &Path,
    init: Option<QuizModel<f32>>,
    stages: Stages,
) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    match stages {
        Stages::Both => {}
        Stages::First => cfg.stage2_iters = 0,
        Stages::Second => cfg.stage1_iters = 0,
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let model = match init {
        Some(m) => {
            if m.config() != &cfg.model {
                return Err(Error::Core(quiz_core::Error::InvalidConfig(
                    "initial checkpoint does not match the model configuration".into(),
                )));
            }
            m
        }
        None => QuizModel::new(cfg.model.clone(), cfg.seed)?,
    };
    let cfg_path = out_dir.join("config.json");
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| format_err(&cfg_path, e.to_string()))?;
    fs::write(&cfg_path, json).at(&cfg_path)?;

    let mut trainer = Trainer::new(cfg.clone(), model)?;
    let mut s1 = (cfg.stage1_iters > 0).then(|| Csv::create(out_dir.join("stage1_loss.csv"), "iter,l_pair")).transpose()?;
    let mut s2 = (cfg.stage2_iters > 0)
        .then(|| Csv::create(out_dir.join("stage2_loss.csv"), "iter,l_pair,l_trans,total"))
        .transpose()?;
    let mut probe = Csv::create(out_dir.join("probe.csv"), "iter,l_pair")?;
    let probe_initial = trainer.probe_loss(samples)?;
    probe.line(&format!("0,{probe_initial}"))?;
    log::info!("probe l_pair at start: {probe_initial:.4}");

    while !trainer.is_done() {
        let r: StepReport = match trainer.step(samples) {
            Ok(r) => r,
            Err(quiz_core::Error::NonFiniteLoss { iteration, batch }) => {
                let names: Vec<&str> = batch.iter().map(|&i| ids.get(i).copied().unwrap_or("?")).collect();
                let dump = out_dir.join("nonfinite_batch.json");
                let body = serde_json::to_string_pretty(&NonFiniteDump { iteration, batch_ids: names.clone() })
                    .map_err(|e| format_err(&dump, e.to_string()))?;
                fs::write(&dump, body).at(&dump)?;
                return Err(Error::Dataset(format!(
                    "non-finite loss at iteration {iteration} on batch [{}]; details in {}",
                    names.join(", "),
                    dump.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        let done = r.iteration + 1;
        match (r.stage, r.l_trans) {
            (2, Some(lt)) => {
                if let Some(c) = s2.as_mut() {
                    c.line(&format!("{},{},{},{}", r.iteration, r.l_pair, lt, r.total))?;
                }
            }
            _ => {
                if let Some(c) = s1.as_mut() {
                    c.line(&format!("{},{}", r.iteration, r.l_pair))?;
                }
            }
        }
        if done % 50 == 0 {
            log::info!("iter {done} stage {} l_pair {:.4} total {:.4}", r.stage, r.l_pair, r.total);
        }
        let meta = Some(CheckpointMeta { iteration: done, stage: r.stage });
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save_checkpoint(trainer.model(), meta.clone(), &out_dir.join(format!("ckpt_{done:06}.qzck")))?;
        }
        if done == cfg.stage1_iters && cfg.stage1_iters > 0 {
            save_checkpoint(trainer.model(), meta, &out_dir.join("stage1.qzck"))?;
        }
    }
    for c in [s1.as_mut(), s2.as_mut()].into_iter().flatten() {
        c.flush()?;
    }
    let probe_final = trainer.probe_loss(samples)?;
    let iterations = trainer.iteration();
    probe.line(&format!("{iterations},{probe_final}"))?;
    probe.flush()?;
    log::info!("probe l_pair at end: {probe_final:.4}");
    let stage = if cfg.stage2_iters > 0 { 2 } else { 1 };
    let final_checkpoint = out_dir.join("final.qzck");
    save_checkpoint(trainer.model(), Some(CheckpointMeta { iteration: iterations, stage }), &final_checkpoint)?;
    Ok(RunSummary { final_checkpoint, iterations, probe_initial, probe_final })
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use quiz::checkpoint::load_checkpoint;
use quiz::config::{deterministic_mode, load_config};
use quiz::dataset::{load_dataset, synth_dataset, SynthOptions};
use quiz::eval::{evaluate, read_report, write_report, ModelPredictor, OraclePredictor, PerfectPredictor, Predictor, ZeroPredictor};
use quiz::landmarks::{load_landmarks, save_landmarks};
use quiz::plot::write_offset_plots;
use quiz::qvol::{load_volume, save_volume};
use quiz::runner::{run_training, Stages};
use quiz_core::geometry::warp_translate;
use quiz_core::train::{prepare_pair, TrainConfig};

#[derive(Parser)]
#[command(name = "quiz", version, about = "Query-point matching registration of 3-D volumes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic translated pairs.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a reference predictor) on a dataset.
    Eval(EvalArgs),
    /// Predict correspondences for a query CSV.
    Match(MatchArgs),
    /// Translate a volume by a voxel offset.
    Warp(WarpArgs),
    /// Write per-axis translation scatter data (CSV + SVG) from an eval report.
    PlotOffsets(PlotArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long = "crop_side", alias = "crop-side", default_value_t = 48)]
    crop_side: usize,
    #[arg(long = "n_blobs", alias = "n-blobs", default_value_t = 8)]
    n_blobs: usize,
    #[arg(long = "max_shift", alias = "max-shift", default_value_t = 8)]
    max_shift: i64,
    #[arg(long = "noise_sigma", alias = "noise-sigma", default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long = "modality_gamma", alias = "modality-gamma", default_value_t = 1.0)]
    modality_gamma: f64,
    /// Index of the first generated pair.
    #[arg(long = "first_index", alias = "first-index", default_value_t = 0)]
    first_index: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Both,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    stage: StageArg,
    /// Checkpoint to start from (required for `--stage 2`).
    #[arg(long, required_if_eq("stage", "2"))]
    init: Option<PathBuf>,
    #[arg(long = "dataset_dir", alias = "dataset-dir")]
    dataset_dir: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch_size", alias = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "stage1_iters", alias = "stage1-iters")]
    stage1_iters: Option<usize>,
    #[arg(long = "stage2_iters", alias = "stage2-iters")]
    stage2_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "checkpoint_every", alias = "checkpoint-every")]
    checkpoint_every: Option<usize>,
    #[arg(long = "augment_prob", alias = "augment-prob")]
    augment_prob: Option<f64>,
    #[arg(long = "probe_size", alias = "probe-size")]
    probe_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Model,
    Zero,
    Perfect,
    Oracle,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Report path (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    predictor: PredictorArg,
    /// Search radius for the oracle predictor, in voxels.
    #[arg(long = "oracle_range", alias = "oracle-range", default_value_t = 8)]
    oracle_range: usize,
    /// Model-frame cube side for non-model predictors.
    #[arg(long = "input_size", alias = "input-size", default_value_t = 64)]
    input_size: usize,
}

#[derive(clap::Args)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    search: PathBuf,
    /// Query CSV (`name,x,y,z`) in reference voxel coordinates.
    #[arg(long)]
    queries: PathBuf,
    /// Output CSV of matches in search voxel coordinates.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct WarpArgs {
    #[arg(long)]
    input: PathBuf,
    /// Translation `x,y,z` in voxels; output(v) = input(v - t).
    #[arg(long, allow_hyphen_values = true, value_parser = parse_triple)]
    t: [f64; 3],
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Evaluation report written by `quiz eval`.
    #[arg(long)]
    report: PathBuf,
    /// Output stem; `.csv` and `.svg` are appended.
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("bad number {p:?}"))?;
        if !o.is_finite() {
            return Err(format!("non-finite component {p:?}"));
        }
    }
    Ok(out)
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let opts = SynthOptions {
        n: a.n,
        seed: a.seed,
        side: a.side,
        crop_side: a.crop_side,
        n_blobs: a.n_blobs,
        max_shift: a.max_shift,
        noise_sigma: a.noise_sigma,
        modality_gamma: a.modality_gamma,
        first_index: a.first_index,
    };
    let ids = synth_dataset(&a.out, &opts)?;
    println!("wrote {} pairs to {}", ids.len(), a.out.join("pairs").display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    set!(dataset_dir, lr, batch_size, alpha, stage1_iters, stage2_iters, seed, checkpoint_every, augment_prob, probe_size);
    cfg.validate()?;
    let stages = match a.stage {
        StageArg::Both => Stages::Both,
        StageArg::One => Stages::First,
        StageArg::Two => Stages::Second,
    };
    let init = match &a.init {
        Some(p) => Some(load_checkpoint(p)?.0),
        None => None,
    };
    if let Some(m) = &init {
        cfg.model = m.config().clone();
    }
    let summary = run_training(&cfg, &a.out, init, stages)?;
    println!(
        "trained {} iterations; probe l_pair {:.4} -> {:.4}; checkpoint {}",
        summary.iterations,
        summary.probe_initial,
        summary.probe_final,
        summary.final_checkpoint.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let pairs = load_dataset(&a.dataset)?;
    let model = a.checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|m| m.0);
    let (predictor, input_size): (Box<dyn Predictor + '_>, usize) = match a.predictor {
        PredictorArg::Model => {
            let m = model.as_ref().context("--checkpoint is required for the model predictor")?;
            (Box::new(ModelPredictor(m)), m.config().input_size)
        }
        PredictorArg::Zero => (Box::new(ZeroPredictor), a.input_size),
        PredictorArg::Perfect => (Box::new(PerfectPredictor), a.input_size),
        PredictorArg::Oracle => (Box::new(OraclePredictor { range: a.oracle_range }), a.input_size),
    };
    let report = evaluate(&pairs, predictor.as_ref(), input_size, !deterministic_mode())?;
    match &a.out {
        Some(p) => {
            write_report(&report, p)?;
            let s = &report.summary;
            println!("{} pairs: TRE {} mm, rTRE {}, offset {}", s.n_pairs, s.tre_mm, s.rtre, s.offset_mm.as_deref().unwrap_or("n/a"));
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn matches(a: MatchArgs) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let reference = load_volume(&a.reference)?;
    let search = load_volume(&a.search)?;
    let q = load_landmarks(&a.queries, Some(reference.dims_xyz()))?;
    // the model frame needs paired sets; the queries stand in for both
    let sample = prepare_pair(&reference, &search, &q, &q, model.config().input_size)?;
    let d = model.predict(&sample.reference, &sample.search, sample.q.points())?;
    let hits: Vec<_> = sample
        .q
        .points()
        .iter()
        .zip(d.offsets())
        .map(|(p, o)| search.world_to_voxel(sample.reference.voxel_to_world([p[0] + o[0], p[1] + o[1], p[2] + o[2]])))
        .collect();
    save_landmarks(&q.with_points(hits)?, &a.out)?;
    println!("wrote {} matches to {}", q.len(), a.out.display());
    Ok(())
}

fn warp(a: WarpArgs) -> anyhow::Result<()> {
    let v = load_volume(&a.input)?;
    save_volume(&warp_translate(&v, a.t)?, &a.out)?;
    Ok(())
}

fn plot(a: PlotArgs) -> anyhow::Result<()> {
    let report = read_report(&a.report)?;
    write_offset_plots(&report, &a.out)?;
    println!("wrote {} and {}", a.out.with_extension("csv").display(), a.out.with_extension("svg").display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Match(a) => matches(a),
        Cmd::Warp(a) => warp(a),
        Cmd::PlotOffsets(a) => plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}


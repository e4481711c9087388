//! Command-line front end: one pipeline stage per subcommand.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    compute_sta, conv1_filter_grid, crop_effective, describe_filters, feature_average, match_filters, Grid,
    MatchOptions,
};
use crate::cnn::{Architecture, CnnModel};
use crate::error::{Error, Result};
use crate::io::{
    read_cnn, read_dataset, read_truth, write_checkpoint, write_dataset, write_filter_report, write_metrics_csv,
    write_pgm, Checkpoint,
};
use crate::rgc::{label_dataset, make_default_model_seeded};
use crate::stimulus::{generate_dataset, StimulusConfig};
use crate::training::{evaluate_cc, train_with, DatasetView, SplitFractions, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "subunit-cnn", version, about = "Simulate a subunit ganglion cell, fit a CNN to it, and inspect what it learned")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate white-noise frames and label them with the simulated cell.
    GenData(GenDataArgs),
    /// Train the network on a dataset file.
    Train(TrainArgs),
    /// Pearson CC between network predictions and a dataset's reference rates.
    Eval(EvalArgs),
    /// Classify and crop filters, and match them to the true subunits.
    Analyze(AnalyzeArgs),
    /// Render receptive fields, filters and feature averages as PGM images.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 26)]
    pub width: usize,
    #[arg(long, default_value_t = 26)]
    pub height: usize,
    #[arg(long, default_value_t = 1)]
    pub stim_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 3)]
    pub spike_seed: u64,
    #[arg(long, default_value_t = 0.10)]
    pub target_rate: f64,
    /// Also write the ground-truth cell as a checkpoint.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub filters1: usize,
    #[arg(long, default_value_t = 15)]
    pub fsize1: usize,
    #[arg(long, default_value_t = 4)]
    pub filters2: usize,
    #[arg(long, default_value_t = 7)]
    pub fsize2: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long = "l1-act", default_value_t = 1e-3)]
    pub l1_act: f64,
    #[arg(long, default_value_t = 4)]
    pub seed: u64,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth cell; without it filters are described but not matched.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, default_value_t = 6)]
    pub crop: usize,
    #[arg(long, default_value_t = 3)]
    pub max_shift: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub sta_frames: usize,
    #[arg(long, default_value_t = 50_000)]
    pub feature_frames: usize,
    /// Ground-truth cell whose STA is rendered alongside the network's.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Seed of the probe frames.
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Render(a) => render(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let truth = make_default_model_seeded(a.width, a.height, a.target_rate, a.model_seed)?;
    let frames = generate_dataset(&StimulusConfig {
        width: a.width,
        height: a.height,
        n_samples: a.samples,
        seed: a.stim_seed,
    })?;
    let data = label_dataset(frames, &truth, a.spike_seed)?;
    write_dataset(&a.out, &data)?;
    if let Some(path) = &a.truth_out {
        write_checkpoint(path, &Checkpoint::Truth(truth.clone()))?;
    }
    let spikes: u64 = data.labels().iter().map(|&l| u64::from(l)).sum();
    println!(
        "wrote {} samples to {} (gain {:.6}, spike fraction {:.4})",
        data.len(),
        a.out.display(),
        truth.gain,
        spikes as f64 / data.len() as f64
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let (width, height) = data.frame_dims().ok_or(Error::EmptyDataset)?;
    let arch = Architecture {
        input_height: height,
        input_width: width,
        conv1_filters: a.filters1,
        conv1_size: a.fsize1,
        conv2_filters: a.filters2,
        conv2_size: a.fsize2,
    };
    arch.validate().map_err(|e| Error::Config(e.to_string()))?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        l2_weights: a.l2,
        l1_activations: a.l1_act,
        patience: a.patience,
        seed: a.seed,
        split: SplitFractions::default(),
    };
    config.validate()?;
    let model = CnnModel::init(arch, a.seed)?;
    let (best, history) = train_with(model, &data, &config, |r, _| {
        eprintln!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_cc {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_cc
        );
    })?;
    write_checkpoint(&a.out, &Checkpoint::Cnn(best))?;
    if let Some(path) = &a.metrics {
        write_metrics_csv(path, &history)?;
    }
    if let Some(r) = history.best_record() {
        println!("best epoch {} val_cc {:.6}", r.epoch, r.val_cc);
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let model = read_cnn(&a.model)?;
    let cc = evaluate_cc(&model, &DatasetView::whole(&data))?;
    println!("cc={cc}");
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let model = read_cnn(&a.model)?;
    let opts = MatchOptions {
        tau: a.tau,
        crop: a.crop,
        max_shift: a.max_shift,
    };
    let report = match &a.truth {
        Some(path) => match_filters(&model, &read_truth(path)?, &opts)?,
        None => describe_filters(&model, &opts)?,
    };
    ensure_dir(&a.out_dir)?;
    write_filter_report(a.out_dir.join("filter_report.csv"), &report)?;
    for e in &report.entries {
        let grid = conv1_filter_grid(&model, e.index);
        write_pgm(a.out_dir.join(format!("filter_{}.pgm", e.index)), &grid)?;
        if e.effective {
            let (crop, _) = crop_effective(&grid, opts.crop)?;
            write_pgm(a.out_dir.join(format!("crop_{}.pgm", e.index)), &crop)?;
        }
    }
    println!(
        "{} effective filters of {}; {} matched",
        report.n_effective(),
        report.entries.len(),
        report.entries.iter().filter(|e| e.subunit.is_some()).count()
    );
    for e in report.entries.iter().filter(|e| e.subunit.is_some()) {
        println!(
            "filter {} -> subunit {} ncc={:.4}",
            e.index,
            e.subunit.unwrap_or_default(),
            e.ncc.unwrap_or_default()
        );
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let model = read_cnn(&a.model)?;
    let (w, h) = (model.arch.input_width, model.arch.input_height);
    ensure_dir(&a.out_dir)?;
    let sta = compute_sta(&model, a.sta_frames, w, h, a.seed)?;
    write_pgm(a.out_dir.join("sta_model.pgm"), &sta)?;
    if let Some(path) = &a.truth {
        let truth = read_truth(path)?;
        let sta_truth = compute_sta(&truth, a.sta_frames, w, h, a.seed)?;
        write_pgm(a.out_dir.join("sta_truth.pgm"), &sta_truth)?;
    }
    for k in 0..model.arch.conv1_filters {
        write_pgm(a.out_dir.join(format!("filter_{k}.pgm")), &conv1_filter_grid(&model, k))?;
    }
    let features = feature_average(&model, a.feature_frames, a.seed.wrapping_add(1))?;
    for (k, f) in features.iter().enumerate() {
        let map: &Grid = &f.map;
        write_pgm(a.out_dir.join(format!("feature_{k}.pgm")), map)?;
        if f.degenerate {
            eprintln!("feature {k}: channel never active");
        }
    }
    println!("rendered STA, {} filters and feature maps to {}", features.len(), a.out_dir.display());
    Ok(())
}

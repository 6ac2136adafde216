//! `hdgan` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::annotations::{split_dataset, SplitCounts, SplitPart};
use crate::error::{Error, IoContext, Result};
use crate::feature_store::{validate_store, FeatureStore};
use crate::inference::{self, InferenceOptions, VoteRule};
use crate::mlp::checkpoint::Checkpoint;
use crate::mlp::Mlp;
use crate::resampler::ResampleMode;
use crate::sampler::SamplingStrategy;
use crate::synthetic::{self, SynthConfig};
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hdgan",
    version,
    about = "Pixel classifiers on memory-mapped generator features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic feature store with known ground truth.
    Synth(SynthArgs),
    /// Check a store's manifest, headers and payloads.
    ValidateStore {
        /// Store directory.
        dir: PathBuf,
    },
    /// Train pixel classifiers on the train split.
    Train(TrainArgs),
    /// Score models on one split part.
    Eval(EvalArgs),
    /// Predict the mask of one image.
    Infer(InferArgs),
    /// Write predicted masks and image renders as pairs.
    ExportPairs(ExportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    images: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Block as RESOLUTION:CHANNELS, coarsest first; repeat per block.
    /// Defaults to size/8:8, size/4:8, size/2:4, size:4.
    #[arg(long = "block", value_parser = parse_block)]
    blocks: Vec<(usize, usize)>,
    /// Feature noise standard deviation.
    #[arg(long, default_value_t = synthetic::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Shapes painted per image.
    #[arg(long, default_value_t = synthetic::DEFAULT_SHAPES_PER_IMAGE)]
    shapes: usize,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long = "train", default_value_t = 16)]
    n_train: usize,
    #[arg(long = "val", default_value_t = 4)]
    n_val: usize,
    #[arg(long = "test", default_value_t = 16)]
    n_test: usize,
}

impl SplitArgs {
    fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.n_train,
            val: self.n_val,
            test: self.n_test,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    /// Hidden layer widths H1,H2.
    #[arg(long, default_value = "256,128", value_parser = parse_hidden)]
    hidden: [usize; 2],
    #[arg(long, default_value_t = trainer::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_MAX_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_PATIENCE)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    /// nearest|bilinear
    #[arg(long, default_value = "nearest")]
    mode: ResampleMode,
    /// balanced|uniform
    #[arg(long, default_value = "balanced")]
    sampling: SamplingStrategy,
    /// Training pixels drawn per image.
    #[arg(long, default_value_t = 4096)]
    pixels_per_image: usize,
    /// Checkpoint path; ensemble members get a numeric suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    model: Vec<PathBuf>,
    /// nearest|bilinear
    #[arg(long, default_value = "nearest")]
    mode: ResampleMode,
    /// mean|majority
    #[arg(long, default_value = "mean")]
    vote: VoteRule,
    /// Feature budget per streamed band, in MiB.
    #[arg(long, default_value_t = 8)]
    chunk_mb: u64,
}

impl PredictArgs {
    fn options(&self) -> Result<InferenceOptions> {
        if self.chunk_mb == 0 {
            return Err(Error::Config("--chunk-mb must be at least 1".into()));
        }
        Ok(InferenceOptions {
            chunk_budget_bytes: self.chunk_mb << 20,
            mode: self.mode,
            vote: self.vote,
        })
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    /// train|val|test
    #[arg(long = "split")]
    part: SplitPart,
    #[command(flatten)]
    predict: PredictArgs,
    /// Also write the report as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    image: String,
    #[command(flatten)]
    predict: PredictArgs,
    /// Output mask (PGM).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    predict: PredictArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated image ids; all images when omitted.
    #[arg(long, value_delimiter = ',')]
    images: Vec<String>,
}

fn parse_block(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(':').ok_or("expected RESOLUTION:CHANNELS")?;
    let r = r.parse().map_err(|e| format!("resolution: {e}"))?;
    let c = c.parse().map_err(|e| format!("channels: {e}"))?;
    Ok((r, c))
}

fn parse_hidden(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected H1,H2")?;
    Ok([
        a.trim().parse().map_err(|e| format!("H1: {e}"))?,
        b.trim().parse().map_err(|e| format!("H2: {e}"))?,
    ])
}

/// Path of ensemble member `i` of `n` for the base path `out`.
pub fn member_path(out: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i}"),
    };
    out.with_file_name(name)
}

/// Training history path next to a checkpoint.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.csv")
}

fn load_models(paths: &[PathBuf], store: &FeatureStore) -> Result<Vec<Mlp>> {
    paths
        .iter()
        .map(|p| {
            let ck = Checkpoint::load(p)?;
            if ck.class_names != store.catalog().names() {
                return Err(Error::Schema(format!(
                    "{} was trained on classes {:?}, store has {:?}",
                    p.display(),
                    ck.class_names,
                    store.catalog().names()
                )));
            }
            Ok(ck.model)
        })
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.seed, a.images, a.size);
    if !a.blocks.is_empty() {
        cfg.blocks = a.blocks;
    }
    cfg.sigma = a.sigma;
    cfg.num_classes = a.classes;
    cfg.shapes_per_image = a.shapes;
    let store = synthetic::build_synthetic_store(&cfg, &a.out)?;
    println!(
        "wrote {} images ({}x{}, D={}) to {}",
        store.manifest().images.len(),
        store.image_height(),
        store.image_width(),
        store.feature_dim(),
        a.out.display()
    );
    Ok(())
}

fn validate(dir: PathBuf) -> Result<()> {
    let r = validate_store(&dir)?;
    println!(
        "ok: {} images, {} blocks, D={}, {} masks, {} renders, {} payload bytes",
        r.images, r.blocks, r.feature_dim, r.masks, r.renders, r.payload_bytes
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let store = FeatureStore::open(&a.store)?;
    let split = split_dataset(&store.image_ids(), a.split.counts(), a.seed)?;
    let mut cfg = TrainConfig::new(a.seed);
    cfg.hidden = a.hidden;
    cfg.lr = a.lr;
    cfg.batch_size = a.batch;
    cfg.max_epochs = a.epochs;
    cfg.patience = a.patience;
    cfg.dropout_p = a.dropout;
    cfg.ensemble_size = a.ensemble;
    cfg.mode = a.mode;
    cfg.strategy = a.sampling;
    cfg.pixels_per_image = a.pixels_per_image;
    let members = trainer::train(&cfg, &store, &split)?;
    for (i, m) in members.into_iter().enumerate() {
        let path = member_path(&a.out, i, cfg.ensemble_size);
        Checkpoint::new(m.model, store.catalog().names().to_vec())?.save(&path)?;
        let hist = history_path(&path);
        fs::write(&hist, m.history.to_csv()).at(&hist)?;
        let best = m.history.best().expect("non-empty history");
        eprintln!(
            "member {i}: best val accuracy {:.4} at epoch {} of {}",
            best.val_accuracy,
            best.epoch,
            m.history.epochs.len()
        );
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let store = FeatureStore::open(&a.store)?;
    let split = split_dataset(&store.image_ids(), a.split.counts(), a.seed)?;
    let models = load_models(&a.predict.model, &store)?;
    let report = trainer::evaluate(&models, &store, split.part(a.part), a.predict.options()?)?;
    print!("{}", report.render_table());
    if let Some(path) = a.report {
        fs::write(&path, report.to_csv()).at(&path)?;
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let store = FeatureStore::open(&a.store)?;
    let models = load_models(&a.predict.model, &store)?;
    let mask = inference::predict_image(&models, &store, &a.image, a.predict.options()?)?;
    crate::annotations::write_mask(&mask, &a.out)
}

fn export(a: ExportArgs) -> Result<()> {
    let store = FeatureStore::open(&a.store)?;
    let models = load_models(&a.predict.model, &store)?;
    let ids = if a.images.is_empty() {
        store.image_ids()
    } else {
        a.images
    };
    let pairs = inference::export_pairs(&models, &store, &ids, &a.out, a.predict.options()?)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit code: 0 success, 1 validation or data error, 2 usage
/// error, 3 I/O error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::ValidateStore { dir } => validate(dir),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::ExportPairs(a) => export(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

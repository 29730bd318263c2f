//! Command-line surface: `synth`, `split`, `import`, `train`, `eval`,
//! `infer` and `compare`.
//!
//! Every tunable can come from a flat TOML file passed with `--config`;
//! flags win over file values, and unknown keys are rejected. Commands that
//! write a directory also write `resolved_config.toml` there with every
//! effective value. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, BuildOptions, Dataset, DatasetManifest, Split};
use crate::error::Error;
use crate::eval_metrics;
use crate::gan::{self, checkpoint, Augmentation, DiscriminatorConfig, GeneratorConfig, ModelBundle, TrainConfig, TrainRun};
use crate::image::LinearImage;

pub const DATA_ENV: &str = "ALBEDO_DATA";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
/// Rows shown in the evaluation grid.
pub const EVAL_GRID_ROWS: usize = 7;

#[derive(Debug, Parser)]
#[command(name = "albedo", version, about = "Synthesize lit/albedo label pairs, train and evaluate the translator")]
pub struct Cli {
    /// Flat TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a corpus of pairs and assign the label-level split.
    Synth(SynthArgs),
    /// Reassign the train/test split of an existing corpus.
    Split(SplitArgs),
    /// Wrap two directories of same-named images as a test-only corpus.
    Import(ImportArgs),
    /// Train on the train split of a corpus.
    Train(TrainArgs),
    /// Score a checkpoint against the identity baseline and draw a grid.
    Eval(EvalArgs),
    /// Translate a single image.
    Infer(InferArgs),
    /// Draw an Input / Theirs / Ours / Truth grid from four directories.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long)]
    pub renders_per_label: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub roughness_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub lit: PathBuf,
    #[arg(long)]
    pub albedo: PathBuf,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub disc_base_channels: Option<usize>,
    #[arg(long)]
    pub disc_layers: Option<usize>,
    /// none, dihedral or full (flips/rotations plus channel orders).
    #[arg(long)]
    pub augmentation: Option<Augmentation>,
    /// Generator decoder dropout rate while training.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Continue from `latest.ckpt` in the output directory if present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Grid path; defaults to `<out>/grid_<split>.png`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Report directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow data whose size differs from the checkpoint (bilinear resampling).
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub ours: PathBuf,
    #[arg(long)]
    pub theirs: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    /// Keep only the first N files (by name).
    #[arg(long)]
    pub max_rows: Option<usize>,
}

/// Flat key/value configuration. Also the shape of the resolved echo file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub renders_per_label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roughness_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_rec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_base_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        let path = dir.join(RESOLVED_CONFIG);
        let text = toml::to_string(self).expect("flat config serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, &file),
        Command::Split(a) => split(a, &file),
        Command::Import(a) => import(a),
        Command::Train(a) => train(a, &file),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Compare(a) => compare(a),
    }
}

fn synth(a: SynthArgs, file: &RunConfig) -> CmdResult {
    let defaults = BuildOptions::default();
    let opts = BuildOptions {
        n_labels: a.labels.or(file.labels).unwrap_or(defaults.n_labels),
        renders_per_label: a.renders_per_label.or(file.renders_per_label).unwrap_or(defaults.renders_per_label),
        master_seed: a.seed.or(file.seed).unwrap_or(defaults.master_seed),
        image_size: a.size.or(file.size).unwrap_or(defaults.image_size),
        split_ratio: a.split_ratio.or(file.split_ratio).unwrap_or(defaults.split_ratio),
        roughness_threshold: a
            .roughness_threshold
            .or(file.roughness_threshold)
            .unwrap_or(defaults.roughness_threshold),
    };
    let manifest = dataset::build_dataset(&opts, &a.out)?;
    RunConfig {
        labels: Some(opts.n_labels),
        renders_per_label: Some(opts.renders_per_label),
        seed: Some(opts.master_seed),
        size: Some(opts.image_size),
        split_ratio: Some(opts.split_ratio),
        roughness_threshold: Some(opts.roughness_threshold),
        ..RunConfig::default()
    }
    .write(&a.out)?;
    print_split_summary(&manifest);
    Ok(())
}

fn print_split_summary(manifest: &DatasetManifest) {
    let labels_in = |s: Split| {
        manifest
            .entries_in(s)
            .map(|e| e.label_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    };
    println!(
        "{} pairs, {} train labels / {} test labels",
        manifest.entries.len(),
        labels_in(Split::Train),
        labels_in(Split::Test)
    );
}

fn split(a: SplitArgs, file: &RunConfig) -> CmdResult {
    let mut ds = Dataset::open(&a.data)?;
    let ratio = a.split_ratio.or(file.split_ratio).unwrap_or(dataset::DEFAULT_SPLIT_RATIO);
    let assignment = dataset::assign_split(&ds.manifest, ratio)?;
    if let Some(w) = assignment.warning() {
        log::warn!("{w}");
    }
    ds.manifest.apply_split(&assignment, ratio)?;
    ds.manifest.save(&a.data.join(dataset::MANIFEST_FILE))?;
    print_split_summary(&ds.manifest);
    Ok(())
}

fn import(a: ImportArgs) -> CmdResult {
    let manifest = dataset::import_external(&a.lit, &a.albedo, &a.name)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    manifest.save(&a.out.join(dataset::MANIFEST_FILE))?;
    println!("{} pairs imported as {}", manifest.entries.len(), a.name);
    Ok(())
}

fn train(a: TrainArgs, file: &RunConfig) -> CmdResult {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: a.learning_rate.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        adversarial_weight: a.lambda_adv.or(file.lambda_adv).unwrap_or(defaults.adversarial_weight),
        reconstruction_weight: a.lambda_rec.or(file.lambda_rec).unwrap_or(defaults.reconstruction_weight),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        checkpoint_interval: a
            .checkpoint_interval
            .or(file.checkpoint_interval)
            .unwrap_or(defaults.checkpoint_interval),
        augmentation: a.augmentation.or(file.augmentation).unwrap_or(defaults.augmentation),
        dropout: a.dropout.or(file.dropout).unwrap_or(defaults.dropout),
    };
    let ds = Dataset::open(&a.data)?;
    let pairs: Vec<_> = ds
        .load_all(Split::Train)?
        .into_iter()
        .map(|p| (p.lit, p.albedo))
        .collect();
    let size = pairs
        .first()
        .map(|(l, _)| l.width())
        .ok_or_else(|| Error::validation("data", format!("{} has an empty train split", a.data.display())))?;
    let mut gen_cfg = GeneratorConfig::for_size(size);
    gen_cfg.base_channels = a.base_channels.or(file.base_channels).unwrap_or(gen_cfg.base_channels);
    gen_cfg.depth = a.depth.or(file.depth).unwrap_or(gen_cfg.depth);
    let disc_defaults = DiscriminatorConfig::default();
    let disc_cfg = DiscriminatorConfig {
        base_channels: a.disc_base_channels.or(file.disc_base_channels).unwrap_or(disc_defaults.base_channels),
        n_layers: a.disc_layers.or(file.disc_layers).unwrap_or(disc_defaults.n_layers),
    };

    let bundle = ModelBundle::new(gen_cfg, disc_cfg, cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    RunConfig {
        seed: Some(cfg.seed),
        size: Some(size),
        epochs: Some(cfg.epochs),
        batch_size: Some(cfg.batch_size),
        learning_rate: Some(cfg.learning_rate),
        lambda_adv: Some(cfg.adversarial_weight),
        lambda_rec: Some(cfg.reconstruction_weight),
        checkpoint_interval: Some(cfg.checkpoint_interval),
        base_channels: Some(gen_cfg.base_channels),
        depth: Some(gen_cfg.depth),
        disc_base_channels: Some(disc_cfg.base_channels),
        disc_layers: Some(disc_cfg.n_layers),
        augmentation: Some(cfg.augmentation),
        dropout: Some(cfg.dropout),
        ..RunConfig::default()
    }
    .write(&a.out)?;
    log::info!("training on {} pairs at {size}x{size}", pairs.len());
    let mut run = TrainRun::new(&a.out);
    run.resume = a.resume;
    let bundle = gan::train(bundle, &pairs, run)?;
    if let Some(last) = bundle.history.last() {
        println!(
            "trained {} epochs: d_loss={:.4} g_adv={:.4} rec={:.4}",
            bundle.epoch, last.d_loss, last.g_adv, last.rec
        );
    } else {
        println!("no epochs to run");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let generator = checkpoint::load_generator(&a.ckpt)?;
    let ds = Dataset::open(&a.data)?;
    let size = generator.config.image_size;
    if !a.resample {
        if let Some(entry) = ds.manifest.entries_in(a.split).next() {
            let pair = ds.load_entry(entry)?;
            if pair.lit.dims() != (size, size) {
                return Err(Error::Shape(format!(
                    "checkpoint {} expects {size}x{size} inputs but {} is {}x{}; pass --resample to resample",
                    a.ckpt.display(),
                    entry.pair_id,
                    pair.lit.width(),
                    pair.lit.height()
                ))
                .into());
            }
        }
    }
    let out = match a.out {
        Some(dir) => dir,
        None => a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (model, identity) = eval_metrics::evaluate(&generator, &ds, a.split)?;
    model.save(&out.join(format!("report_model_{}.json", a.split)))?;
    identity.save(&out.join(format!("report_identity_{}.json", a.split)))?;
    for f in &model.failures {
        log::warn!("pair {} failed: {}", f.pair_id, f.error);
    }

    let mut rows = Vec::new();
    for entry in ds.manifest.entries_in(a.split).take(EVAL_GRID_ROWS) {
        let pair = ds.load_entry(entry)?;
        let pred = gan::infer(&generator, &pair.lit)?.resized(pair.lit.width(), pair.lit.height());
        rows.push([pair.lit, pred, pair.albedo]);
    }
    let grid = a.grid.unwrap_or_else(|| out.join(format!("grid_{}.png", a.split)));
    let refs: Vec<Vec<&LinearImage>> = rows.iter().map(|r| r.iter().collect()).collect();
    eval_metrics::export_grid(&refs, &grid, &["Input", "Output", "Truth"])?;

    for r in [&model, &identity] {
        if let Some(agg) = r.aggregates {
            println!(
                "{:?}: {} pairs, l1={:.4} psnr={:.2}dB ssim={:.4}",
                r.baseline, r.pair_count, agg.l1.mean, agg.psnr_db.mean, agg.ssim.mean
            );
        }
    }
    Ok(())
}

fn infer(a: InferArgs) -> CmdResult {
    let generator = checkpoint::load_generator(&a.ckpt)?;
    let input = LinearImage::load(&a.input)?;
    let output = gan::infer(&generator, &input)?.resized(input.width(), input.height());
    output.save_png(&a.output)?;
    Ok(())
}

fn compare(a: CompareArgs) -> CmdResult {
    let dirs = [a.inputs.as_path(), a.theirs.as_path(), a.ours.as_path(), a.gt.as_path()];
    let mut names = dataset::matching_image_names(&dirs)?;
    if let Some(n) = a.max_rows {
        names.truncate(n);
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let input = LinearImage::load(&dirs[0].join(name))?;
        let (w, h) = input.dims();
        let mut row = vec![input];
        for dir in &dirs[1..] {
            row.push(LinearImage::load(&dir.join(name))?.resized(w, h));
        }
        rows.push(row);
    }
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r[0].dims() != rows[0][0].dims()) {
        return Err(Error::Shape(format!("input {} differs in size from {}", names[i], names[0])).into());
    }
    let refs: Vec<Vec<&LinearImage>> = rows.iter().map(|r| r.iter().collect()).collect();
    eval_metrics::export_grid(&refs, &a.grid, &["Input", "Theirs", "Ours", "Truth"])?;
    println!("{} rows written to {}", rows.len(), a.grid.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::light_sim;

    #[test]
    fn unknown_config_keys_are_rejected() {
        let p = Path::new("x.toml");
        assert!(RunConfig::parse("epochs = 3\nseed = 9\n", p).is_ok());
        assert!(RunConfig::parse("epochz = 3\n", p).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig {
            epochs: Some(5),
            lambda_rec: Some(0.0),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text, Path::new("r.toml")).unwrap(), cfg);
    }

    #[test]
    fn missing_out_is_a_usage_error() {
        assert_eq!(run(["albedo", "synth", "--labels", "2"]), ExitCode::from(2));
        assert_eq!(run(["albedo", "frobnicate"]), ExitCode::from(2));
    }

    #[test]
    fn split_flag_parses() {
        let cli = Cli::try_parse_from(["albedo", "eval", "--data", "d", "--ckpt", "c", "--split", "train"]).unwrap();
        match cli.command {
            Command::Eval(a) => assert_eq!(a.split, Split::Train),
            _ => unreachable!(),
        }
    }

    #[test]
    fn roughness_default_matches_light_sim() {
        assert_eq!(BuildOptions::default().roughness_threshold, light_sim::DEFAULT_ROUGHNESS_THRESHOLD);
    }
}

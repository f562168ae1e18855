//! Command-line front end: `synth`, `imitate`, `train`, `score`, `eval`
//! and `ablate`.
//!
//! Settings resolve as defaults < `RAN_SEED` < `--config` file < flags. The
//! resolved settings are written to `ran-<command>.conf` in the output
//! directory before any work starts, in the same `key = value` format the
//! `--config` flag reads.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format, 3 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint_for, save_checkpoint};
use crate::datasets::{
    column_stats, format_dataset, load_dataset, make_synthetic, save_dataset, split_normal_anomaly,
    znormalize, ColumnStats, LabeledDataset, SplitDataset, SyntheticProfile,
};
use crate::error::Error;
use crate::imitation::{imitate_with_indices, CorruptionSpec};
use crate::model::{ArchConfig, ModelParams, Variant};
use crate::scoring::{
    self, anomaly_scores, anomaly_scores_calibrated, evaluate_with, format_sig,
    reconstruction_errors, Normalization, ReportMeta,
};
use crate::tensor::{Activation, AdamConfig};
use crate::training::{train_with_progress, LossRecord, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable consulted for the seed when nothing else sets it.
pub const SEED_ENV: &str = "RAN_SEED";

#[derive(Parser, Debug)]
#[command(name = "ran", version, about = "Imitated-anomaly autoencoders for time-series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled dataset.
    Synth(Flags),
    /// Write imitated anomalies built from the training normals.
    Imitate(Flags),
    /// Train one variant; writes model.ckpt and losses.csv.
    Train(Flags),
    /// Score the test split with a checkpoint; writes scores.csv.
    Score(Flags),
    /// Train (or load) a model and write report.json, scores.csv and histogram.csv.
    Eval(Flags),
    /// Train all four variants and write ablation.csv.
    Ablate(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Imitate(_) => "imitate",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Synth(f)
            | Command::Imitate(f)
            | Command::Train(f)
            | Command::Score(f)
            | Command::Eval(f)
            | Command::Ablate(f) => f,
        }
    }
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labelled dataset file; a synthetic profile is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    n_normal: Option<usize>,
    #[arg(long)]
    n_anomaly: Option<usize>,
    /// Subsequence length of synthetic data.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Label of the normal class, or `auto` for the most frequent label.
    #[arg(long)]
    normal_label: Option<String>,
    #[arg(long)]
    test_normal_fraction: Option<f64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    output_scale: Option<f64>,
    #[arg(long)]
    leaky_alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    corrupt_level: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    /// `transductive` (min/max over the test rows) or `calibrated`
    /// (min/max frozen from the training normals).
    #[arg(long)]
    normalization: Option<String>,
    /// Checkpoint to score; defaults to `<out-dir>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output file for `synth` and `imitate`.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
    /// Output directory for the other commands.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Print per-epoch losses to standard error.
    #[arg(short, long)]
    verbose: bool,
}

/// Every setting a command can use, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub profile: SyntheticProfile,
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub m: usize,
    pub noise: f64,
    /// `None` picks the most frequent label.
    pub normal_label: Option<i64>,
    pub test_normal_fraction: f64,
    pub variant: Variant,
    pub latent_dim: usize,
    pub output_scale: f64,
    pub leaky_alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub corrupt_level: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub bins: usize,
    pub calibrated: bool,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let arch = ArchConfig::new(64, Variant::Ran);
        let alpha = match arch.activation {
            Activation::LeakyRelu { alpha } => alpha,
            _ => 0.2,
        };
        RunConfig {
            data: None,
            profile: SyntheticProfile::SineWithSpikes,
            n_normal: 200,
            n_anomaly: 40,
            m: 64,
            noise: 0.1,
            normal_label: None,
            test_normal_fraction: 0.3,
            variant: Variant::Ran,
            latent_dim: arch.latent_dim,
            output_scale: arch.output_scale,
            leaky_alpha: alpha,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lambda: train.lambda,
            corrupt_level: train.corrupt_level,
            lr: train.optimizer.lr,
            beta1: train.optimizer.beta1,
            beta2: train.optimizer.beta2,
            eps: train.optimizer.eps,
            seed: 0,
            bins: 20,
            calibrated: false,
            checkpoint: None,
            output: None,
            out_dir: PathBuf::from("ran-out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value {value:?} for {key}: {e}"))
}

fn parse_label(value: &str) -> Result<Option<i64>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        parse("normal_label", value).map(Some)
    }
}

fn parse_mode(value: &str) -> Result<bool, String> {
    match value {
        "transductive" => Ok(false),
        "calibrated" => Ok(true),
        other => Err(format!(
            "normalization must be transductive or calibrated, got {other:?}"
        )),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting. Dashes and underscores in keys are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "data" => self.data = opt_path(value),
            "profile" => self.profile = parse(&key, value)?,
            "n_normal" => self.n_normal = parse(&key, value)?,
            "n_anomaly" => self.n_anomaly = parse(&key, value)?,
            "m" => self.m = parse(&key, value)?,
            "noise" => self.noise = parse(&key, value)?,
            "normal_label" => self.normal_label = parse_label(value)?,
            "test_normal_fraction" => self.test_normal_fraction = parse(&key, value)?,
            "variant" => self.variant = parse(&key, value)?,
            "latent_dim" => self.latent_dim = parse(&key, value)?,
            "output_scale" => self.output_scale = parse(&key, value)?,
            "leaky_alpha" => self.leaky_alpha = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "lambda" => self.lambda = parse(&key, value)?,
            "corrupt_level" => self.corrupt_level = parse(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "beta1" => self.beta1 = parse(&key, value)?,
            "beta2" => self.beta2 = parse(&key, value)?,
            "eps" => self.eps = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "bins" => self.bins = parse(&key, value)?,
            "normalization" => self.calibrated = parse_mode(value)?,
            "checkpoint" => self.checkpoint = opt_path(value),
            "output" => self.output = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown setting {other:?}")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                format!("{}:{}: expected key = value", origin.display(), i + 1)
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{}:{}: {e}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<(), String> {
        macro_rules! take {
            ($($field:ident),*) => {
                $( if let Some(v) = f.$field.clone() { self.$field = v; } )*
            };
        }
        take!(n_normal, n_anomaly, m, noise, test_normal_fraction, latent_dim, output_scale,
              leaky_alpha, epochs, batch_size, lambda, corrupt_level, lr, beta1, beta2, eps,
              seed, bins, out_dir);
        if let Some(v) = &f.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &f.checkpoint {
            self.checkpoint = Some(v.clone());
        }
        if let Some(v) = &f.output {
            self.output = Some(v.clone());
        }
        if let Some(v) = &f.profile {
            self.profile = parse("profile", v)?;
        }
        if let Some(v) = &f.variant {
            self.variant = parse("variant", v)?;
        }
        if let Some(v) = &f.normal_label {
            self.normal_label = parse_label(v)?;
        }
        if let Some(v) = &f.normalization {
            self.calibrated = parse_mode(v)?;
        }
        Ok(())
    }

    /// The settings as a `key = value` file that [`RunConfig::apply_text`]
    /// reads back to the same values.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("data", path(&self.data));
        kv("profile", self.profile.to_string());
        kv("n_normal", self.n_normal.to_string());
        kv("n_anomaly", self.n_anomaly.to_string());
        kv("m", self.m.to_string());
        kv("noise", self.noise.to_string());
        kv(
            "normal_label",
            self.normal_label.map_or("auto".into(), |l| l.to_string()),
        );
        kv("test_normal_fraction", self.test_normal_fraction.to_string());
        kv("variant", self.variant.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("output_scale", self.output_scale.to_string());
        kv("leaky_alpha", self.leaky_alpha.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lambda", self.lambda.to_string());
        kv("corrupt_level", self.corrupt_level.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("seed", self.seed.to_string());
        kv("bins", self.bins.to_string());
        kv(
            "normalization",
            if self.calibrated { "calibrated" } else { "transductive" }.into(),
        );
        kv("checkpoint", path(&self.checkpoint));
        kv("output", path(&self.output));
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn arch(&self, m: usize, variant: Variant) -> ArchConfig {
        ArchConfig {
            latent_dim: self.latent_dim,
            output_scale: self.output_scale,
            activation: Activation::leaky_relu(self.leaky_alpha),
            ..ArchConfig::new(m, variant)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda: self.lambda,
            corrupt_level: self.corrupt_level,
            optimizer: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            seed,
        }
    }

    fn dataset_name(&self) -> String {
        match &self.data {
            Some(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            None => self.profile.to_string(),
        }
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Runs one command. `argv` excludes the program name.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    run_command_with_env(argv, std::env::var(SEED_ENV).ok())
}

/// [`run_command`] with the `RAN_SEED` value passed explicitly.
pub fn run_command_with_env<I, S>(argv: I, env_seed: Option<String>) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args = std::iter::once("ran".to_string()).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command, env_seed) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `ran {} --help` for usage", cli.command.name());
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn resolve(cmd: &Command, env_seed: Option<String>) -> Result<RunConfig, Failure> {
    let flags = cmd.flags();
    let mut cfg = RunConfig::default();
    if let Some(s) = env_seed.filter(|s| !s.trim().is_empty()) {
        cfg.seed = parse(SEED_ENV, s.trim()).map_err(Failure::Usage)?;
    }
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!(
            "cannot read config {}: {e}",
            path.display()
        )))?;
        cfg.apply_text(&text, path).map_err(Failure::Usage)?;
    }
    cfg.apply_flags(flags).map_err(Failure::Usage)?;
    Ok(cfg)
}

fn execute(cmd: &Command, env_seed: Option<String>) -> CmdResult {
    let cfg = resolve(cmd, env_seed)?;
    let verbose = cmd.flags().verbose;
    match cmd {
        Command::Synth(_) => synth(&cfg),
        Command::Imitate(_) => imitate_cmd(&cfg),
        Command::Train(_) => train_cmd(&cfg, verbose),
        Command::Score(_) => score_cmd(&cfg),
        Command::Eval(_) => eval_cmd(&cfg, verbose),
        Command::Ablate(_) => ablate_cmd(&cfg, verbose),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Creates `dir` and writes the resolved config into it.
fn echo_config(cfg: &RunConfig, dir: &Path, command: &str) -> Result<(), Error> {
    create_dir(dir)?;
    write(&dir.join(format!("ran-{command}.conf")), cfg.to_text())
}

/// Output file for `synth` and `imitate`, with the directory its config goes to.
fn output_file(cfg: &RunConfig, default_name: &str) -> (PathBuf, PathBuf) {
    let file = cfg
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(default_name));
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    (file, dir)
}

fn synth(cfg: &RunConfig) -> CmdResult {
    let (file, dir) = output_file(cfg, "synthetic.csv");
    echo_config(cfg, &dir, "synth")?;
    let ds = make_synthetic(cfg.profile, cfg.n_normal, cfg.n_anomaly, cfg.m, cfg.noise, cfg.seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    save_dataset(&ds, &file)?;
    Ok(())
}

/// Data after loading (or synthesizing), z-normalizing and splitting.
struct Prepared {
    split: SplitDataset,
    stats: ColumnStats,
    normal_label: i64,
}

fn majority_label(labels: &[i64]) -> i64 {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut best = (0usize, sorted[0]);
    for run in sorted.chunk_by(|a, b| a == b) {
        if run.len() > best.0 {
            best = (run.len(), run[0]);
        }
    }
    best.1
}

fn load_source(cfg: &RunConfig) -> Result<LabeledDataset, Failure> {
    match &cfg.data {
        Some(path) => Ok(load_dataset(path)?),
        None => make_synthetic(cfg.profile, cfg.n_normal, cfg.n_anomaly, cfg.m, cfg.noise, cfg.seed)
            .map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, Failure> {
    let ds = znormalize(&load_source(cfg)?);
    let normal_label = match (cfg.normal_label, cfg.data.is_some()) {
        (Some(l), _) => l,
        (None, true) => majority_label(ds.labels()),
        (None, false) => 0,
    };
    if !(cfg.test_normal_fraction > 0.0 && cfg.test_normal_fraction < 1.0) {
        return Err(Failure::Usage(format!(
            "test_normal_fraction must lie in (0, 1), got {}",
            cfg.test_normal_fraction
        )));
    }
    let split = split_normal_anomaly(&ds, normal_label, cfg.test_normal_fraction, cfg.seed)?;
    let stats = column_stats(&split.x_nor)?;
    Ok(Prepared {
        split,
        stats,
        normal_label,
    })
}

fn imitate_cmd(cfg: &RunConfig) -> CmdResult {
    let (file, dir) = output_file(cfg, "x_imi.csv");
    echo_config(cfg, &dir, "imitate")?;
    let spec = CorruptionSpec::new(cfg.corrupt_level, cfg.seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let prep = prepare(cfg)?;
    let imi = imitate_with_indices(&prep.split.x_nor, &prep.stats, &spec)?;
    let labels = vec![prep.normal_label; imi.x_imi.rows()];
    write(&file, format_dataset(&imi.x_imi, &labels))?;

    let mut manifest = String::from("row,source_row,replaced\n");
    for (i, cols) in imi.replaced.iter().enumerate() {
        let cols: Vec<String> = cols.iter().map(usize::to_string).collect();
        writeln!(manifest, "{i},{},{}", prep.split.train_rows[i], cols.join(" ")).unwrap();
    }
    let mut manifest_path = file.clone().into_os_string();
    manifest_path.push(".replaced.csv");
    write(Path::new(&manifest_path), manifest)?;
    Ok(())
}

fn validate_training(cfg: &RunConfig, arch: &ArchConfig, train: &TrainConfig, n_rows: usize) -> CmdResult {
    let usage = |e: Error| Failure::Usage(e.to_string());
    arch.geometry().map_err(usage)?;
    train.optimizer.validate().map_err(usage)?;
    train.validate(n_rows).map_err(usage)?;
    if !(cfg.leaky_alpha > 0.0) {
        return Err(Failure::Usage(format!("leaky_alpha must be positive, got {}", cfg.leaky_alpha)));
    }
    Ok(())
}

fn fit(
    cfg: &RunConfig,
    prep: &Prepared,
    variant: Variant,
    seed: u64,
    verbose: bool,
) -> Result<(ModelParams, LossRecord), Failure> {
    let arch = cfg.arch(prep.split.x_nor.cols(), variant);
    let train = cfg.train_config(seed);
    validate_training(cfg, &arch, &train, prep.split.x_nor.rows())?;
    let label = variant.label();
    let out = train_with_progress(&prep.split.x_nor, &prep.stats, &train, &arch, |epoch, l| {
        if verbose {
            eprintln!(
                "{label} epoch {epoch}: L_Dx {} L_AE {} Z_error {} gen_loss {}",
                format_sig(l.l_dx),
                format_sig(l.l_ae),
                format_sig(l.z_error),
                format_sig(l.gen_loss)
            );
        }
    })?;
    Ok(out)
}

fn train_cmd(cfg: &RunConfig, verbose: bool) -> CmdResult {
    echo_config(cfg, &cfg.out_dir, "train")?;
    let prep = prepare(cfg)?;
    let (params, losses) = fit(cfg, &prep, cfg.variant, cfg.seed, verbose)?;
    save_checkpoint(&params, cfg.out_dir.join("model.ckpt"))?;
    write(&cfg.out_dir.join("losses.csv"), losses.to_csv())?;
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("model.ckpt"))
}

fn normalization(params: &ModelParams, prep: &Prepared, calibrated: bool) -> Result<Normalization, Error> {
    if !calibrated {
        return Ok(Normalization::Transductive);
    }
    let errors = reconstruction_errors(params, &prep.split.x_nor)?;
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Normalization::Calibrated { min, max })
}

fn score_cmd(cfg: &RunConfig) -> CmdResult {
    echo_config(cfg, &cfg.out_dir, "score")?;
    let prep = prepare(cfg)?;
    let params = load_checkpoint_for(checkpoint_path(cfg), prep.split.x_test.cols())?;
    let errors = reconstruction_errors(&params, &prep.split.x_test)?;
    let scores = match normalization(&params, &prep, cfg.calibrated)? {
        Normalization::Transductive => anomaly_scores(&errors)?,
        Normalization::Calibrated { min, max } => anomaly_scores_calibrated(&errors, min, max)?,
    };
    write(
        &cfg.out_dir.join("scores.csv"),
        scoring::scores_csv(&prep.split.test_labels, &errors, &scores),
    )?;
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, verbose: bool) -> CmdResult {
    echo_config(cfg, &cfg.out_dir, "eval")?;
    let prep = prepare(cfg)?;
    let params = match &cfg.checkpoint {
        Some(path) => load_checkpoint_for(path, prep.split.x_test.cols())?,
        None => {
            let (params, losses) = fit(cfg, &prep, cfg.variant, cfg.seed, verbose)?;
            save_checkpoint(&params, cfg.out_dir.join("model.ckpt"))?;
            write(&cfg.out_dir.join("losses.csv"), losses.to_csv())?;
            params
        }
    };
    let meta = ReportMeta {
        dataset: cfg.dataset_name(),
        seed: cfg.seed,
    };
    let mode = normalization(&params, &prep, cfg.calibrated)?;
    let report = evaluate_with(&params, &prep.split, cfg.bins, &meta, mode)
        .map_err(|e| match e {
            Error::InvalidArgument(msg) if cfg.bins < 2 => Failure::Usage(msg),
            other => Failure::Run(other),
        })?;
    write(&cfg.out_dir.join("report.json"), report.to_json())?;
    write(&cfg.out_dir.join("scores.csv"), report.scores_csv())?;
    write(&cfg.out_dir.join("histogram.csv"), report.histogram.to_csv())?;
    println!("{} {} AUC-ROC {}", meta.dataset, params.config.variant.label(), format_sig(report.auc_roc));
    Ok(())
}

/// Header of the ablation table.
pub fn ablation_header() -> String {
    let labels: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
    format!("dataset,{}", labels.join(","))
}

fn ablate_cmd(cfg: &RunConfig, verbose: bool) -> CmdResult {
    echo_config(cfg, &cfg.out_dir, "ablate")?;
    let prep = prepare(cfg)?;
    let meta = ReportMeta {
        dataset: cfg.dataset_name(),
        seed: cfg.seed,
    };
    let mut row = vec![meta.dataset.clone()];
    for (i, &variant) in Variant::ALL.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let (params, losses) = fit(cfg, &prep, variant, seed, verbose)?;
        let mode = normalization(&params, &prep, cfg.calibrated)?;
        let report = evaluate_with(&params, &prep.split, cfg.bins.max(2), &meta, mode)?;
        let tag = variant.to_string().to_lowercase();
        write(&cfg.out_dir.join(format!("losses-{tag}.csv")), losses.to_csv())?;
        row.push(format_sig(report.auc_roc));
        if verbose {
            eprintln!("{} AUC-ROC {}", variant.label(), format_sig(report.auc_roc));
        }
    }
    let table = format!("{}\n{}\n", ablation_header(), row.join(","));
    write(&cfg.out_dir.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(())
}

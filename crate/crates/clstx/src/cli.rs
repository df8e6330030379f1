//! The `clstx` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
//! Every failure writes exactly one line to standard error:
//!
//! ```text
//! error kind=<usage|data|training> code=<n> msg=<text>
//! ```

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use clstx_core::data::{synth_generate, EmbeddingDataset, SynthSpec};
use clstx_core::evaluation::{compare_all, CvJob, EvalReport, FoldOutcome};
use clstx_core::models::{ModelConfig, Variant};
use clstx_core::training::TrainConfig;
use serde::Serialize;

use crate::checkpoint::{self, CheckpointError};
use crate::clsb::{self, FormatError};
use crate::config::{ConfigError, RunConfig};
use crate::manifest::{self, Manifest, ManifestError};
use crate::runner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Training,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Training => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Training => "training",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: Kind::Usage,
            msg: msg.into(),
        }
    }

    fn data(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Data,
            msg: msg.to_string(),
        }
    }

    /// The single stderr line for this error.
    pub fn line(&self) -> String {
        let msg: String = self.msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error kind={} code={} msg={}", self.kind.name(), self.kind.code(), msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<clstx_core::Error> for CliError {
    fn from(e: clstx_core::Error) -> Self {
        use clstx_core::Error as E;
        let kind = match e {
            E::Diverged { .. } | E::NonFinite(_) | E::NonFiniteGradient(_) => Kind::Training,
            E::Config(_)
            | E::InvalidKernel { .. }
            | E::InvalidStride(_)
            | E::InvalidTarget { .. }
            | E::InvalidRatio(_)
            | E::Dimension { .. } => Kind::Usage,
            E::InvalidSplit { .. } | E::LengthMismatch { .. } | E::Empty(_) | E::Validation(_) => Kind::Data,
        };
        Self {
            kind,
            msg: e.to_string(),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::data(e)
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        Self::data(e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::data(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "clstx", version, about = "Classification heads over frozen [CLS] stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled dataset
    Synth(SynthArgs),
    /// Train one model on a 90/10 split, or cross-validate it with --folds
    Train(TrainArgs),
    /// Repeated k-fold cross-validation
    Evaluate(EvaluateArgs),
    /// Pairwise almost-stochastic-order comparison of evaluation reports
    Compare(CompareArgs),
    /// Print a dataset's header, class counts and checksum
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, default_value_t = 768)]
    hidden: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: String,
    /// JSON file with optional "model" and "train" sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CLSP checkpoint of the trained parameters
    #[arg(long)]
    out_params: Option<PathBuf>,
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Cross-validate with this many folds instead of a single split
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
    /// Model name recorded in the report (defaults to the variant)
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return Ok(());
            }
            let text = e.render().to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            return Err(CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Compare(a) => compare(a, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(std::env::args_os(), &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", e.line());
            e.kind.code()
        }
    }
}

fn require_path(flag: &str, p: &Path) -> Result<(), CliError> {
    if p.as_os_str().is_empty() {
        return Err(CliError::usage(format!("--{flag} must not be empty")));
    }
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse::<Variant>().map_err(CliError::from)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// The configured model with its input and output extents taken from the
/// dataset.
fn model_for(cfg: &RunConfig, variant: Variant, data: &EmbeddingDataset) -> Result<ModelConfig, CliError> {
    let model = ModelConfig {
        variant,
        n_layers: data.n_layers(),
        hidden: data.hidden(),
        n_classes: data.n_classes(),
        ..cfg.model.clone()
    };
    model.validate()?;
    Ok(model)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_path("out", &a.out)?;
    if a.classes < 2 {
        return Err(CliError::usage(format!(
            "--classes must be at least 2, got {}",
            a.classes
        )));
    }
    if a.samples < a.classes {
        return Err(CliError::usage(format!(
            "--samples {} is fewer than --classes {}",
            a.samples, a.classes
        )));
    }
    if !(a.separation >= 0.0 && a.separation.is_finite()) {
        return Err(CliError::usage(format!(
            "--separation must be finite and >= 0, got {}",
            a.separation
        )));
    }
    if a.layers == 0 || a.hidden == 0 {
        return Err(CliError::usage("--layers and --hidden must be positive"));
    }
    let spec = SynthSpec {
        n_layers: a.layers,
        hidden: a.hidden,
        ..SynthSpec::new(a.samples, a.classes, a.separation, a.seed)
    };
    let ds = synth_generate(&spec)?;
    let sha = clsb::write_dataset(&ds, &a.out)?;
    let source = format!(
        "synth classes={} samples={} separation={} seed={} layers={} hidden={}",
        a.classes, a.samples, a.separation, a.seed, a.layers, a.hidden
    );
    let m = Manifest::new(&dataset_name(&a.out), &source, "synthetic", None, &sha);
    let side = m.write(&a.out)?;
    emit(
        out,
        &format!(
            "wrote {} ({} samples, {} classes, {}x{})\nsha256 {sha}\nmanifest {}\n",
            a.out.display(),
            a.samples,
            a.classes,
            a.layers,
            a.hidden,
            side.display()
        ),
    )
}

fn progress_line(job: &CvJob, o: &FoldOutcome) {
    let secs = o.seconds.unwrap_or(f64::NAN);
    match &o.accuracy {
        Ok(acc) => eprintln!(
            "fold seed={} fold={} accuracy={acc:.4} seconds={secs:.1}",
            job.seed, job.fold
        ),
        Err(f) => eprintln!(
            "fold seed={} fold={} failed={} seconds={secs:.1}",
            job.seed, job.fold, f.reason
        ),
    }
}

fn cross_validate(
    data_path: &Path,
    variant: &str,
    config: Option<&Path>,
    name: Option<&str>,
    seeds: &[u64],
    folds: usize,
    workers: usize,
) -> Result<EvalReport, CliError> {
    require_path("data", data_path)?;
    let variant = parse_variant(variant)?;
    let cfg = load_config(config)?;
    if seeds.is_empty() {
        return Err(CliError::usage("--seeds must list at least one seed"));
    }
    if folds < 2 {
        return Err(CliError::usage(format!("--folds must be at least 2, got {folds}")));
    }
    if workers == 0 {
        return Err(CliError::usage("--parallel-folds must be at least 1"));
    }
    cfg.train.validate()?;
    let data = clsb::read_dataset(data_path)?;
    let model = model_for(&cfg, variant, &data)?;
    let name = name.unwrap_or(variant.name());
    let report = runner::run_cv_parallel(
        &data,
        name,
        &dataset_name(data_path),
        &model,
        &cfg.train,
        seeds,
        folds,
        workers,
        Some(&progress_line),
    )?;
    Ok(report)
}

fn summarize(report: &EvalReport) -> String {
    let total = report.seeds.len() * report.folds;
    let mut s = format!(
        "{} on {}: {}/{} folds completed",
        report.model,
        report.dataset,
        report.completed(),
        total
    );
    match report.grand_mean {
        Some(m) => s.push_str(&format!(", mean accuracy {m:.4}\n")),
        None => s.push('\n'),
    }
    for (seed, m) in report.seeds.iter().zip(&report.seed_means) {
        match m {
            Some(m) => s.push_str(&format!("  seed {seed}: {m:.4}\n")),
            None => s.push_str(&format!("  seed {seed}: no completed fold\n")),
        }
    }
    s
}

/// Writes the report, then fails only when nothing completed.
fn finish_cv(report: &EvalReport, dest: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    match dest {
        Some(p) => write_json(p, report)?,
        None => emit(
            out,
            &(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        )?,
    }
    if dest.is_some() {
        emit(out, &summarize(report))?;
    }
    if report.completed() == 0 {
        let first = report
            .failures
            .first()
            .map(|f| f.reason.as_str())
            .unwrap_or("no fold ran");
        return Err(CliError {
            kind: Kind::Training,
            msg: format!("every fold failed; first failure: {first}"),
        });
    }
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(k) = a.folds {
        if a.out_params.is_some() {
            return Err(CliError::usage("--out-params cannot be combined with --folds"));
        }
        let report = cross_validate(
            &a.data,
            &a.variant,
            a.config.as_deref(),
            a.name.as_deref(),
            &[a.seed],
            k,
            a.parallel_folds,
        )?;
        return finish_cv(&report, a.out_report.as_deref(), out);
    }
    require_path("data", &a.data)?;
    let variant = parse_variant(&a.variant)?;
    let cfg = load_config(a.config.as_deref())?;
    for (flag, p) in [("out-params", &a.out_params), ("out-report", &a.out_report)] {
        if let Some(p) = p {
            require_path(flag, p)?;
        }
    }
    let train_cfg = TrainConfig {
        seed: a.seed,
        ..cfg.train.clone()
    };
    train_cfg.validate()?;
    let data = clsb::read_dataset(&a.data)?;
    let model = model_for(&cfg, variant, &data)?;
    let name = a.name.as_deref().unwrap_or(variant.name());
    let (report, params) = runner::train_split(&data, name, &dataset_name(&a.data), &model, &train_cfg)?;
    if let Some(p) = &a.out_params {
        checkpoint::save(p, &model, &params)?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out_report {
        Some(p) => {
            write_json(p, &report)?;
            emit(
                out,
                &format!(
                    "{} on {}: validation accuracy {:.4} after {} steps\n",
                    report.model, report.dataset, report.accuracy, report.steps
                ),
            )
        }
        None => emit(out, &json),
    }
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(p) = &a.out {
        require_path("out", p)?;
    }
    let report = cross_validate(
        &a.data,
        &a.variant,
        a.config.as_deref(),
        a.name.as_deref(),
        &a.seeds,
        a.folds,
        a.parallel_folds,
    )?;
    finish_cv(&report, a.out.as_deref(), out)
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.results.len() < 2 {
        return Err(CliError::usage(format!(
            "--results needs at least 2 reports, got {}",
            a.results.len()
        )));
    }
    if !(a.alpha > 0.0 && a.alpha < 0.5) {
        return Err(CliError::usage(format!(
            "--alpha must lie in (0, 0.5), got {}",
            a.alpha
        )));
    }
    if a.bootstrap == 0 {
        return Err(CliError::usage("--bootstrap must be positive"));
    }
    let mut reports = Vec::with_capacity(a.results.len());
    for p in &a.results {
        require_path("results", p)?;
        let text = fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    let matrix = compare_all(&reports, a.alpha, a.bootstrap, a.seed).map_err(|e| match e {
        clstx_core::Error::Config(_) | clstx_core::Error::Validation(_) => CliError::data(e),
        e => e.into(),
    })?;
    if let Some(p) = &a.out {
        require_path("out", p)?;
        write_json(p, &matrix)?;
    }
    emit(
        out,
        &format!(
            "epsilon_min (row dominates column), alpha {} adjusted to {} over {} comparisons\n{}",
            matrix.alpha,
            matrix.adjusted_alpha,
            matrix.comparisons,
            matrix.to_table()
        ),
    )
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_path("data", &a.data)?;
    let ds = clsb::read_dataset(&a.data)?;
    let sha = clsb::file_sha256(&a.data)?;
    let h = clsb::Header::of(&ds);
    let counts: Vec<String> = ds.class_counts().iter().map(usize::to_string).collect();
    let manifest_state = if manifest::sidecar_path(&a.data).exists() {
        match Manifest::read(&a.data).and_then(|m| m.verify(&a.data).map(|_| m)) {
            Ok(_) => "ok".to_string(),
            Err(e) => format!(
                "invalid ({})",
                e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
            ),
        }
    } else {
        "absent".to_string()
    };
    emit(
        out,
        &format!(
            "path {}\nversion {}\nn_layers {}\nhidden {}\nn_classes {}\nn_samples {}\nclass_counts {}\nsha256 {sha}\nmanifest {manifest_state}\n",
            a.data.display(),
            clsb::VERSION,
            h.n_layers,
            h.hidden,
            h.n_classes,
            h.n_samples,
            counts.join(" ")
        ),
    )
}

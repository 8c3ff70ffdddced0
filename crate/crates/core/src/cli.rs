//! Command-line front end. `run` parses arguments and returns the process
//! exit status: 0 success, 1 domain or validation failure, 2 I/O or
//! configuration failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eval::{
    build_pools, compare_report, export_distribution, write_histogram_csv, write_question_csv,
};
use crate::net::{
    count_flops, default_grid, load_checkpoint, save_checkpoint, ChronosConfig, ModelParams,
    NOMINAL_GENERATION_FLOPS,
};
use crate::store::{
    load_jsonl, split_by_question, split_dataset, validate_jsonl, write_header, write_record,
    SplitRatios, StoreError, TrajectoryReader,
};
use crate::synth::{write_synth, SynthSpec};
use crate::train::{
    auc, ensemble_score_trajectory, grid_search, train_prepared, PreparedSplit, Selection,
    TrainConfig, TrainReport,
};
use crate::vote::{canonicalize_answer, vote_question, ScoredTrajectory, VoteRecord, NO_ANSWER};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CHRONOS_THREADS";

pub const DEFAULT_EVAL_K: usize = 128;
pub const DEFAULT_REPEATS: usize = 16;
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_FLOPS_BATCH: u64 = 30;
const SCORE_BATCH: usize = 256;

#[derive(Debug)]
pub enum CliError {
    /// Exit status 1.
    Domain(String),
    /// Exit status 2.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Domain(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        if e.is_io() {
            io_err(e)
        } else {
            domain(e)
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        io_err(e)
    }
}

impl From<crate::net::NetError> for CliError {
    fn from(e: crate::net::NetError) -> Self {
        match e {
            crate::net::NetError::Io(_) => io_err(e),
            other => domain(other),
        }
    }
}

impl From<crate::train::TrainError> for CliError {
    fn from(e: crate::train::TrainError) -> Self {
        match e {
            crate::train::TrainError::Net(n) => n.into(),
            other => domain(other),
        }
    }
}

impl From<crate::synth::SynthError> for CliError {
    fn from(e: crate::synth::SynthError) -> Self {
        match e {
            crate::synth::SynthError::Io(_) => io_err(e),
            other => domain(other),
        }
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        domain(e)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub l_tail: Option<usize>,
    pub n_proj: Option<usize>,
    pub n_conv: Option<usize>,
    pub kernel_lengths: Option<Vec<usize>>,
    pub n_blk: Option<usize>,
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub seed: Option<u64>,
    pub k_stat: Option<usize>,
    pub selection: Option<Selection>,
    pub grid: Option<GridChoice>,
    pub group_by_question: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub repeats: Option<usize>,
    pub eta: Option<f64>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub benchmark: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub gold: Option<PathBuf>,
}

/// TOML run configuration. Every key can be overridden by a flag.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| io_err(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridChoice {
    /// Train the single configured architecture.
    None,
    /// Search the 18-entry default grid.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Test,
    Validation,
}

#[derive(Debug, Parser)]
#[command(
    name = "chronos",
    version,
    about = "Trajectory scoring and score-weighted voting"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a trajectory file and list every problem.
    Validate(ValidateArgs),
    /// Generate a synthetic labeled trajectory file.
    Synth(SynthArgs),
    /// Train a scorer (or ensemble) on a labeled trajectory file.
    Train(TrainArgs),
    /// Append scores to every record of a trajectory file.
    Score(ScoreArgs),
    /// Top-eta weighted vote per question over a scored file.
    Vote(VoteArgs),
    /// Pass@1, Maj@K and weighted voting at K over scored pools.
    Eval(EvalArgs),
    /// Inference FLOPs of the scorer.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub ltail: Option<usize>,
    #[arg(long)]
    pub n_proj: Option<usize>,
    #[arg(long)]
    pub n_conv: Option<usize>,
    /// Comma-separated kernel lengths.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long)]
    pub n_blk: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_questions: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub correct_fraction: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub extent: Option<usize>,
    #[arg(long)]
    pub ltail: Option<usize>,
    /// Width of the emitted top-k vectors.
    #[arg(long)]
    pub kstat: Option<usize>,
    #[arg(long)]
    pub wrong_concentration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub grid: Option<GridChoice>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub kstat: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Keep all trajectories of a question in the same split part.
    #[arg(long)]
    pub group_by_question: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint file, or a directory of `member-*.chrs` files.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON object mapping question ids to gold answers.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-question accuracy CSV.
    #[arg(long)]
    pub per_question_csv: Option<PathBuf>,
    /// Score histogram CSV.
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub benchmark: Option<String>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub batch: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.code();
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            io_err(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Validate(a) => cmd_validate(&cfg, a),
        Command::Synth(a) => cmd_synth(&cfg, a).map(|_| 0),
        Command::Train(a) => cmd_train(&cfg, a).map(|_| 0),
        Command::Score(a) => cmd_score(&cfg, a).map(|_| 0),
        Command::Vote(a) => cmd_vote(&cfg, a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&cfg, a).map(|_| 0),
        Command::Flops(a) => cmd_flops(&cfg, a).map(|_| 0),
    }
}

fn required(
    flag: Option<PathBuf>,
    file: &Option<PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| io_err(format!("missing --{name}")))
}

fn existing_file(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(io_err(format!("{}: no such file", path.display())))
    }
}

fn writable(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(io_err(format!(
            "{}: parent directory does not exist",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| io_err(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(domain)
}

/// Architecture from flags, then the config file, then built-in defaults.
pub fn resolve_model(flags: &ModelArgs, file: &ModelSection) -> ChronosConfig {
    let d = ChronosConfig::default();
    let mut c = ChronosConfig::new(
        flags.ltail.or(file.l_tail).unwrap_or(d.l_tail),
        flags.n_proj.or(file.n_proj).unwrap_or(d.n_proj),
        flags.n_conv.or(file.n_conv).unwrap_or(d.n_conv),
        flags
            .kernels
            .clone()
            .or_else(|| file.kernel_lengths.clone())
            .unwrap_or(d.kernel_lengths),
        flags.n_blk.or(file.n_blk).unwrap_or(d.n_blk),
    );
    if let Some(h) = flags.mlp_hidden.or(file.mlp_hidden) {
        c.mlp_hidden = h;
    }
    c
}

pub fn cmd_validate(cfg: &RunConfig, a: ValidateArgs) -> Result<i32, CliError> {
    let input = existing_file(required(a.input, &cfg.paths.input, "input")?)?;
    let (ok, diags) = validate_jsonl(&input)?;
    for d in &diags {
        eprintln!("line {}: {}", d.line, d.message);
    }
    println!("{ok} valid records, {} problems", diags.len());
    Ok(if diags.is_empty() { 0 } else { 1 })
}

pub fn cmd_synth(cfg: &RunConfig, a: SynthArgs) -> Result<(), CliError> {
    let output = required(a.output, &cfg.paths.output, "output")?;
    writable(&output)?;
    let mut spec = cfg.synth.clone().unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { spec.$field = v; })*
        };
    }
    set!(seed => seed, n_questions => n_questions, pool_size => pool_size,
        correct_fraction => correct_fraction, amplitude => amplitude, extent => extent,
        ltail => l_tail, kstat => k, wrong_concentration => wrong_concentration);
    let data = write_synth(&spec, &output)?;
    println!(
        "{} trajectories written to {}",
        data.trajectories.len(),
        output.display()
    );
    Ok(())
}

fn resolve_train(cfg: &RunConfig, a: &TrainArgs) -> TrainConfig {
    let d = TrainConfig::default();
    let f = &cfg.train;
    TrainConfig {
        learning_rate: a.lr.or(f.learning_rate).unwrap_or(d.learning_rate),
        max_epochs: a.epochs.or(f.max_epochs).unwrap_or(d.max_epochs),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        patience: a.patience.or(f.patience).unwrap_or(d.patience),
        ensemble_size: a
            .ensemble_size
            .or(f.ensemble_size)
            .unwrap_or(d.ensemble_size),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        k_stat: a.kstat.or(f.k_stat).unwrap_or(d.k_stat),
        selection: a
            .selection
            .map(|s| match s {
                SelectionArg::Test => Selection::Test,
                SelectionArg::Validation => Selection::Validation,
            })
            .or(f.selection)
            .unwrap_or(d.selection),
    }
}

#[derive(Debug, Serialize)]
struct GridSummary {
    config: ChronosConfig,
    heldout_auc: Option<f64>,
    best_epoch: usize,
    test_auc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct MemberSummary {
    file: String,
    seed: u64,
    report: TrainReport,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    config: ChronosConfig,
    train: TrainConfig,
    split_seed: u64,
    split_sizes: [usize; 3],
    grid: Vec<GridSummary>,
    members: Vec<MemberSummary>,
    ensemble_test_auc: Option<f64>,
}

pub fn member_file(i: usize) -> String {
    format!("member-{i}.chrs")
}

pub fn cmd_train(cfg: &RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let input = existing_file(required(a.input.clone(), &cfg.paths.input, "input")?)?;
    let out_dir = required(a.output.clone(), &cfg.paths.output, "output")?;
    let tconf = resolve_train(cfg, &a);
    let base = resolve_model(&a.model, &cfg.model);
    base.validate()?;
    tconf.validate()?;
    let grid_choice = a.grid.or(cfg.train.grid).unwrap_or(GridChoice::None);
    let by_question = a.group_by_question || cfg.train.group_by_question.unwrap_or(false);
    fs::create_dir_all(&out_dir).map_err(|e| io_err(format!("{}: {e}", out_dir.display())))?;

    let data = load_jsonl(&input)?;
    if data.k_stat < tconf.k_stat {
        return Err(domain(format!(
            "file stores top-{} log-probabilities but k_stat is {}",
            data.k_stat, tconf.k_stat
        )));
    }
    let split = if by_question {
        split_by_question(&data.trajectories, SplitRatios::default(), tconf.seed)?
    } else {
        split_dataset(data.trajectories.len(), SplitRatios::default(), tconf.seed)?
    };

    let mut grid_rows = Vec::new();
    let mut members: Vec<(u64, ModelParams<f64>, TrainReport)> = Vec::new();
    let config = match grid_choice {
        GridChoice::None => base.clone(),
        GridChoice::Default => {
            let grid = default_grid(base.l_tail, base.n_blk);
            let result = grid_search::<f64>(&data.trajectories, &split, &grid, &tconf)?;
            for e in &result.entries {
                grid_rows.push(GridSummary {
                    config: e.config.clone(),
                    heldout_auc: e.heldout_auc,
                    best_epoch: e.report.best_epoch,
                    test_auc: e.report.test_auc,
                });
            }
            let best = result.best().clone();
            members.push((tconf.seed, best.model, best.report));
            best.config
        }
    };
    let prep = PreparedSplit::<f64>::new(&data.trajectories, &split, tconf.k_stat, config.l_tail)?;
    let todo: Vec<u64> = (members.len() as u64..tconf.ensemble_size as u64)
        .map(|i| tconf.seed.wrapping_add(i))
        .collect();
    let trained: Vec<(u64, ModelParams<f64>, TrainReport)> = todo
        .par_iter()
        .map(|&s| train_prepared(&prep, &config, &tconf, s).map(|(m, r)| (s, m, r)))
        .collect::<Result<_, _>>()?;
    members.extend(trained);

    let models: Vec<ModelParams<f64>> = members.iter().map(|(_, m, _)| m.clone()).collect();
    let ensemble_test_auc = if split.test.is_empty() {
        None
    } else {
        let scores = split
            .test
            .par_iter()
            .map(|&i| ensemble_score_trajectory(&models, &data.trajectories[i]))
            .collect::<Result<Vec<f64>, _>>()?;
        let labels: Vec<bool> = split
            .test
            .iter()
            .map(|&i| data.trajectories[i].label == Some(true))
            .collect();
        auc(&scores, &labels).ok()
    };

    let mut metrics = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut summaries = Vec::new();
    for (i, (seed, model, report)) in members.into_iter().enumerate() {
        let file = member_file(i);
        save_checkpoint(&model, &out_dir.join(&file))?;
        for e in &report.epochs {
            let line = json!({
                "member": i,
                "seed": seed,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_auc": e.val_auc,
                "val_loss": e.val_loss,
            });
            writeln!(metrics, "{line}")?;
        }
        summaries.push(MemberSummary { file, seed, report });
    }
    metrics.flush()?;

    let summary = TrainSummary {
        config,
        train: tconf,
        split_seed: split.seed,
        split_sizes: [split.train.len(), split.validation.len(), split.test.len()],
        grid: grid_rows,
        members: summaries,
        ensemble_test_auc,
    };
    fs::write(out_dir.join("train_report.json"), to_json(&summary)? + "\n")?;
    match ensemble_test_auc {
        Some(a) => println!("ensemble test AUC {a:.4}"),
        None => println!("ensemble test AUC undefined"),
    }
    Ok(())
}

/// Loads a single checkpoint or every `member-*.chrs` in a directory.
pub fn load_models(path: &Path) -> Result<Vec<ModelParams<f64>>, CliError> {
    if path.is_dir() {
        let mut i = 0;
        let mut models = Vec::new();
        while path.join(member_file(i)).is_file() {
            models.push(load_checkpoint(&path.join(member_file(i)))?);
            i += 1;
        }
        if models.is_empty() {
            return Err(io_err(format!("{}: no member checkpoints", path.display())));
        }
        Ok(models)
    } else if path.is_file() {
        Ok(vec![load_checkpoint(path)?])
    } else {
        Err(io_err(format!("{}: no such checkpoint", path.display())))
    }
}

pub fn cmd_score(cfg: &RunConfig, a: ScoreArgs) -> Result<(), CliError> {
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let input = existing_file(required(a.input, &cfg.paths.input, "input")?)?;
    let output = a.output.or_else(|| cfg.paths.output.clone());
    if let Some(o) = &output {
        writable(o)?;
    }
    let models = load_models(&ckpt)?;
    let mut reader = TrajectoryReader::open(&input)?;
    let k = reader.header().k_stat;
    let need = models.iter().map(|m| m.k_stat).max().unwrap_or(0);
    if k < need {
        return Err(domain(format!(
            "file stores top-{k} log-probabilities but the model needs {need}"
        )));
    }
    let mut out = open_output(output.as_deref())?;
    write_header(&mut out, k)?;
    loop {
        let batch = reader
            .by_ref()
            .take(SCORE_BATCH)
            .map(|r| r.map(|(_, t)| t))
            .collect::<Result<Vec<_>, _>>()?;
        if batch.is_empty() {
            break;
        }
        let scores = batch
            .par_iter()
            .map(|t| ensemble_score_trajectory(&models, t))
            .collect::<Result<Vec<f64>, _>>()?;
        for (t, s) in batch.iter().zip(scores) {
            write_record(&mut out, t, Some(s))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_scored(input: &Path) -> Result<Vec<ScoredTrajectory<f64>>, CliError> {
    let mut reader = TrajectoryReader::open(input)?;
    let mut items = Vec::new();
    while let Some(r) = reader.next_summary() {
        let (line, rec) = r?;
        let score = rec
            .score
            .ok_or_else(|| domain(format!("line {line}: record has no score")))?;
        if !score.is_finite() {
            return Err(domain(format!("line {line}: non-finite score")));
        }
        items.push(ScoredTrajectory {
            question_id: rec.question_id,
            trajectory_id: rec.trajectory_id,
            answer: canonicalize_answer(&rec.answer),
            label: rec.label,
            score,
        });
    }
    Ok(items)
}

pub fn cmd_vote(cfg: &RunConfig, a: VoteArgs) -> Result<(), CliError> {
    let input = existing_file(required(a.input, &cfg.paths.input, "input")?)?;
    let output = a.output.or_else(|| cfg.paths.output.clone());
    if let Some(o) = &output {
        writable(o)?;
    }
    let eta = a.eta.or(cfg.eval.eta).unwrap_or(DEFAULT_ETA);
    let items = load_scored(&input)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<ScoredTrajectory<f64>>> = BTreeMap::new();
    for it in items {
        if !groups.contains_key(&it.question_id) {
            order.push(it.question_id.clone());
        }
        groups.entry(it.question_id.clone()).or_default().push(it);
    }
    let mut records = Vec::with_capacity(order.len());
    for q in &order {
        let rec = match vote_question(q, &groups[q], eta) {
            Ok(r) => r,
            Err(crate::vote::VoteError::AllNoAnswer) => VoteRecord {
                question_id: q.clone(),
                winner: NO_ANSWER.to_string(),
                eta,
                retained_ids: vec![],
                weights: BTreeMap::new(),
            },
            Err(e) => return Err(domain(format!("question {q:?}: {e}"))),
        };
        records.push(rec);
    }
    let mut out = open_output(output.as_deref())?;
    writeln!(out, "{}", to_json(&records)?)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let input = existing_file(required(a.input, &cfg.paths.input, "input")?)?;
    let gold_path = a
        .gold
        .or_else(|| cfg.paths.gold.clone())
        .map(existing_file)
        .transpose()?;
    let output = a.output.or_else(|| cfg.paths.output.clone());
    for p in [&output, &a.per_question_csv, &a.histogram_csv]
        .into_iter()
        .flatten()
    {
        writable(p)?;
    }
    let e = &cfg.eval;
    let k = a.k.or(e.k).unwrap_or(DEFAULT_EVAL_K);
    let repeats = a.repeats.or(e.repeats).unwrap_or(DEFAULT_REPEATS);
    let eta = a.eta.or(e.eta).unwrap_or(DEFAULT_ETA);
    let seed = a.seed.or(e.seed).unwrap_or(0);
    let bins = a.bins.or(e.bins).unwrap_or(20);
    let benchmark = a
        .benchmark
        .or_else(|| e.benchmark.clone())
        .unwrap_or_else(|| "benchmark".into());

    let gold: Option<BTreeMap<String, String>> = match gold_path {
        Some(p) => {
            let text = fs::read_to_string(&p)?;
            Some(serde_json::from_str(&text).map_err(|e| io_err(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let pools = build_pools(load_scored(&input)?, gold.as_ref())?;
    let report = compare_report(&pools, k, repeats, eta, seed)?;

    let mut out = open_output(output.as_deref())?;
    writeln!(out, "{}", to_json(&report)?)?;
    out.flush()?;
    if let Some(p) = &a.per_question_csv {
        let mut w = BufWriter::new(File::create(p)?);
        write_question_csv(&mut w, &report)?;
        w.flush()?;
    }
    if let Some(p) = &a.histogram_csv {
        let dist = export_distribution(&pools, bins, &benchmark)?;
        let mut w = BufWriter::new(File::create(p)?);
        write_histogram_csv(&mut w, &dist)?;
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_flops(cfg: &RunConfig, a: FlopsArgs) -> Result<(), CliError> {
    let c = resolve_model(&a.model, &cfg.model);
    c.validate()?;
    let batch = a.batch.unwrap_or(DEFAULT_FLOPS_BATCH);
    let flops = count_flops(&c, batch);
    println!("{flops}");
    eprintln!(
        "ratio to a {:.0e} FLOP generation budget: {:.3e}",
        NOMINAL_GENERATION_FLOPS,
        flops as f64 / NOMINAL_GENERATION_FLOPS
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::DEFAULT_K_STAT;

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("[model]\nl_tail = 64\n").is_ok());
        assert!(toml::from_str::<RunConfig>("[model]\nltail = 64\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file: RunConfig = toml::from_str("[model]\nl_tail = 64\nn_proj = 4\n").unwrap();
        let flags = ModelArgs {
            n_proj: Some(2),
            ..ModelArgs::default()
        };
        let c = resolve_model(&flags, &file.model);
        assert_eq!((c.l_tail, c.n_proj, c.n_conv), (64, 2, 8));
        assert_eq!(c.mlp_hidden, c.width());
    }

    #[test]
    fn default_k_stat_matches_signal_default() {
        assert_eq!(TrainConfig::default().k_stat, DEFAULT_K_STAT);
    }

    #[test]
    fn parse_errors_exit_2() {
        assert_eq!(run(["chronos", "no-such-command"]), 2);
        assert_eq!(run(["chronos", "flops", "--batch", "x"]), 2);
    }
}

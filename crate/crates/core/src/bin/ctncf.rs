//! Command-line driver: data preparation, training, evaluation, multi-seed
//! reports, filter sweeps and the attention ablation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctncf::data::{
    is_split_cache, load_split, parse_amazon_csv, parse_movielens, save_split, split_721, to_implicit, DataFormat,
    SplitDataset,
};
use ctncf::experiment::{
    ablate, ablate_rows, replay_args, sweep, sweep_rows, write_csv, OutputDir, RunManifest, ABLATION_VARIANTS,
    FILTER_GRID, MANIFEST_FILE,
};
use ctncf::metrics::{evaluate, format_table, report_rows, write_report_csv, CandidateMode, EvalTarget, DEFAULT_KS};
use ctncf::plot::{bar_chart, line_chart};
use ctncf::train::{append_log_csv, run_thrice, train_logged, Checkpoint, TrainConfig};
use ctncf::{Error, MfMode, ModelConfig, ModelKind, Result};

#[derive(Parser, Debug)]
#[command(name = "ctncf", version, about = "CTNCF recommender experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and split a rating log into a reusable cache.
    PrepareData(PrepareArgs),
    /// Train one model and write its checkpoint and training log.
    Train(TrainCmd),
    /// Score a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Train each model with three seeds and write the mean test metrics.
    Report(ReportArgs),
    /// CTNCF test metrics across filter counts.
    Sweep(ExperimentArgs),
    /// CTNCF with and without the transformer layers.
    Ablate(ExperimentArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Raw rating log or a prepared split cache. Repeatable for sweep and ablate.
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    /// Raw log format; inferred from the extension when omitted (.csv → amazon).
    #[arg(long)]
    format: Option<DataFormat>,
    /// Keep only the first N users.
    #[arg(long)]
    max_users: Option<usize>,
    #[arg(long, default_value_t = 0)]
    min_user_interactions: usize,
    #[arg(long, default_value_t = 0)]
    min_item_interactions: usize,
    /// Dataset label for outputs (default: derived from the path).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "ctncf")]
    model: ModelKind,
    #[arg(long, default_value_t = 64)]
    filters: usize,
    #[arg(long, default_value_t = 2)]
    transformer_layers: usize,
    #[arg(long, default_value = "outer")]
    mf_mode: MfMode,
    #[arg(long, default_value_t = 1)]
    heads: usize,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    negatives: usize,
    #[arg(long, default_value_t = 0.0)]
    l2_mf: f64,
    #[arg(long, default_value_t = 0.01)]
    l2_cnn: f64,
    /// Candidate set for validation and test ranking.
    #[arg(long, default_value = "full")]
    candidates: CandidateMode,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "full")]
    candidates: CandidateMode,
    /// Split seed when `--dataset` is a raw log.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Comma-separated model kinds; overrides `--model`.
    #[arg(long, value_delimiter = ',')]
    models: Vec<ModelKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// A run.json written by an earlier command.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(clap::Error),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(argv: Vec<String>) -> std::result::Result<(), Failure> {
    let cli = Cli::try_parse_from(std::iter::once("ctncf".to_owned()).chain(argv.iter().cloned()))
        .map_err(Failure::Usage)?;
    match cli.command {
        Command::PrepareData(a) => prepare(a, argv)?,
        Command::Train(a) => train_cmd(a, argv)?,
        Command::Evaluate(a) => evaluate_cmd(a, argv)?,
        Command::Report(a) => report_cmd(a, argv)?,
        Command::Sweep(a) => sweep_cmd(a, argv)?,
        Command::Ablate(a) => ablate_cmd(a, argv)?,
        Command::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            if manifest.args.first().map(String::as_str) == Some("replay") {
                return Err(Error::Config("a replay manifest cannot be replayed".into()).into());
            }
            return run(replay_args(&manifest, &a.out));
        }
    }
    Ok(())
}

fn dataset_name(path: &Path, explicit: Option<&str>) -> String {
    if let Some(n) = explicit {
        return n.to_owned();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let generic = ["ratings", "split", "data", ""];
    if generic.contains(&stem.as_str()) {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

/// Loads a split cache, or parses, filters and splits a raw log.
fn load_dataset(path: &Path, data: &DataArgs, seed: u64) -> Result<SplitDataset> {
    if !path.exists() {
        return Err(Error::Data(format!("dataset not found: {}", path.display())));
    }
    if is_split_cache(path) {
        let split = load_split(path)?;
        return Ok(match data.max_users {
            Some(n) => split.truncate_users(n),
            None => split,
        });
    }
    let format = data.format.unwrap_or_else(|| {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            DataFormat::Amazon
        } else {
            DataFormat::Movielens
        }
    });
    let (mut log, report) = match format {
        DataFormat::Movielens => parse_movielens(path)?,
        DataFormat::Amazon => parse_amazon_csv(path)?,
    };
    if report.malformed > 0 {
        eprintln!("{}: skipped {} malformed lines", path.display(), report.malformed);
    }
    if let Some(n) = data.max_users {
        log = log.restrict_users(n);
    }
    if data.min_user_interactions > 0 || data.min_item_interactions > 0 {
        log = log.k_core(data.min_user_interactions, data.min_item_interactions);
    }
    if log.records.is_empty() {
        return Err(Error::Data(format!("{}: no ratings left after filtering", path.display())));
    }
    Ok(split_721(&to_implicit(&log), seed))
}

fn single_dataset(data: &DataArgs) -> Result<&Path> {
    match data.dataset.as_slice() {
        [one] => Ok(one),
        _ => Err(Error::Config("this command takes exactly one --dataset".into())),
    }
}

fn model_config(m: &ModelArgs) -> Result<ModelConfig> {
    let mut c = ModelConfig::new(m.model);
    c.ctncf.num_filters = m.filters;
    c.ctncf.num_transformer_layers = m.transformer_layers;
    c.ctncf.mf_mode = m.mf_mode;
    c.ctncf.num_heads = m.heads;
    if c.kind == ModelKind::Ctncf {
        c.ctncf.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(c)
}

fn train_config(f: &FitArgs, seed: u64) -> Result<TrainConfig> {
    let tc = TrainConfig {
        lr: f.lr,
        l2_mf: f.l2_mf,
        l2_cnn: f.l2_cnn,
        negatives_per_positive: f.negatives,
        batch_size: f.batch_size,
        max_epochs: f.epochs,
        patience: f.patience,
        seed,
        val_candidates: f.candidates,
    };
    tc.validate()?;
    Ok(tc)
}

fn finish(dir: OutputDir, mut manifest: RunManifest) -> Result<()> {
    let mut outputs: Vec<String> = std::fs::read_dir(dir.path())
        .map_err(|e| Error::io(dir.path(), e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    outputs.push(MANIFEST_FILE.to_owned());
    outputs.sort();
    manifest.outputs = outputs;
    dir.write(MANIFEST_FILE, manifest.to_json()?.as_bytes())?;
    let path = dir.commit()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn prepare(a: PrepareArgs, argv: Vec<String>) -> Result<()> {
    let path = single_dataset(&a.data)?;
    let split = load_dataset(path, &a.data, a.seed)?;
    let dir = OutputDir::create(&a.out)?;
    save_split(&split, dir.file("split.bin"))?;
    let mut manifest = RunManifest::new("prepare-data", argv, a.seed);
    manifest.detail("dataset", dataset_name(path, a.data.name.as_deref()))?;
    manifest.detail("users", split.num_users())?;
    manifest.detail("items", split.num_items())?;
    manifest.detail("train_positives", split.num_train())?;
    manifest.detail("evaluable_users", split.evaluable_users().count())?;
    println!(
        "{} users, {} items, {} training positives, {} evaluable users",
        split.num_users(),
        split.num_items(),
        split.num_train(),
        split.evaluable_users().count()
    );
    finish(dir, manifest)
}

fn train_cmd(a: TrainCmd, argv: Vec<String>) -> Result<()> {
    let path = single_dataset(&a.data)?;
    let split = load_dataset(path, &a.data, a.seed)?;
    let config = model_config(&a.model)?;
    let tc = train_config(&a.fit, a.seed)?;
    let dir = OutputDir::create(&a.out)?;
    let log_path = dir.file("train_log.csv");
    let out = train_logged(&config, &split, &tc, &mut |row| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val ndcg@10 {:.5}  {:.1}s",
            row.epoch, row.loss, row.val_ndcg10, row.elapsed_s
        );
        append_log_csv(&log_path, std::slice::from_ref(row))
    })?;
    out.checkpoint.save(dir.file("checkpoint.bin"))?;
    let mut manifest = RunManifest::new("train", argv, a.seed);
    manifest.detail("model", config.kind.name())?;
    manifest.detail("best_epoch", out.checkpoint.epoch)?;
    manifest.detail("best_val_ndcg10", out.checkpoint.best_val_ndcg10)?;
    manifest.detail("epochs_run", out.epochs_run)?;
    manifest.detail("train_config", &tc)?;
    finish(dir, manifest)
}

fn evaluate_cmd(a: EvaluateArgs, argv: Vec<String>) -> Result<()> {
    let path = single_dataset(&a.data)?;
    let split = load_dataset(path, &a.data, a.seed)?;
    if !a.checkpoint.exists() {
        return Err(Error::Data(format!("checkpoint not found: {}", a.checkpoint.display())));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    if (ck.num_users, ck.num_items) != (split.num_users(), split.num_items()) {
        return Err(Error::Data(format!(
            "checkpoint covers {}×{} users×items but the dataset has {}×{}",
            ck.num_users,
            ck.num_items,
            split.num_users(),
            split.num_items()
        )));
    }
    let seed = ck.seed;
    let kind = ck.config.kind;
    let model = ck.into_model()?;
    let mut report = evaluate(&model, &split, &DEFAULT_KS, a.candidates, EvalTarget::Test)?;
    report.seeds = vec![seed];
    let name = dataset_name(path, a.data.name.as_deref());
    print!("{}", format_table(kind.name(), &name, &report));
    let dir = OutputDir::create(&a.out)?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &report_rows(kind.name(), &name, &report, 1))?;
    dir.write("report.csv", &buf)?;
    let mut manifest = RunManifest::new("evaluate", argv, seed);
    manifest.detail("users_evaluated", report.users_evaluated)?;
    manifest.detail("users_skipped", report.users_skipped)?;
    finish(dir, manifest)
}

fn report_cmd(a: ReportArgs, argv: Vec<String>) -> Result<()> {
    let path = single_dataset(&a.data)?;
    let split = load_dataset(path, &a.data, a.seed)?;
    let tc = train_config(&a.fit, a.seed)?;
    let name = dataset_name(path, a.data.name.as_deref());
    let kinds = if a.models.is_empty() { vec![a.model.model] } else { a.models.clone() };
    let mut rows = Vec::new();
    let mut manifest = RunManifest::new("report", argv, a.seed);
    for kind in kinds {
        let config = model_config(&ModelArgs { model: kind, ..a.model.clone() })?;
        let runs = run_thrice(&config, &split, &tc, a.seed, &DEFAULT_KS, a.fit.candidates)?;
        print!("{}", format_table(kind.name(), &name, &runs.mean));
        rows.extend(report_rows(kind.name(), &name, &runs.mean, runs.runs.len()));
        manifest.detail(&format!("{}_runs", kind.name()), &runs.runs)?;
    }
    let dir = OutputDir::create(&a.out)?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows)?;
    dir.write("report.csv", &buf)?;
    finish(dir, manifest)
}

fn sweep_cmd(a: ExperimentArgs, argv: Vec<String>) -> Result<()> {
    let config = model_config(&a.model)?;
    let tc = train_config(&a.fit, a.seed)?;
    let dir = OutputDir::create(&a.out)?;
    let mut manifest = RunManifest::new("sweep", argv, a.seed);
    let mut recall_series = Vec::new();
    let mut ndcg_series = Vec::new();
    for path in &a.data.dataset {
        let name = dataset_name(path, if a.data.dataset.len() == 1 { a.data.name.as_deref() } else { None });
        let split = load_dataset(path, &a.data, a.seed)?;
        let cells = sweep(&config, &split, &tc, a.seed, a.fit.candidates, &FILTER_GRID);
        for c in &cells {
            match &c.outcome {
                Ok(r) => eprintln!("{name} filters {:>3}: ndcg@10 {:.5}", c.filters, r.mean.ndcg_at(10).unwrap_or(f64::NAN)),
                Err(e) => eprintln!("{name} filters {:>3}: failed: {e}", c.filters),
            }
        }
        let failures: Vec<(usize, String)> =
            cells.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| (c.filters, e.clone()))).collect();
        manifest.detail(&format!("{name}_failed_cells"), failures)?;
        let rows = sweep_rows(&cells);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        dir.write(&format!("sweep_{name}.csv"), &buf)?;
        recall_series.push((name.clone(), rows.iter().map(|r| r.recall10).collect::<Vec<_>>()));
        ndcg_series.push((name, rows.iter().map(|r| r.ndcg10).collect::<Vec<_>>()));
    }
    let ticks: Vec<String> = FILTER_GRID.iter().map(usize::to_string).collect();
    dir.write(
        "sweep_recall10.svg",
        line_chart("Recall@10 vs filters", "filters", "Recall@10", &ticks, &recall_series).as_bytes(),
    )?;
    dir.write(
        "sweep_ndcg10.svg",
        line_chart("NDCG@10 vs filters", "filters", "NDCG@10", &ticks, &ndcg_series).as_bytes(),
    )?;
    finish(dir, manifest)
}

fn ablate_cmd(a: ExperimentArgs, argv: Vec<String>) -> Result<()> {
    let config = model_config(&a.model)?;
    let tc = train_config(&a.fit, a.seed)?;
    let dir = OutputDir::create(&a.out)?;
    let mut manifest = RunManifest::new("ablate", argv, a.seed);
    for path in &a.data.dataset {
        let name = dataset_name(path, if a.data.dataset.len() == 1 { a.data.name.as_deref() } else { None });
        let split = load_dataset(path, &a.data, a.seed)?;
        let variants = ablate(&config, &split, &tc, a.seed, a.fit.candidates)?;
        let mut calls = serde_json::Map::new();
        for v in &variants {
            println!("{name} attention {}: {} attention calls", v.variant, v.runs.attention_calls);
            calls.insert(v.variant.clone(), v.runs.attention_calls.into());
        }
        manifest.detail(&format!("{name}_attention_calls"), calls)?;
        let rows = ablate_rows(&variants);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        dir.write(&format!("ablate_{name}.csv"), &buf)?;
        let bars: Vec<(String, Vec<f64>)> = rows.iter().map(|r| (r.variant.clone(), vec![r.recall10, r.ndcg10])).collect();
        debug_assert_eq!(bars.len(), ABLATION_VARIANTS.len());
        let svg = bar_chart(
            &format!("Attention ablation ({name})"),
            "metric value",
            &["Recall@10".to_owned(), "NDCG@10".to_owned()],
            &bars,
        );
        dir.write(&format!("ablate_{name}.svg"), svg.as_bytes())?;
    }
    finish(dir, manifest)
}

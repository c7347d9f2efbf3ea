//! `shedd`: generate the synthetic benchmark, train, evaluate, run the
//! ablation suite and summarise results.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 runtime.

mod error;
mod run;
mod setup;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shedd::data::write_dataset;
use shedd::eval::{evaluate, export_embeddings};
use shedd::model::InferenceModel;
use shedd::nn::checkpoint::load_checkpoint;
use shedd::trainer::{apply_ablation, target_split, AblationRow, ExperimentConfig};

use error::{CliError, CliResult, Context};
use run::{run_seeds, RunControl};
use setup::{
    load_config, load_data, prepare_out, read_json, DataOrigin, Provenance, CONFIG_FILE, PROVENANCE_FILE,
    SOURCE_STEM, TARGET_STEM,
};

#[derive(Parser)]
#[command(name = "shedd", version, about = "Semi-supervised heterogeneous domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic source/target benchmark to a directory.
    Generate(GenerateArgs),
    /// Train one configuration for every seed.
    Train(RunArgs),
    /// Score a finished run on its test set.
    Evaluate(EvaluateArgs),
    /// Train every ablation row for every seed and tabulate the results.
    Ablate(RunArgs),
    /// Summarise finished runs by method and label budget.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_defaults")]
    out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    /// Print the complete default config and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `generate`; the benchmark is rendered in memory
    /// from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Labelled target samples per class, overriding the config.
    #[arg(long)]
    budget: Option<usize>,
    /// Ablation row (abla1..abla6, full). For `ablate`, restricts the suite
    /// to this row.
    #[arg(long)]
    ablation: Option<AblationRow>,
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Continue interrupted runs in `--out`, keeping finished seeds.
    #[arg(long)]
    resume: bool,
    /// Stop each seed after this many epochs, leaving state for `--resume`.
    #[arg(long)]
    stop_after_epochs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// A seed directory written by `train` or `ablate`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write invariant embeddings of test samples as CSV.
    #[arg(long)]
    export_embeddings: Option<PathBuf>,
    /// Samples per class for `--export-embeddings`.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, or directories containing them.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn generate(args: GenerateArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref())?;
    if args.print_defaults {
        println!("{}", ExperimentConfig::default().to_json());
        return Ok(());
    }
    let out = args.out.expect("clap requires --out");
    prepare_out(&out, args.force, false)?;
    let (source, target, origin) = load_data(&cfg, None)?;
    write_dataset(&out, SOURCE_STEM, &source)?;
    write_dataset(&out, TARGET_STEM, &target)?;
    let mut provenance = Provenance::new("generate", &cfg, Some(origin))?;
    provenance.seed = Some(cfg.benchmark.seed);
    provenance.write(&out, &cfg)?;
    for ds in [&source, &target] {
        let g = ds.geometry;
        println!(
            "{}: {} x {} x {} x {}",
            ds.modality,
            ds.len(),
            g.channels,
            g.height,
            g.width
        );
    }
    Ok(())
}

fn configure(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(b) = args.budget {
        cfg.train.labels_per_class = b;
    }
    if let Some(row) = args.ablation {
        cfg = apply_ablation(&cfg, row);
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::new(error::CONFIG, "no seeds to run"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn control(args: &RunArgs) -> RunControl {
    RunControl {
        resume: args.resume,
        stop_after_epochs: args.stop_after_epochs,
    }
}

fn train(args: RunArgs) -> CliResult<()> {
    let cfg = configure(&args)?;
    prepare_out(&args.out, args.force, args.resume)?;
    let (source, target, origin) = load_data(&cfg, args.data.as_deref())?;
    let mut provenance = Provenance::new("train", &cfg, Some(origin))?;
    provenance.ablation = args.ablation.map(|r| r.name().to_string());
    let Some(reports) = run_seeds(&cfg, &source, &target, &args.out, &provenance, control(&args))? else {
        return Ok(());
    };
    let f1 = tables::write_seed_summary(&args.out, &reports)?;
    println!(
        "weighted F1 {} over {} seed(s), {} labels per class",
        f1.percent(),
        f1.runs,
        cfg.train.labels_per_class
    );
    Ok(())
}

fn ablate(args: RunArgs) -> CliResult<()> {
    let mut cfg = configure(&args)?;
    let rows: Vec<AblationRow> = match args.ablation {
        Some(row) => vec![row],
        None => AblationRow::ALL.to_vec(),
    };
    prepare_out(&args.out, args.force, args.resume)?;
    let (source, target, origin) = load_data(&cfg, args.data.as_deref())?;
    let mut summaries = Vec::new();
    let mut complete = true;
    for row in rows {
        cfg = apply_ablation(&cfg, row);
        let mut provenance = Provenance::new("ablate", &cfg, Some(origin.clone()))?;
        provenance.ablation = Some(row.name().to_string());
        let dir = args.out.join(row.name());
        match run_seeds(&cfg, &source, &target, &dir, &provenance, control(&args))? {
            Some(reports) => summaries.push((row, tables::write_seed_summary(&dir, &reports)?)),
            None => complete = false,
        }
    }
    if complete {
        print!("{}", tables::write_ablation_table(&args.out, &summaries)?);
    }
    Ok(())
}

fn evaluate_run(args: EvaluateArgs) -> CliResult<()> {
    let run = &args.run;
    let cfg: ExperimentConfig = read_json(&run.join(CONFIG_FILE))?;
    let provenance: Provenance = read_json(&run.join(PROVENANCE_FILE))?;
    let seed = provenance
        .seed
        .ok_or_else(|| CliError::data(format!("{}: provenance has no seed", run.display())))?;
    let data_dir = args.data.clone().or(match &provenance.data {
        Some(DataOrigin::Loaded { dir, .. }) => Some(dir.clone()),
        _ => None,
    });
    let (_, target, _) = load_data(&cfg, data_dir.as_deref())?;
    let ck_dir = run.join("checkpoints").join("inference");
    let model = load_checkpoint(&ck_dir)
        .and_then(|ck| InferenceModel::from_checkpoint(&ck))
        .data_context(|| format!("loading {}", ck_dir.display()))?;
    let split = target_split(&cfg, &target, seed)?;
    let report = evaluate(&model, &target, &split.unlabelled, cfg.train.eval_batch_size)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    if let Some(path) = &args.export_embeddings {
        let ids = export_embeddings(&model, &target, &split.unlabelled, args.per_class, seed, path)?;
        eprintln!("wrote {} embeddings to {}", ids.len(), path.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> CliResult<()> {
    let runs = tables::collect_runs(&args.runs)?;
    prepare_out(&args.out, args.force, false)?;
    print!("{}", tables::write_report(&args.out, &runs)?);
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    setup::threads()?;
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_run(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

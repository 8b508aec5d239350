use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cardiopulm::cohort::Task;
use cardiopulm::eval::{AblationReport, EvalReport};
use cardiopulm::fusion::Variant;
use cardiopulm::pipeline::{read_json, Pipeline, PipelineConfig, Stage};
use cardiopulm::Result;

/// Explainable cardiopulmonary risk pipeline over a cached run directory.
///
/// Exit codes: 0 success, 2 validation error, 3 missing upstream output,
/// 4 numeric failure.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Pipeline config JSON; defaults apply to absent sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-scan stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Restricts train, evaluate and explain to one task.
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Fusion variant for train, evaluate and explain.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample a phantom cohort, or ingest `input_manifest`.
    Simulate,
    /// Resample and clip every volume.
    Preprocess,
    /// Locate the heart ROI of every scan.
    Locate,
    /// Score pulmonary findings.
    Findings,
    /// Run the knowledge-graph reasoning.
    Reason,
    /// Estimate or load lung-risk trajectories.
    Lungrisk,
    /// Extract cardiac features from the ROIs.
    Features,
    /// Train the fusion head.
    Train,
    /// Evaluate on the test subjects with bootstrap intervals.
    Evaluate,
    /// Train and evaluate all six variants on one split.
    Ablate,
    /// Attribute predictions to voxels and mechanisms.
    Explain,
    /// Every stage in order, for both tasks.
    RunAll,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Simulate => Stage::Simulate,
            Command::Preprocess => Stage::Preprocess,
            Command::Locate => Stage::Locate,
            Command::Findings => Stage::Findings,
            Command::Reason => Stage::Reason,
            Command::Lungrisk => Stage::LungRisk,
            Command::Features => Stage::Features,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::Ablate => Stage::Ablate,
            Command::Explain => Stage::Explain,
            Command::RunAll => return None,
        })
    }
}

fn print_report(dir: &std::path::Path, task: Task) -> Result<()> {
    let report: EvalReport = read_json(dir.join(format!("report_{}.json", task.name())))?;
    print!("{}", cardiopulm::eval::render_table(std::slice::from_ref(&report)));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(variant) = cli.variant {
        config.variant = variant;
    }
    let pipeline = Pipeline::new(config, &cli.run_dir)?;
    let tasks: Vec<Task> = cli.task.map_or_else(|| Task::ALL.to_vec(), |t| vec![t]);

    let Some(stage) = cli.command.stage() else {
        pipeline.run_all()?;
        for task in Task::ALL {
            print_report(&pipeline.run_dir().reports_dir(), task)?;
        }
        let ablation: AblationReport = read_json(pipeline.run_dir().reports_dir().join("ablation.json"))?;
        print!("{}", ablation.table());
        println!("reports in {}", pipeline.run_dir().reports_dir().display());
        return Ok(());
    };
    if stage.per_task() {
        for &task in &tasks {
            let dir = pipeline.run(stage, Some(task))?;
            if stage == Stage::Evaluate {
                print_report(&dir, task)?;
            }
            println!("{} ({}): {}", stage, task.name(), dir.display());
        }
    } else {
        let dir = pipeline.run(stage, None)?;
        if stage == Stage::Ablate {
            let ablation: AblationReport = read_json(dir.join("ablation.json"))?;
            print!("{}", ablation.table());
        }
        println!("{stage}: {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

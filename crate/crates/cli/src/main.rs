use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flyknot::config::ExperimentConfig;
use flyknot::demo::{build_demonstration, select_timing, Annotation, RawCapture};
use flyknot::ilc::{run_ilc, sensitivity_sweep, transfer_experiment, IlcRun};
use flyknot::io::{self, RolloutFrames};
use flyknot::Error;

#[derive(Parser)]
#[command(name = "flyknot", version, about = "Learn dynamic rope swings from a demonstration")]
struct Cli {
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Demonstration ingestion.
    Demo {
        #[command(subcommand)]
        command: DemoCommand,
    },
    /// Learning runs.
    Ilc {
        #[command(subcommand)]
        command: IlcCommand,
    },
    /// Data export for plotting.
    Export {
        #[command(subcommand)]
        command: ExportCommand,
    },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Print the timing selected for a capture.
    Inspect { capture: PathBuf, annotation: PathBuf },
}

#[derive(Subcommand)]
enum IlcCommand {
    /// Learn a command for one plant.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Learn on every plant, then start from each learned command on every other plant.
    Transfer {
        /// Directory of config files, one per plant; the first (by name) supplies the demonstration.
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Repeat learning over a grid of learner rope models.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Convert a rollout file, or one trial of a run log, to another format.
    Rollout {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Trial of a run log to export (default: the last).
        #[arg(long)]
        trial: Option<usize>,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

enum Failure {
    Learning(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("thread pool is built once");
    }
    let outcome = match cli.command {
        Command::Demo { command: DemoCommand::Inspect { capture, annotation } } => inspect(&capture, &annotation),
        Command::Ilc { command: IlcCommand::Run { config } } => ilc_run(&config),
        Command::Ilc { command: IlcCommand::Transfer { configs, output } } => transfer(&configs, output),
        Command::Ilc { command: IlcCommand::Sweep { grid, config, output } } => sweep(&grid, &config, output),
        Command::Export { command: ExportCommand::Rollout { input, format, trial, output } } => {
            export(&input, format, trial, output.as_deref())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Learning(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn inspect(capture: &Path, annotation: &Path) -> Outcome {
    let raw = RawCapture::read(capture)?;
    let ann = Annotation::read(annotation)?;
    let timing = select_timing(&raw, &ann)?;
    let demo = build_demonstration(&raw, &timing)?;
    println!("samples      {}", raw.len());
    println!("t0           {:.4} s", timing.t0);
    println!("t_c          {:.4} s", timing.t_c);
    println!("t_f          {:.4} s", timing.t_f);
    println!("t_f - t_c    {:.3} s", timing.t_f - timing.t_c);
    println!("T            {:.4} s", timing.duration());
    println!("hand peak    {:.4} s", timing.t_peak);
    println!("rope links   {}", demo.links());
    println!("marker  missing  longest_gap");
    for k in 0..raw.marker_count() {
        let (mut missing, mut run, mut longest) = (0, 0, 0);
        for row in &raw.markers {
            if row[k].is_none() {
                missing += 1;
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        println!("{k:>6}  {missing:>7}  {longest:>11}");
    }
    Ok(())
}

fn print_trials(run: &IlcRun) {
    println!("iteration  cost        rms_error   success");
    for r in &run.records {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!("{:>9}  {:<10}  {:<10}  {}", r.iteration, f(r.objective), f(r.rms_error), r.success);
    }
}

fn ilc_run(path: &Path) -> Outcome {
    let cfg = ExperimentConfig::load(path)?;
    let demo = cfg.demonstration()?;
    let learner = cfg.learner()?;
    let plant = cfg.plant_config()?;
    match run_ilc(&demo, &learner, &plant, &cfg.ilc, None) {
        Ok(run) => {
            let files = io::write_ilc_run(&cfg.paths.output, &run, cfg.seed)?;
            print_trials(&run);
            println!("log written to {}", files.log.display());
            match run.trials_to_success() {
                Some(n) => {
                    println!("success after {n} trials");
                    Ok(())
                }
                None => Err(Failure::Learning(format!(
                    "no success within {} trials",
                    cfg.ilc.max_iterations
                ))),
            }
        }
        Err(e) => {
            io::write_run(&cfg.paths.output, &e.records, cfg.seed)?;
            Err(Failure::Learning(e.to_string()))
        }
    }
}

fn transfer(dir: &Path, output: Option<PathBuf>) -> Outcome {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Failure::Usage(format!("{}: need at least two config files", dir.display())));
    }
    let configs = paths.iter().map(ExperimentConfig::load).collect::<Result<Vec<_>, _>>()?;
    let first = &configs[0];
    let demo = first.demonstration()?;
    let learner = first.learner()?;
    let plants = configs.iter().map(|c| c.plant_config()).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<String> =
        paths.iter().map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned()).collect();

    let runs: Vec<_> = {
        use rayon::prelude::*;
        plants.par_iter().map(|plant| run_ilc(&demo, &learner, plant, &first.ilc, None)).collect()
    };
    let mut learned = Vec::new();
    for (label, run) in labels.iter().zip(runs) {
        let run = run.map_err(|e| Failure::Learning(format!("{label}: {e}")))?;
        match run.learned_command() {
            Some(c) => learned.push((label.clone(), c.clone())),
            None => return Err(Failure::Learning(format!("{label}: no success within {} trials", first.ilc.max_iterations))),
        }
    }
    let matrix = transfer_experiment(&demo, &learner, &learned, &plants, &first.ilc, first.seed)
        .map_err(|e| Failure::Learning(e.to_string()))?;
    let csv = matrix.to_csv(first.seed);
    let out = output.unwrap_or_else(|| first.paths.output.join("transfer.csv"));
    io::write_atomic(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn sweep(grid: &Path, config: &Path, output: Option<PathBuf>) -> Outcome {
    let text = std::fs::read_to_string(grid).map_err(|e| Failure::Usage(format!("{}: {e}", grid.display())))?;
    let points = io::parse_grid(&text).map_err(|e| Failure::Usage(format!("{}: {e}", grid.display())))?;
    let cfg = ExperimentConfig::load(config)?;
    let demo = cfg.demonstration()?;
    let rows = sensitivity_sweep(&demo, &cfg.plant_config()?, &points, &cfg.learner()?, &cfg.ilc, None)?;
    let csv = io::sweep_csv(&rows, cfg.ilc.max_iterations, cfg.seed);
    let out = output.unwrap_or_else(|| cfg.paths.output.join("sweep.csv"));
    io::write_atomic(&out, &csv)?;
    print!("{csv}");
    for r in rows.iter().filter(|r| r.failure.is_some()) {
        eprintln!("k = {}, m_e = {}: {}", r.point.stiffness, r.point.end_mass, r.failure.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn export(input: &Path, format: Format, trial: Option<usize>, output: Option<&Path>) -> Outcome {
    let frames = match RolloutFrames::read(input) {
        Ok(f) if trial.is_none() => f,
        first => {
            let log = io::read_run_log(input).map_err(|e| match first {
                Err(rollout) => Failure::Usage(format!("{}: not a rollout ({rollout}) or run log ({e})", input.display())),
                Ok(_) => Failure::Usage(format!("{}: --trial needs a run log", input.display())),
            })?;
            let entry = match trial {
                Some(k) => log.iter().find(|r| r.iteration == k),
                None => log.last(),
            }
            .ok_or_else(|| Failure::Usage(format!("{}: no such trial", input.display())))?;
            RolloutFrames::read(input.parent().unwrap_or(Path::new(".")).join(&entry.rollout))?
        }
    };
    let text = match format {
        Format::Jsonl => frames.to_jsonl()?,
        Format::Csv => frames.to_csv()?,
    };
    match output {
        Some(p) => io::write_atomic(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rzero_core::curation::{read_dataset, write_stats, CurationStats};
use rzero_core::orchestrator::{
    read_checkpoint, read_records, resolve_checkpoint, BackendKind, Engine, IterationState, LoopConfig, Phase,
};
use rzero_core::Error;

#[derive(Parser)]
#[command(name = "rzero", version, about = "Challenger/Solver co-evolution from zero data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Preset name (default, toy-smoke, toy-distractor) or TOML file.
    /// Defaults to toy-smoke, or to the checkpoint's config when resuming.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Checkpoint directory, or a run directory to continue from its latest checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run directory for a fresh run.
    #[arg(long, default_value = "rzero-run")]
    out: PathBuf,
    /// Override the number of iterations.
    #[arg(long)]
    iterations: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Toy,
    Endpoint,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full loop (or the rest of it when resuming).
    Loop(RunArgs),
    /// Run the next challenger phase.
    ChallengerPhase(RunArgs),
    /// Sample the question pool and build the curated dataset.
    Curate(RunArgs),
    /// Train the solver on the latest curated dataset (needs --resume).
    SolverPhase(RunArgs),
    /// Summarize a dataset or metrics file.
    Inspect {
        path: PathBuf,
    },
    /// Parse and validate a configuration, then print it as TOML.
    ValidateConfig {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::Io(_) | Error::Format { .. } | Error::Json(_) => 3,
        Error::Transport { .. } => 4,
        Error::EmptyCurriculum { .. } => 5,
        _ => 1,
    }
}

fn apply_overrides(c: &mut LoopConfig, args: &RunArgs) {
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(b) = args.backend {
        c.backend = match b {
            Backend::Toy => BackendKind::Toy,
            Backend::Endpoint => BackendKind::Endpoint,
        };
    }
    if let Some(t) = args.iterations {
        c.iterations = t;
    }
}

/// Engine and state for a fresh run or a resumed one.
fn open(args: &RunArgs) -> Result<(Engine, IterationState), Error> {
    let explicit = args.config.as_deref().map(LoopConfig::load).transpose()?;
    match &args.resume {
        Some(ckpt) => {
            let mut config = match explicit {
                Some(c) => c,
                None => read_checkpoint(&resolve_checkpoint(ckpt)?)?.1,
            };
            apply_overrides(&mut config, args);
            config.validate()?;
            Engine::resume(ckpt, Some(config))
        }
        None => {
            let mut config = match explicit {
                Some(c) => c,
                None => LoopConfig::toy_smoke(),
            };
            apply_overrides(&mut config, args);
            let engine = Engine::new(config, &args.out)?;
            let state = engine.init()?;
            Ok((engine, state))
        }
    }
}

fn run_single(args: &RunArgs, phase: Phase) -> Result<(), Error> {
    let (engine, mut state) = open(args)?;
    if phase == Phase::Curation && args.resume.is_none() {
        // fresh curation uses the untrained challenger
        state.next_phase = Phase::Curation;
    }
    if state.next_phase != phase {
        return Err(Error::Config(format!(
            "checkpoint is positioned before the {} phase, not {}",
            state.next_phase.name(),
            phase.name()
        )));
    }
    let next = engine.step(&state)?;
    report(&engine, &next);
    Ok(())
}

fn report(engine: &Engine, state: &IterationState) {
    println!("run directory: {}", engine.run_dir().display());
    println!("next: iteration {} {}", state.iteration, state.next_phase.name());
    if let Some(d) = &state.dataset_path {
        println!("dataset: {}", engine.run_dir().join(d).display());
    }
    println!("metrics: {}", engine.metrics_path().display());
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Loop(args) => {
            let (engine, state) = open(&args)?;
            let out = engine.run_to_end(state)?;
            report(&engine, &out.state);
            for m in out.metrics.iter().filter(|m| m.solver_accuracy.is_some()) {
                if let (Some(acc), Some(phase)) = (m.mean_solver_accuracy(), m.phase) {
                    println!("iteration {} {:<10} mean solver accuracy {acc:.4}", m.iteration, phase.name());
                }
            }
            Ok(())
        }
        Command::ChallengerPhase(args) => run_single(&args, Phase::Challenger),
        Command::Curate(args) => run_single(&args, Phase::Curation),
        Command::SolverPhase(args) => {
            if args.resume.is_none() {
                return Err(Error::Config("solver-phase needs --resume <checkpoint> after a curation".into()));
            }
            run_single(&args, Phase::Solver)
        }
        Command::Inspect { path } => inspect(&path),
        Command::ValidateConfig { config, seed } => {
            let mut c = LoopConfig::load(&config)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            c.validate()?;
            print!("{}", c.to_toml_string());
            println!("# config hash {}", c.hash());
            Ok(())
        }
    }
}

fn inspect(path: &Path) -> Result<(), Error> {
    let first = std::fs::read_to_string(path)?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    if first.contains("\"rzero-dataset\"") {
        let (header, records) = read_dataset(path)?;
        println!("dataset iteration {} ({} records)", header.iteration, header.record_count);
        let stats = CurationStats::from_records(&records);
        write_stats(std::io::stdout().lock(), &stats)?;
        return Ok(());
    }
    let records = read_records(path)?;
    println!("{} metrics records", records.len());
    for r in &records {
        let phase = r.phase.map(Phase::name).unwrap_or("-");
        let mut line = format!("iteration {:>3} {:<10}", r.iteration, phase);
        if r.skipped {
            line.push_str(" skipped");
        }
        if let Some(v) = r.mean_composite_reward {
            line.push_str(&format!(" reward={v:.4}"));
        }
        if let (Some(k), Some(v)) = (r.kept, r.valid) {
            line.push_str(&format!(" kept={k}/{v}"));
        }
        if let Some(a) = r.pseudo_label_true_accuracy {
            line.push_str(&format!(" label_acc={a:.4}"));
        }
        if let Some(a) = r.mean_solver_accuracy() {
            line.push_str(&format!(" solver_acc={a:.4}"));
        }
        println!("{line}");
    }
    Ok(())
}

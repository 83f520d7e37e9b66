use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trigsyn_cli::config::{parse_method, parse_trigger_kind, preset, PipelineConfig, PRESET_NAMES};
use trigsyn_cli::pipeline::{
    cmd_boa, cmd_collect, cmd_repro, cmd_simulate, cmd_synth, cmd_trigger, Stage, StageError,
};

/// Data-driven event-triggered controller design pipeline.
#[derive(Parser)]
#[command(name = "trigsyn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the open-loop experiment and store the data bundle.
    Collect(CommonArgs),
    /// Synthesize the feedback from the stored data.
    Synth(CommonArgs),
    /// Design the event trigger for the stored controller.
    Trigger(CommonArgs),
    /// Simulate the event-triggered closed loop.
    Simulate(CommonArgs),
    /// Estimate the basin of attraction.
    Boa(CommonArgs),
    /// Run the whole pipeline and write the report.
    Repro(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Bundled configuration name (poly, pendulum).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a pipeline configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the synthesis method (linearization, contractive).
    #[arg(long)]
    method: Option<String>,
    /// Override the trigger kind (state, library).
    #[arg(long)]
    trigger: Option<String>,
}

fn load(args: &CommonArgs) -> Result<PipelineConfig, StageError> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), None) => {
            let text = preset(name).ok_or_else(|| {
                StageError::new(
                    Stage::Config,
                    format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", ")),
                )
            })?;
            PipelineConfig::from_json(text)?
        }
        (None, Some(path)) => PipelineConfig::load(path)?,
        _ => {
            return Err(StageError::new(
                Stage::Config,
                "exactly one of --preset and --config is required",
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.experiment.rng_seed = seed;
    }
    if let Some(method) = &args.method {
        parse_method(method)?;
        cfg.synthesis.method = method.clone();
    }
    if let Some(kind) = &args.trigger {
        parse_trigger_kind(kind)?;
        cfg.trigger.kind = kind.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, StageError> {
    let args = match &cli.command {
        Command::Collect(a)
        | Command::Synth(a)
        | Command::Trigger(a)
        | Command::Simulate(a)
        | Command::Boa(a)
        | Command::Repro(a) => a,
    };
    let cfg = load(args)?;
    let out = args.out.as_path();
    match &cli.command {
        Command::Collect(_) => {
            let collected = cmd_collect(&cfg, out)?;
            Ok(format!(
                "collected {} samples, excitation rank {}/{}",
                collected.data.num_samples(),
                collected.richness.rank,
                collected.richness.required
            ))
        }
        Command::Synth(_) => {
            let ctrl = cmd_synth(&cfg, out)?;
            Ok(format!(
                "synthesized a {} controller ({} inputs, {} library terms)",
                ctrl.method,
                ctrl.input_dim(),
                ctrl.lib_dim()
            ))
        }
        Command::Trigger(_) => {
            let policy = cmd_trigger(&cfg, out)?;
            Ok(format!(
                "designed the {} trigger: sigma = {:.6e}, certified bound = {:.6e}",
                policy.kind, policy.sigma, policy.tau
            ))
        }
        Command::Simulate(_) => {
            let summaries = cmd_simulate(&cfg, out)?;
            let min_gap = summaries
                .iter()
                .filter_map(|s| s.min_inter_event)
                .fold(f64::INFINITY, f64::min);
            Ok(format!(
                "simulated {} run(s), smallest inter-event gap {:.6e}",
                summaries.len(),
                min_gap
            ))
        }
        Command::Boa(_) => {
            let boa = cmd_boa(&cfg, out)?;
            Ok(format!(
                "basin estimate: gamma = {:.6e} against the {} set{}",
                boa.gamma,
                boa.set,
                if boa.reached_cap { " (saturated the search cap)" } else { "" }
            ))
        }
        Command::Repro(_) => {
            let output = cmd_repro(&cfg, out)?;
            Ok(format!(
                "pipeline complete: {} trigger design(s), report at {}",
                output.policies.len(),
                out.join("report.md").display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error ({}): {}", e.stage.name(), e.message);
            ExitCode::from(e.stage.exit_code())
        }
    }
}

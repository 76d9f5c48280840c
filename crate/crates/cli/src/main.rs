//! `fri`: runs one experiment from a flat config file and writes its outputs
//! with a manifest of content digests.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use log::LevelFilter;

use commands::{BisectCmd, CalibrateCmd, CapacityCmd, Command, CrossingCmd, Ctx, ExploreCmd, LayersCmd, RangeCapCmd, SampleCmd, ScalingCmd};
use error::{config_err, exit, CliError, CliResult};
use manifest::{Output, RunManifest, RESOLVED_CONFIG_FILE};

#[derive(Parser, Debug)]
#[command(name = "fri", version, about = "Finitary random interlacement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "fri-out")]
    out: PathBuf,
    /// Use Monte-Carlo estimates when the Green table cache lacks an entry
    #[arg(long, global = true)]
    mc_fallback: bool,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Sample the cloud in a window
    Sample,
    /// Escape probabilities and capacity of a set or box
    Capacity,
    /// Capacity moments of walk ranges
    RangeCap,
    /// Crossing probabilities of the box around the origin
    Crossing,
    /// Intensity where the crossing probability passes theta
    Bisect,
    /// Exponent of the critical intensity against T
    Scaling,
    /// Mean capacities of successive cluster layers
    Layers,
    /// Slab exploration runs
    Explore,
    /// Green tables and fitted constants for the cache
    Calibrate,
}

fn drive<C: Command>(cli: &Cli) -> CliResult<RunManifest> {
    let started = manifest::now();
    let mut table = config::read_table(cli.config.as_deref())?;
    let common = config::split_common(&mut table, cli.seed)?;
    let mut cmd: C = config::parse(table)?;
    let ctx = Ctx { common, mc_fallback: cli.mc_fallback };
    cmd.validate()?;
    cmd.resolve(&ctx)?;
    cmd.validate()?;
    let resolved = config::resolved(&cmd, &ctx.common)?;
    let mut outputs = cmd.run(&ctx)?;
    let text = toml::to_string(&resolved).map_err(|e| config_err(e.to_string()))?;
    outputs.push(Output::new(RESOLVED_CONFIG_FILE, text.into_bytes()));
    let m = RunManifest {
        command: C::NAME.to_string(),
        parameters: resolved,
        seed: ctx.common.seed,
        workers: cli.workers,
        mc_fallback: cli.mc_fallback,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: started,
        outputs: Vec::new(),
    };
    manifest::write_all(&cli.out, &outputs, m)
}

fn run(cli: &Cli) -> CliResult<RunManifest> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(config_err("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Cmd::Sample => drive::<SampleCmd>(cli),
        Cmd::Capacity => drive::<CapacityCmd>(cli),
        Cmd::RangeCap => drive::<RangeCapCmd>(cli),
        Cmd::Crossing => drive::<CrossingCmd>(cli),
        Cmd::Bisect => drive::<BisectCmd>(cli),
        Cmd::Scaling => drive::<ScalingCmd>(cli),
        Cmd::Layers => drive::<LayersCmd>(cli),
        Cmd::Explore => drive::<ExploreCmd>(cli),
        Cmd::Calibrate => drive::<CalibrateCmd>(cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, cli.out.join(&o.file).display());
            }
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

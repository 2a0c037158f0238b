use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use decbary::agents::Algorithm;
use decbary::config::{preset, PresetName, PresetOptions, RunConfig, TopologySpec};
use decbary::exec::Execution;
use decbary::sim::{run_with, write_outputs};

#[derive(Parser)]
#[command(name = "decbary", version, about = "Decentralized entropic Wasserstein barycenters on simulated networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the trace and barycenter files.
    Run(RunArgs),
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print a preset as a config file.
    Preset {
        name: String,
        #[command(flatten)]
        gen: PresetArgs,
    },
}

#[derive(Args, Clone)]
struct PresetArgs {
    /// Number of agents.
    #[arg(long)]
    m: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Support size for gauss1d and vonmises.
    #[arg(long)]
    n: Option<usize>,
    /// Image directory for image_dir, one file per agent.
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Nonaccel,
    Accel,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario: gauss1d, vonmises or image_dir.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    gen: PresetArgs,
    /// complete, cycle, star or erdos_renyi.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Fixed batch size per round.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record a trace row every this many rounds.
    #[arg(long)]
    record_every: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Update agents one after another.
    #[arg(long)]
    sequential: bool,
    /// Write zeros in the wall_ms column.
    #[arg(long)]
    no_wall_clock: bool,
}

fn preset_options(gen: &PresetArgs) -> PresetOptions {
    let d = PresetOptions::default();
    PresetOptions {
        m: gen.m.unwrap_or(d.m),
        seed: gen.seed.unwrap_or(d.seed),
        n: gen.n.unwrap_or(d.n),
        images: gen.images.clone(),
    }
}

fn build_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name.parse()?, &preset_options(&args.gen))?,
        (None, Some(path)) => {
            let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(m) = args.gen.m {
                if m != cfg.graph.m {
                    bail!("--m {m} conflicts with graph.m = {} in {}", cfg.graph.m, path.display());
                }
            }
            if args.gen.n.is_some() || args.gen.images.is_some() {
                bail!("--n and --images only apply to presets");
            }
            if let Some(seed) = args.gen.seed {
                cfg.seed = seed;
            }
            cfg
        }
        (None, None) => bail!("either --preset or --config is required"),
    };
    if let Some(t) = &args.topology {
        cfg.graph.topology = TopologySpec::parse_name(t)?;
    }
    if let Some(r) = args.rounds {
        cfg.solver.rounds = Some(r);
        cfg.solver.radius = None;
    }
    if let Some(g) = args.gamma {
        cfg.solver.gamma = g;
    }
    if let Some(e) = args.epsilon {
        cfg.solver.epsilon = e;
    }
    if let Some(b) = args.batch {
        cfg.solver.fixed_batch = Some(b);
    }
    if let Some(a) = args.algorithm {
        cfg.solver.algorithm = match a {
            AlgorithmArg::Nonaccel => Algorithm::Nonaccel,
            AlgorithmArg::Accel => Algorithm::Accel,
        };
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(r) = args.record_every {
        cfg.solver.record_every = r;
    }
    if args.no_wall_clock {
        cfg.output.wall_clock = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let trace = run_with(&cfg, exec, args.workers)?;
    for note in &trace.notes {
        eprintln!("note: {note}");
    }
    let files = write_outputs(&cfg, &trace)?;
    if let Some(last) = trace.rows.last() {
        eprintln!(
            "{} rounds, lambda_max = {}, L = {}: dual {} consensus {}",
            trace.rounds, trace.lambda_max, trace.lipschitz, last.dual_value, last.consensus
        );
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => RunConfig::load(&config)
            .with_context(|| format!("reading {}", config.display()))
            .and_then(|c| c.validate().map_err(Into::into))
            .map(|_| println!("{}: ok", config.display())),
        Command::Preset { name, gen } => name
            .parse::<PresetName>()
            .and_then(|p| preset(p, &preset_options(&gen)))
            .and_then(|c| c.to_toml_string())
            .map(|text| print!("{text}"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

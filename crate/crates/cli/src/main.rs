//! `navprobe`: run the probing pipeline stage by stage.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 validation
//! failure, 3 non-finite numerics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navprobe::config::RunConfig;
use navprobe::io::{read_text, require, write_text};
use navprobe::pipeline::{Sensor, Workspace};
use navprobe::{verify, Error, TaskMode};

#[derive(Parser, Debug)]
#[command(name = "navprobe", version, about = "Probe recurrent navigation agents for human-interpretable concepts")]
struct Cli {
    /// Artifact directory; every path the pipeline reads or writes lives under it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the scene set.
    SceneGen,
    /// Behavior-clone one agent per configured seed (plus random-init twins).
    Train(TrainArgs),
    /// Write the shared explorer action files and split manifest.
    Explore,
    /// Replay the explorer actions through agents and log hidden states.
    Collect(CollectArgs),
    /// Fit one tree probe per concept and write the reports.
    Probe {
        /// Sensor conditions to probe (default: every condition collected).
        #[arg(long)]
        sensor: Vec<Sensor>,
    },
    /// Rank hidden units by mean |SHAP| and export beeswarm data.
    Explain(ModelArg),
    /// Clamp units to their means and measure navigation performance.
    Ablate(ModelArg),
    /// Track concept predictability across training checkpoints.
    Sweep(ModelArg),
    /// Run the built-in property suites.
    Verify {
        /// Smaller suites for a fast smoke check.
        #[arg(long)]
        quick: bool,
    },
    /// Run every stage with the pinned demo configuration (or --config).
    Demo,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    mode: Option<TaskMode>,
    /// Save parameters every N epochs (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[arg(long, default_value = "full")]
    sensor: Sensor,
    /// A single parameter file instead of every indexed model.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Model tag for --params (default: the file's directory or stem).
    #[arg(long, requires = "params")]
    tag: Option<String>,
}

#[derive(Args, Debug)]
struct ModelArg {
    /// Model tag (default: the first trained model).
    #[arg(long)]
    model: Option<String>,
}

fn load_config(cli: &Cli) -> navprobe::Result<RunConfig> {
    match &cli.config {
        Some(p) => {
            require(p, "config file")?;
            RunConfig::from_toml(&read_text(p)?, &p.display().to_string())
        }
        None => match cli.command {
            Command::Demo => Ok(RunConfig::demo()),
            _ => Err(Error::Config("--config is required for this command".into())),
        },
    }
}

fn tag_for(params: &Path) -> String {
    let stem = params.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "params" {
        if let Some(dir) = params.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn run(cli: Cli) -> navprobe::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    if let Command::Verify { quick } = cli.command {
        return run_verify(quick);
    }
    let mut cfg = load_config(&cli)?;
    if let Command::Train(args) = &cli.command {
        if let Some(mode) = args.mode {
            cfg.agent.mode = mode;
            cfg.agent.tasks.mode = mode;
        }
        if let Some(n) = args.checkpoint_every {
            cfg.agent.train.checkpoint_every = n;
        }
    }
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let ws = Workspace::new(cfg, &cli.out)?;
    match &cli.command {
        Command::SceneGen => ws.scene_gen(),
        Command::Train(_) => {
            for m in ws.train()? {
                println!("{}", m.tag);
            }
            Ok(())
        }
        Command::Explore => ws.explore(),
        Command::Collect(args) => {
            let target = args.params.as_ref().map(|p| {
                let tag = args.tag.clone().unwrap_or_else(|| tag_for(p));
                (p.clone(), tag)
            });
            let written = ws.collect(args.sensor, target.as_ref().map(|(p, t)| (p.as_path(), t.as_str())))?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Probe { sensor } => {
            let sensors = if sensor.is_empty() { Sensor::ALL.to_vec() } else { sensor.clone() };
            ws.probe(&sensors)
        }
        Command::Explain(m) => ws.explain(m.model.as_deref()),
        Command::Ablate(m) => ws.ablate(m.model.as_deref()).map(|_| ()),
        Command::Sweep(m) => ws.sweep(m.model.as_deref()),
        Command::Demo => {
            ws.run_all()?;
            write_text(&cli.out.join("config.toml"), &ws.cfg.to_toml())
        }
        Command::Verify { .. } | Command::Config => unreachable!("handled above"),
    }
}

fn run_verify(quick: bool) -> navprobe::Result<()> {
    let reports = if quick {
        vec![
            verify::shap_oracle_suite(20, 5)?.0,
            verify::local_accuracy_suite(20)?,
            verify::gbt_suite()?,
            verify::grad_suite(3).0,
            verify::metadata_suite(1)?,
            verify::metrics_suite(),
            verify::planted_suite(2)?,
        ]
    } else {
        verify::run_all()?
    };
    let mut failed = Vec::new();
    for r in &reports {
        println!("{:<16} {}/{} passed", r.name, r.passed, r.total);
        for f in &r.failures {
            println!("    {f}");
        }
        if !r.ok() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation { invariant: "verify", detail: format!("failing suites: {}", failed.join(", ")) })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

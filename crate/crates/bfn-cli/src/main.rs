use bfn_cli::config::ModeConfig;
use bfn_cli::{emit_plot_data, parse_config, run_experiment, PlotSeries, RunOptions};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  2  configuration error (parse failure or semantic violations)
  3  numerical failure (NaN or unstable step)
  4  io error

The default output root is ./runs, or the directory named by the
BFN_OUTPUT_ROOT environment variable; --out overrides both.";

#[derive(Parser)]
#[command(name = "bfn", version, about = "Observer and nudging experiments for periodic transport", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration file.
    Run(RunArgs),
    /// Extract plot-ready columns from a finished run.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML; see the repository README for the grammar).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration and BFN_OUTPUT_ROOT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent study entries; single runs are always
    /// sequential and bit-reproducible.
    #[arg(long, visible_alias = "jobs", default_value_t = 1)]
    threads: usize,
    /// Transport interpolation: spectral or linear (overrides the
    /// configuration).
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Path to a manifest.toml produced by `bfn run`.
    #[arg(long)]
    manifest: PathBuf,
    /// Series name: bfn_error_curve, csd_overlay or gramian_spectrum.
    #[arg(long)]
    series: String,
    /// Where to write the .dat file (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Plot(args) => plot(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(args: RunArgs) -> bfn_cli::CliResult<()> {
    let cfg = parse_config(&args.config)?;
    let mode = match args.mode.as_deref() {
        None => None,
        Some(text) => Some(
            text.parse::<ModeConfig>()
                .map_err(|e| bfn_cli::CliError::Config(vec![e]))?,
        ),
    };
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
        mode,
        threads: args.threads,
    };
    let manifest = run_experiment(&cfg, &opts)?;
    println!(
        "{} finished in {:.2}s (seed {})",
        manifest.run.kind, manifest.run.wall_seconds, manifest.run.seed
    );
    for (key, value) in &manifest.results {
        println!("  {key} = {value:.6e}");
    }
    for file in &manifest.files {
        println!("  wrote {file}");
    }
    println!("  wrote manifest.toml");
    Ok(())
}

fn plot(args: PlotArgs) -> bfn_cli::CliResult<()> {
    let series: PlotSeries = args
        .series
        .parse()
        .map_err(|e: String| bfn_cli::CliError::Config(vec![e]))?;
    let path = emit_plot_data(&args.manifest, series, args.out.as_deref())?;
    println!("wrote {}", path.display());
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpp_cosim_cli::commands::{self, CliResult};
use vpp_cosim_cli::config::{Mode, Overrides};

#[derive(Parser)]
#[command(
    name = "vpp-cosim",
    version,
    about = "Feeder dispatch and downlink delay co-simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a downlink delay trace.
    SimulateNet(Common),
    /// Run one closed-loop simulation.
    Run(Common),
    /// Run ideal and delayed variants side by side.
    Compare(Common),
    /// Load and check a scenario config, printing the effective values.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Delay trace CSV; implies `--mode trace` unless a mode is given.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (a `.csv` path for `simulate-net` names the file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write SVG plots alongside the outputs.
    #[arg(long)]
    plots: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode,
            trace: self.trace.clone(),
            seed: self.seed,
            out: self.out.clone().filter(|p| p.extension().is_none_or(|e| e != "csv")),
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SimulateNet(c) => {
            let cfg = commands::load_config(c.config.as_deref(), &c.overrides())?;
            let path = commands::simulate_net(&cfg, c.out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Run(c) => {
            let cfg = commands::load_config(c.config.as_deref(), &c.overrides())?;
            let m = commands::run(&cfg, c.plots)?;
            println!(
                "tracking_rms={:.6e} terminal_error={:.6e} upper_violations={} lower_violations={}",
                m.tracking_rms, m.terminal_tracking_error, m.upper_violation_count, m.lower_violation_count
            );
        }
        Command::Compare(c) => {
            let cfg = commands::load_config(c.config.as_deref(), &c.overrides())?;
            let r = commands::compare(&cfg, c.plots)?;
            let ratio = r.rms_ratio.map_or("inf".to_owned(), |v| format!("{v:.6}"));
            println!(
                "ideal_rms={:.6e} delayed_rms={:.6e} rms_ratio={ratio}",
                r.ideal.tracking_rms, r.delayed.tracking_rms
            );
        }
        Command::ValidateConfig(c) => {
            let cfg = commands::load_config(c.config.as_deref(), &c.overrides())?;
            println!("{}", commands::validate_config(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line front end: single runs, Monte Carlo campaigns and plot-data
//! emission for triggered-coordination scenarios.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 when a run aborts
//! on a certificate violation, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use etcoord::runner::{
    run_campaign, run_scenario, write_campaign_artifacts, write_plot_data, write_run_artifacts,
    campaign_summary_table,
};
use etcoord::scenario::Scenario;
use etcoord::triggering::Scheme;
use etcoord::Error;

#[derive(Parser)]
#[command(
    name = "etcoord",
    about = "Event-, time- and self-triggered coordination of passive agents: \
             deterministic hybrid simulation with built-in verification monitors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write trajectory, event, metrics and energy CSVs.
    Run {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the base flow step.
        #[arg(long)]
        flow_step: Option<f64>,
        /// Override the event localization tolerance.
        #[arg(long)]
        event_tol: Option<f64>,
    },
    /// Monte Carlo campaign over a scheme x reset-value grid.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        /// Schemes to sweep.
        #[arg(long, value_delimiter = ',', default_value = "etc,ttc,stc")]
        schemes: Vec<String>,
        /// Clock reset values to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        b: Vec<f64>,
        /// Runs per grid cell.
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Override the campaign seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        flow_step: Option<f64>,
        #[arg(long)]
        event_tol: Option<f64>,
    },
    /// Simulate one run and emit long-format plot data (t, series, value).
    PlotData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file.
        #[arg(long, default_value = "plot.csv")]
        out: PathBuf,
        #[arg(long)]
        flow_step: Option<f64>,
        #[arg(long)]
        event_tol: Option<f64>,
    },
}

fn load_scenario(
    path: &Path,
    seed: Option<u64>,
    flow_step: Option<f64>,
    event_tol: Option<f64>,
) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut scenario = Scenario::from_toml_str(&text)?;
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    if let Some(h) = flow_step {
        scenario.sim.flow_step = h;
    }
    if let Some(tol) = event_tol {
        scenario.sim.event_tolerance = tol;
    }
    Ok(scenario)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            flow_step,
            event_tol,
        } => {
            let scenario = load_scenario(&config, seed, flow_step, event_tol)?;
            let result = run_scenario(&scenario)?;
            write_run_artifacts(&result, &out)?;
            println!(
                "run complete: {} events, t5 = {}, max |(z,v)| = {:.4}, energy mode {}",
                result.metrics.events_total,
                result
                    .metrics
                    .t5
                    .map(|t| format!("{t:.4} s"))
                    .unwrap_or_else(|| "not reached".into()),
                result.metrics.max_state_norm,
                result.lyapunov.mode.tag(),
            );
            println!("artifacts written to {}", out.display());
            Ok(())
        }
        Command::Campaign {
            config,
            schemes,
            b,
            runs,
            seed,
            out,
            flow_step,
            event_tol,
        } => {
            let scenario = load_scenario(&config, seed, flow_step, event_tol)?;
            let schemes = schemes
                .iter()
                .map(|s| Scheme::from_str(s))
                .collect::<Result<Vec<_>, _>>()?;
            let cells = run_campaign(&scenario, &schemes, &b, runs)?;
            let edges = scenario.normalize()?.setup()?.edge_count();
            write_campaign_artifacts(&cells, edges, &out)?;
            print!("{}", campaign_summary_table(&cells));
            println!("artifacts written to {}", out.display());
            Ok(())
        }
        Command::PlotData {
            config,
            seed,
            out,
            flow_step,
            event_tol,
        } => {
            let scenario = load_scenario(&config, seed, flow_step, event_tol)?;
            let result = run_scenario(&scenario)?;
            write_plot_data(&result, &out)?;
            println!("plot data written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_config_error() {
                2
            } else if matches!(e, Error::CertificateViolation(_)) {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

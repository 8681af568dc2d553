use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dcoe::harness::presets::{describe, PRESETS};
use dcoe::harness::runner::condition_bundle;
use dcoe::harness::{export_csv, export_summary, monte_carlo, HarnessError, RunSummary, SimConfig};

#[derive(Parser)]
#[command(name = "dcoe", version, about = "Distributed estimation over random delayed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write mse.csv and summary.json.
    Run {
        /// TOML configuration; optional when --preset is given.
        config: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Attach condition reports to the summary.
        #[arg(long)]
        check_conditions: bool,
        /// Use a built-in scenario instead of the configured one.
        #[arg(long)]
        preset: Option<String>,
        /// Horizon when running a preset without a configuration file.
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
    },
    /// Run only the condition checks of a configuration.
    Check { config: PathBuf },
    /// List built-in scenarios.
    Presets,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            replicates,
            seed,
            out,
            check_conditions,
            preset,
            horizon,
        } => {
            let mut cfg = match (&config, &preset) {
                (Some(path), _) => SimConfig::load(path)?,
                (None, Some(name)) => SimConfig::preset(name, horizon, 1, 0),
                (None, None) => return Err(HarnessError::Config("give a config path or --preset".into())),
            };
            if let Some(name) = preset {
                cfg.scenario = dcoe::harness::ScenarioSpec::Preset(name);
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(dir) = out {
                cfg.sink = dir;
            }
            cfg.outputs.condition_reports |= check_conditions;
            cfg.validate()?;
            let scenario = cfg.resolve()?;
            let metrics = monte_carlo(&cfg)?;
            let summary = RunSummary::new(&cfg, &scenario, &metrics)?;
            if cfg.outputs.mse_curve {
                export_csv(&metrics, &cfg.sink.join("mse.csv"))?;
            }
            export_summary(&summary, &cfg.sink.join("summary.json"))?;
            info!("wrote results to {}", cfg.sink.display());
            println!(
                "{}: MSE(0) = {:.6e}, MSE({}) = {:.6e}",
                scenario.name,
                summary.final_mse.initial_network,
                metrics.horizon,
                summary.final_mse.network
            );
            Ok(())
        }
        Command::Check { config } => {
            let cfg = SimConfig::load(&config)?;
            let scenario = cfg.resolve()?;
            let bundle = condition_bundle(&scenario, cfg.horizon, cfg.master_seed)?;
            let text = serde_json::to_string_pretty(&bundle).map_err(|e| HarnessError::Serialize(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::Presets => {
            for name in PRESETS {
                println!("{name:<20} {}", describe(name).unwrap_or_default());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

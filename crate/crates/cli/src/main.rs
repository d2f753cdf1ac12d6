use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fklab_cli::runner::write_outputs;
use fklab_cli::{Config, Failure, Overrides, RunReport};

#[derive(Parser)]
#[command(name = "fklab", version, about = "Run Feynman-Kac Monte Carlo experiments from JSON configs")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true, env = "FKLAB_SEED")]
    seed: Option<u64>,
    /// Overrides the worker count in the config file.
    #[arg(long, global = true, env = "FKLAB_WORKERS")]
    workers: Option<usize>,
    /// Directory for the JSON report and the CSV sidecar.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Repeat an experiment along one numeric config entry.
    Sweep {
        config: PathBuf,
        /// Config key, bare (`n_steps`) or dotted (`params.alpha`).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into())
}

fn execute(cli: &Cli) -> Result<RunReport, Failure> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
    };
    let (path, name) = match &cli.command {
        Command::Run { config } => (config, format!("{}.report", stem(config))),
        Command::Sweep { config, .. } => (config, format!("{}.sweep", stem(config))),
    };
    let config = overrides.apply(&Config::load(path)?)?;
    let report = match &cli.command {
        Command::Run { .. } => fklab_cli::run(&config)?,
        Command::Sweep { axis, values, .. } => fklab_cli::sweep(&config, axis, values)?,
    };
    write_outputs(&report, &config.experiment.name(), &cli.out, &name)?;
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            let failed = report.rows.iter().filter(|r| !r.pass).count();
            if failed == 0 {
                log::info!("all {} rows pass ({:.2}s)", report.rows.len(), report.wall_time_s);
                ExitCode::SUCCESS
            } else {
                log::error!("{failed} of {} rows fail", report.rows.len());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

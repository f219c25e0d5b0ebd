use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fedsel_cli::config::load_config;
use fedsel_cli::report::{build_report, ReportMetric};
use fedsel_cli::runner::execute;
use fedsel_core::delays::{synthesize_delays, write_trace, SyntheticDelayConfig};

#[derive(Parser)]
#[command(
    name = "fedsel",
    version,
    about = "Federated client-selection simulator: runs configured experiments and reports time-to-target"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (selector, seed) pair from a config, writing CSVs.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate time-to-target over a directory of finished runs.
    Report {
        /// Directory holding round CSVs from `run`.
        #[arg(long)]
        runs: PathBuf,
        /// Metric value to reach.
        #[arg(long)]
        target: f64,
        /// Column the target applies to.
        #[arg(long, value_enum, default_value_t = MetricArg::TrainLoss)]
        metric: MetricArg,
    },
    /// Delay trace utilities.
    Traces {
        #[command(subcommand)]
        command: TracesCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    TrainLoss,
    TestMetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceMode {
    /// Link-transfer plus compute-time delays, moderate spread.
    Synthetic,
    /// Log-normal mean delays around --median-s, heavy tail.
    Lognormal,
}

#[derive(Subcommand)]
enum TracesCommand {
    /// Write a synthetic delay trace CSV.
    Synth {
        /// Number of clients.
        #[arg(long)]
        m: usize,
        /// Output trace path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TraceMode::Synthetic)]
        mode: TraceMode,
        /// Median mean-delay in seconds (lognormal mode).
        #[arg(long, default_value_t = 30.0)]
        median_s: f64,
        /// Log-scale spread of the mean delays (lognormal mode).
        #[arg(long, default_value_t = 1.5)]
        spread: f64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => run_command(&config, &out),
        Command::Report {
            runs,
            target,
            metric,
        } => report_command(&runs, target, metric),
        Command::Traces {
            command:
                TracesCommand::Synth {
                    m,
                    out,
                    seed,
                    mode,
                    median_s,
                    spread,
                },
        } => synth_command(m, &out, seed, mode, median_s, spread),
    }
}

fn run_command(config_path: &Path, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let report = execute(&cfg, config_dir, out_dir)?;
    for job in &report.jobs {
        match &job.failure {
            None => println!("{} seed {}: ok", job.label, job.seed),
            Some(msg) => eprintln!("{} seed {}: FAILED ({msg})", job.label, job.seed),
        }
    }
    println!("summary: {}", report.summary_path.display());
    let failed = report.failures().count();
    if failed > 0 {
        bail!("{failed} of {} runs failed", report.jobs.len());
    }
    Ok(())
}

fn report_command(runs_dir: &Path, target: f64, metric: MetricArg) -> Result<()> {
    if !target.is_finite() {
        bail!("target must be finite, got {target}");
    }
    let metric = match metric {
        MetricArg::TrainLoss => ReportMetric::TrainLoss,
        MetricArg::TestMetric => ReportMetric::TestMetric,
    };
    let report = build_report(runs_dir, metric, target)?;
    let csv_path = runs_dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    print!("{}", report.to_text());
    println!("written: {}", csv_path.display());
    Ok(())
}

fn synth_command(
    m: usize,
    out: &Path,
    seed: u64,
    mode: TraceMode,
    median_s: f64,
    spread: f64,
) -> Result<()> {
    if m == 0 {
        bail!("need at least one client");
    }
    let means = match mode {
        TraceMode::Synthetic => synthesize_delays(&SyntheticDelayConfig::default(), m, seed)?,
        TraceMode::Lognormal => {
            if !(median_s.is_finite() && median_s > 0.0) {
                bail!("--median-s must be positive, got {median_s}");
            }
            if !(spread.is_finite() && spread >= 0.0) {
                bail!("--spread must be nonnegative, got {spread}");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    median_s * (spread * z).exp()
                })
                .collect()
        }
    };
    write_trace(out, &means, None)?;
    println!("wrote {} clients to {}", m, out.display());
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use geomprobe::commands::{run, Axis, Command, RunConfig};
use geomprobe::geometry::{IsotropySigns, DEFAULT_EPSILON};
use geomprobe::saturation::Thresholds;
use geomprobe::MetricConfig;

/// Geometry metrics for unembedding matrices and representations, and the
/// correlation battery relating them to loss.
#[derive(Parser)]
#[command(name = "geomprobe", version)]
struct Cli {
    /// Seed for fold assignment; recorded in every artifact.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Signs {
    Both,
    Positive,
}

#[derive(Subcommand)]
enum Cmd {
    /// Effective rank, isotropy and angular variability for each record's
    /// final checkpoint.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "both")]
        isotropy_signs: Signs,
        /// Renormalize the singular-value distribution after adding epsilon.
        #[arg(long)]
        renormalize: bool,
    },
    /// Correlation battery for one loss target.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `metrics`.
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scaled loss (and metrics) grouped by one hyperparameter.
    SweepReport {
        #[arg(long)]
        manifest: PathBuf,
        /// batch_size, weight_decay, lr_scale, lr_anneal_frac or token_budget
        #[arg(long)]
        axis: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        /// Directory written by `metrics`, to add metric means per group.
        #[arg(long)]
        geometry: Option<PathBuf>,
    },
    /// Loss-degradation and rank-collapse onsets over checkpoints.
    Saturation {
        /// CSV with columns tokens,loss,eff_rank_norm, or a manifest.
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = Thresholds::default().loss_rise_frac)]
        rise_frac: f64,
        #[arg(long, default_value_t = Thresholds::default().rank_drop_frac)]
        drop_frac: f64,
        #[arg(long, default_value_t = Thresholds::default().window)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn build(cli: Cli) -> Result<RunConfig, geomprobe::commands::CommandError> {
    let (command, out) = match cli.command {
        Cmd::Metrics {
            manifest,
            out,
            epsilon,
            isotropy_signs,
            renormalize,
        } => {
            let metric_config = MetricConfig {
                epsilon,
                isotropy_signs: match isotropy_signs {
                    Signs::Both => IsotropySigns::Both,
                    Signs::Positive => IsotropySigns::PositiveOnly,
                },
                renormalize,
            };
            (Command::Metrics { manifest, metric_config }, out)
        }
        Cmd::Analyze {
            manifest,
            geometry,
            target,
            out,
        } => (
            Command::Analyze {
                manifest,
                geometry,
                target,
            },
            out,
        ),
        Cmd::SweepReport {
            manifest,
            axis,
            target,
            out,
            geometry,
        } => (
            Command::SweepReport {
                manifest,
                axis: axis.parse::<Axis>()?,
                target,
                geometry,
            },
            out,
        ),
        Cmd::Saturation {
            series,
            rise_frac,
            drop_frac,
            window,
            out,
        } => (
            Command::Saturation {
                series,
                thresholds: Thresholds {
                    loss_rise_frac: rise_frac,
                    rank_drop_frac: drop_frac,
                    window,
                },
                metric_config: MetricConfig::default(),
            },
            out,
        ),
    };
    Ok(RunConfig {
        command,
        out,
        seed: cli.seed,
        threads: cli.threads,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; --help and --version succeed
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = build(cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

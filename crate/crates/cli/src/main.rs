use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use expressway_core::pipeline::{run_pipeline, RunReport, SiteConfig, Stage};
use expressway_core::Error;

/// Expressway congestion pipeline: simulate, track, extract parameters,
/// train predictors and evaluate early warnings.
#[derive(Debug, Parser)]
#[command(name = "expressway", version)]
struct Cli {
    /// Site configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated stages for `run`, or `all`.
    #[arg(long, global = true)]
    stages: Option<String>,

    /// Output directory; every artifact path is relative to it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run several stages in order (all by default).
    Run,
    /// Generate detections, ground truth and parameter series.
    Simulate,
    /// Track detections with the fused tracker and the SORT baseline.
    Track,
    /// Flow, density and speed from tracks.
    Params,
    /// Clean, interpolate, detect episodes and fit the normalizer.
    Preprocess,
    /// Train the GRU, GRU-Attention and logistic models.
    Train,
    /// Predict congestion probabilities on the test points.
    Predict,
    /// Emit debounced warnings from the predictions.
    Warn,
    /// Classification, warning and tracking metrics.
    Evaluate,
    /// Plot data and the run report.
    Report,
    /// Print the built-in configuration as TOML.
    DefaultConfig,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Simulate => Stage::Simulate,
            Command::Track => Stage::Track,
            Command::Params => Stage::Params,
            Command::Preprocess => Stage::Preprocess,
            Command::Train => Stage::Train,
            Command::Predict => Stage::Predict,
            Command::Warn => Stage::Warn,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::Run | Command::DefaultConfig => return None,
        })
    }
}

fn load_config(cli: &Cli) -> Result<SiteConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => SiteConfig::load(path)?,
        None => SiteConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn selected_stages(cli: &Cli) -> Result<Vec<Stage>, Error> {
    match (cli.command.stage(), &cli.stages) {
        (Some(_), Some(_)) => Err(Error::Config(
            "--stages only applies to `run`; a stage subcommand runs exactly that stage".into(),
        )),
        (Some(stage), None) => Ok(vec![stage]),
        (None, Some(list)) => Stage::parse_list(list),
        (None, None) => Ok(Stage::ALL.to_vec()),
    }
}

fn print_summary(report: &RunReport) {
    for t in &report.timings {
        println!("{:<11} {:<7} {:>9.2}s", t.stage.as_str(), format!("{:?}", t.status).to_lowercase(), t.seconds);
    }
    if let Some(m) = &report.metrics {
        for (name, c) in &m.classification {
            println!(
                "{name:<14} accuracy {:.4}  recall {:.4}  precision {:.4}  f1 {:.4}  rmse {:.4}",
                c.accuracy, c.recall, c.precision, c.f1, c.rmse
            );
        }
        for (point, w) in &m.warnings {
            let lead = w
                .mean_lead_error_minutes
                .map_or("n/a".to_string(), |v| format!("{v:.2} min"));
            println!(
                "warnings {point}: {} episodes, {} matched, {} missed, {} false, mean lead error {lead}",
                w.episodes, w.matched, w.missed, w.false_warnings
            );
        }
        for (point, t) in &m.tracking {
            println!(
                "tracking {point}: fused MOTA {:.3} ({} ID switches), SORT MOTA {:.3} ({} ID switches)",
                t.fused.mota, t.fused.id_switches, t.sort.mota, t.sort.id_switches
            );
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    if matches!(cli.command, Command::DefaultConfig) {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let stages = selected_stages(cli)?;
    let report = run_pipeline(&cfg, &cli.out, &stages)?;
    print_summary(&report);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::error!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

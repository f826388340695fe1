use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgfilter::config::Loaded;
use ecgfilter::experiment::{experiment1, experiment2};
use ecgfilter::stages::{self, Stage};
use ecgfilter::{AppError, Result};

/// Anomaly-detection filter for ECG classifiers: data preparation,
/// detector search, and the integrated filter-plus-classifier evaluation.
#[derive(Parser, Debug)]
#[command(name = "ecgfilter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpora under the data root.
    Synth(Common),
    /// Window both corpora and write the window index.
    Ingest(Common),
    /// Build the configured split.
    Scenario(Common),
    /// Estimate the SNR of unanalyzable windows.
    Calibrate(Common),
    /// Inject noise into validation and test.
    Inject(Common),
    /// Train the anomaly filter.
    TrainFilter(Common),
    /// Train the multilabel classifier.
    TrainClassifier(Common),
    /// Random architecture search for the configured method.
    Nas {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Score validation and test windows with the filter.
    Score(Common),
    /// Pick the threshold on validation and evaluate on test.
    Evaluate(Common),
    /// Write the rejection curves.
    Sweep(Common),
    /// Assemble the run report.
    Report(Common),
    /// Detector comparison across scenarios.
    Experiment1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Classifier with and without the filter under injected noise.
    Experiment2(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Ingest(c)
            | Command::Scenario(c)
            | Command::Calibrate(c)
            | Command::Inject(c)
            | Command::TrainFilter(c)
            | Command::TrainClassifier(c)
            | Command::Score(c)
            | Command::Evaluate(c)
            | Command::Sweep(c)
            | Command::Report(c)
            | Command::Experiment2(c) => c,
            Command::Nas { common, .. } | Command::Experiment1 { common, .. } => common,
        }
    }
}

fn load(c: &Common) -> Result<Loaded> {
    Loaded::from_file(&c.config, c.seed).map_err(|e| match e {
        AppError::Io { path, source } => AppError::Usage(format!("--config {}: {source}", path.display())),
        AppError::Parse { path, offset, message } => {
            AppError::Usage(format!("--config {}: invalid JSON at byte {offset}: {message}", path.display()))
        }
        other => other,
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn run(cmd: Command) -> Result<String> {
    let loaded = load(cmd.common())?;
    let s = Stage::new(&loaded);
    Ok(match cmd {
        Command::Synth(_) => json(&stages::synth(&s)?),
        Command::Ingest(_) => format!("{} windows", stages::ingest(&s)?),
        Command::Scenario(_) => {
            let d = stages::scenario(&s)?;
            format!("train {} val {} test {}", d.train.len(), d.val.len(), d.test.len())
        }
        Command::Calibrate(_) => json(&stages::calibrate(&s)?),
        Command::Inject(_) => {
            let d = stages::inject_stage(&s)?;
            format!("{} windows injected at {} dB", d.injections.len(), d.plan.target_snr_db)
        }
        Command::TrainFilter(_) => json(&stages::train_filter(&s)?),
        Command::TrainClassifier(_) => json(&stages::train_classifier(&s)?),
        Command::Nas { trials, .. } => {
            let r = stages::nas_stage(&s, trials)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            format!("{} trials ({} resumed)", r.records.len(), r.resumed)
        }
        Command::Score(_) => format!("{} windows scored", stages::score(&s)?),
        Command::Evaluate(_) => json(&stages::evaluate(&s)?),
        Command::Sweep(_) => {
            let (v, t) = stages::sweep(&s)?;
            format!("{} validation and {} test points", v.points.len(), t.points.len())
        }
        Command::Report(_) => {
            stages::report(&s)?;
            s.path(stages::artifact::REPORT).display().to_string()
        }
        Command::Experiment1 { trials, .. } => json(&experiment1(&loaded, trials)?.rows),
        Command::Experiment2(_) => json(&experiment2(&loaded)?.report.rows),
    })
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
    match run(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line front end for the uncertainty-quality experiment.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uqad::anova::run_mcmc;
use uqad::bench::{bench, write_bench_csv};
use uqad::config::ExperimentConfig;
use uqad::data::load_idx;
use uqad::pipeline::{read_results, results_path, results_to_anova, run_experiment};
use uqad::report::{anova_json_path, write_anova_outputs, write_report, AnovaArtifacts};

#[derive(Parser)]
#[command(name = "uqad", about = "Uncertainty quality via anomaly detection", version)]
struct Cli {
    /// Path to the experiment config (JSON). Falls back to $UQAD_CONFIG.
    #[arg(long, global = true, env = "UQAD_CONFIG")]
    config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the dataset files exist and parse.
    FetchCheck,
    /// Run (or resume) all replications.
    Run,
    /// Fit the Bayesian ANOVA on the persisted results.
    Anova,
    /// Emit summary tables and plot data from persisted artifacts.
    Report,
    /// Measure per-epoch training cost per variant.
    Bench,
}

fn load_config(cli: &Cli) -> uqad::Result<ExperimentConfig> {
    let path = cli.config.clone().ok_or_else(|| {
        uqad::Error::Config("no config: pass --config or set UQAD_CONFIG".into())
    })?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> uqad::Result<bool> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::FetchCheck => {
            let train = load_idx(
                &cfg.data_dir.join("train-images-idx3-ubyte"),
                &cfg.data_dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(
                &cfg.data_dir.join("t10k-images-idx3-ubyte"),
                &cfg.data_dir.join("t10k-labels-idx1-ubyte"),
            )?;
            println!(
                "ok: {} training and {} test samples in {}",
                train.labels.len(),
                test.labels.len(),
                cfg.data_dir.display()
            );
            Ok(true)
        }
        Command::Run => {
            let summary = run_experiment(&cfg)?;
            println!(
                "{} rows: {} completed, {} skipped, {} failed -> {}",
                summary.total,
                summary.completed,
                summary.skipped,
                summary.failed,
                summary.results_path.display()
            );
            Ok(summary.failed == 0)
        }
        Command::Anova => {
            let rows = read_results(&results_path(&cfg))?;
            let data = results_to_anova(&rows)?;
            let result = run_mcmc(&data, &cfg.mcmc)?;
            let artifacts = write_anova_outputs(&cfg.out_dir, &result)?;
            for s in &artifacts.summaries {
                println!(
                    "{}: mean {:.4} sd {:.4} hpd [{:.4}, {:.4}] rhat {:.3}",
                    s.name, s.mean, s.sd, s.hpd_low, s.hpd_high, s.rhat
                );
            }
            for d in &artifacts.differences {
                println!(
                    "{} - {}: mean {:.4} hpd [{:.4}, {:.4}]{}",
                    d.a,
                    d.b,
                    d.mean,
                    d.hpd_low,
                    d.hpd_high,
                    if d.significant { " (significant)" } else { "" }
                );
            }
            if !artifacts.converged {
                eprintln!("warning: R-hat above threshold; increase steps or chains");
            }
            Ok(true)
        }
        Command::Report => {
            let rows = read_results(&results_path(&cfg))?;
            let anova_path = anova_json_path(&cfg.out_dir);
            let artifacts: Option<AnovaArtifacts> = if anova_path.exists() {
                let text = std::fs::read_to_string(&anova_path)
                    .map_err(|e| uqad::Error::io(&anova_path, e))?;
                Some(serde_json::from_str(&text).map_err(|e| {
                    uqad::Error::Results(format!("{}: {e}", anova_path.display()))
                })?)
            } else {
                None
            };
            let written = write_report(&cfg.out_dir, &rows, artifacts.as_ref())?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Bench => {
            let rows = bench(&cfg, 1, 3)?;
            let path = write_bench_csv(&cfg.out_dir, &rows)?;
            for r in &rows {
                println!(
                    "{}: {:.1} ms/epoch ({:.2}x ML)",
                    r.variant, r.mean_epoch_ms, r.ratio_to_ml
                );
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

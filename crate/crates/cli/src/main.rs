//! Command-line harness: train replicas, run full experiments, recompute
//! PD metrics from persisted files, and validate gradients.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use antidistill::config::{ConfigError, ConfigPatch, ExperimentConfig};
use antidistill::gradcheck;
use antidistill::harness::{self, ErrorCategory, HarnessError};
use antidistill::loss::{AdKind, AttachPoint, LabelAggregation};
use antidistill::model::AveragingMode;
use antidistill::pd::PdReport;
use antidistill::report::{format_report_row, REPORT_HEADER};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "antidistill",
    version,
    about = "Anti-distillation ensemble training and prediction-difference metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one replica; writes its prediction file, checkpoint and log.
    Train {
        #[command(flatten)]
        config: ConfigFlags,
        /// Replica index (selects the shuffle seed, and the init seed when
        /// --vary-init is set).
        #[arg(long, default_value_t = 0)]
        replica_index: usize,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Train all M replicas of a configuration and append a report row.
    Experiment {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Recompute PD metrics offline from prediction files.
    Pd {
        /// Labels sidecar file written by `experiment`.
        #[arg(long)]
        labels: PathBuf,
        /// Two or more prediction files sharing one evaluation set.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Validate every analytic gradient against central finite differences.
    Gradcheck,
}

/// Flags mirroring the config-file keys; explicit flags override the file.
#[derive(Args)]
struct ConfigFlags {
    /// Flat key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every replica seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble size J.
    #[arg(long)]
    components: Option<usize>,
    /// Replica count M.
    #[arg(long)]
    replicas: Option<usize>,
    /// AD temperature.
    #[arg(long)]
    lambda: Option<f64>,
    /// none | corr | cov | residue | diff | recip-diff
    #[arg(long, value_parser = AdKind::from_str)]
    ad_kind: Option<AdKind>,
    /// logit | prob
    #[arg(long, value_parser = AttachPoint::from_str)]
    ad_attach: Option<AttachPoint>,
    #[arg(long)]
    ad_epsilon: Option<f64>,
    /// sum | mean
    #[arg(long, value_parser = LabelAggregation::from_str)]
    ad_aggregation: Option<LabelAggregation>,
    /// Hidden layer width.
    #[arg(long)]
    width: Option<usize>,
    /// Number of hidden layers.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    accumulator_init: Option<f64>,
    /// adagrad | sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// prob | logit
    #[arg(long, value_parser = AveragingMode::from_str)]
    averaging: Option<AveragingMode>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Give every replica its own init seeds instead of shared init.
    #[arg(long)]
    vary_init: bool,
    /// mnist | blobs
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    blob_train: Option<usize>,
    #[arg(long)]
    blob_eval: Option<usize>,
    #[arg(long)]
    blob_dim: Option<usize>,
    #[arg(long)]
    blob_classes: Option<usize>,
    #[arg(long)]
    blob_separation: Option<f64>,
    /// Full benchmark configuration (width 1200 x 2, 150 epochs, M = 20);
    /// expect hours of runtime.
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let flags = ConfigPatch {
            dataset: self.dataset.clone(),
            mnist_dir: self.mnist_dir.clone(),
            seed: self.seed,
            components: self.components,
            replicas: self.replicas,
            lambda: self.lambda,
            ad_kind: self.ad_kind,
            ad_attach: self.ad_attach,
            ad_epsilon: self.ad_epsilon,
            ad_aggregation: self.ad_aggregation,
            width: self.width,
            depth: self.depth,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            accumulator_init: self.accumulator_init,
            optimizer: self.optimizer.clone(),
            averaging: self.averaging,
            init_scale: self.init_scale,
            vary_init: if self.vary_init { Some(true) } else { None },
            blob_train: self.blob_train,
            blob_eval: self.blob_eval,
            blob_dim: self.blob_dim,
            blob_classes: self.blob_classes,
            blob_separation: self.blob_separation,
            paper_scale: if self.paper_scale { Some(true) } else { None },
        };
        let merged = match &self.config {
            Some(path) => flags.merge_over(ConfigPatch::from_file(path)?),
            None => flags,
        };
        merged.resolve()
    }
}

fn exit_code_for(err: &HarnessError) -> u8 {
    match err.category() {
        ErrorCategory::Usage => EXIT_USAGE,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Numerical => EXIT_NUMERICAL,
    }
}

fn print_pd_report(report: &PdReport) {
    println!("log_loss            {:.6}", report.log_loss);
    println!("accuracy            {:.4}%", report.accuracy * 100.0);
    println!("ensemble_log_loss   {:.6}", report.ensemble_log_loss);
    println!("ensemble_accuracy   {:.4}%", report.ensemble_accuracy * 100.0);
    println!("delta_1             {:.6e}", report.delta_1);
    println!("delta_2             {:.6e}", report.delta_2);
    println!("delta_rel           {:.6e}", report.delta_rel);
    if let Some(v) = report.delta_true_label {
        println!("delta_true_label    {:.4}%", v * 100.0);
    }
    println!("delta_hamming       {:.4}%", report.delta_hamming * 100.0);
    if let Some(v) = report.delta_rel_binary {
        println!("delta_rel_binary    {:.4}%", v * 100.0);
    }
    if report.log_loss_clamped {
        println!("note: zero predicted probabilities were clamped at the floor");
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    match cli.command {
        Command::Train {
            config,
            replica_index,
            out_dir,
        } => {
            let cfg = config.resolve().map_err(|e| (EXIT_USAGE, e.to_string()))?;
            let artifacts = harness::run_replica(&cfg, replica_index, &out_dir)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            println!("config_hash {}", cfg.config_hash());
            println!("predictions {}", artifacts.prediction_file.display());
            println!("checkpoint  {}", artifacts.checkpoint_file.display());
            println!("log         {}", artifacts.log_file.display());
            Ok(())
        }
        Command::Experiment { config, out_dir } => {
            let cfg = config.resolve().map_err(|e| (EXIT_USAGE, e.to_string()))?;
            let artifacts = harness::run_experiment(&cfg, &out_dir)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            println!("{REPORT_HEADER}");
            println!("{}", format_report_row(&artifacts.row));
            println!();
            print_pd_report(&artifacts.row.report);
            println!("report      {}", artifacts.report_file.display());
            println!("metadata    {}", artifacts.metadata_file.display());
            Ok(())
        }
        Command::Pd { labels, files } => {
            let report = harness::pd_from_files(&files, &labels)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            print_pd_report(&report);
            Ok(())
        }
        Command::Gradcheck => {
            let report = gradcheck::full_grid();
            println!("{:<34} {:>14} {:>8}", "cell", "max_rel_error", "status");
            for cell in &report.cells {
                println!(
                    "{:<34} {:>14.3e} {:>8}",
                    cell.name,
                    cell.max_rel_error,
                    if cell.passed { "ok" } else { "FAILED" }
                );
            }
            println!(
                "{} cells, {} failed (tolerance {:.0e})",
                report.cells.len(),
                report.failed_count(),
                report.tolerance
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 1 anything else.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use moselect::bench::{
    emit_outputs, ensure_dataset, parse_records_csv, parse_variant, render_accuracy_plot,
    run_experiment, train_covnet_artifact, train_vae_artifact, variant_name, write_calibrations,
    DataRole, ExperimentConfig, Method, Seeds,
};
use moselect::error::Error;
use moselect::vae::VaeVariant;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "moselect",
    version,
    about = "Model-order selection experiments on array snapshots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML); defaults to the chosen profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,
    /// Master seed override, spread across all seed roles.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation snapshot count override (1 or 5).
    #[arg(long)]
    snapshots: Option<usize>,
    /// Root directory override; data/, models/ and out/ move underneath it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method list override.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and store every dataset the config calls for.
    GenerateData(Common),
    /// Train a decoder variant and store its checkpoint.
    TrainVae {
        #[command(flatten)]
        common: Common,
        /// Train only this variant; omitted trains every selected one.
        #[arg(long, value_parser = ["known-noise", "learned-noise"])]
        variant: Option<String>,
    },
    /// Fit entropy thresholds per grid SNR and store them as JSON.
    Calibrate(Common),
    /// Train the supervised baseline classifier.
    TrainCovnet(Common),
    /// Evaluate every selected method over the SNR grid; emit CSV, plots, manifest.
    Evaluate(Common),
    /// Re-render the accuracy plot from a previously emitted CSV.
    Plot(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::profile(&common.profile)?,
    };
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds::from_master(seed);
    }
    if let Some(t) = common.snapshots {
        if t != 1 && t != 5 {
            return Err(Error::Config(format!(
                "--snapshots must be 1 or 5, got {t}"
            )));
        }
        cfg.scenario.eval_snapshots = t;
    }
    if let Some(root) = &common.out {
        cfg.paths.data_dir = root.join("data");
        cfg.paths.model_dir = root.join("models");
        cfg.paths.out_dir = root.join("out");
    }
    if let Some(methods) = &common.methods {
        cfg.methods = methods.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn selected_variants(cfg: &ExperimentConfig) -> Vec<VaeVariant> {
    let mut vs = Vec::new();
    for m in cfg.effective_methods() {
        if let Some((v, _)) = m.vae_parts() {
            if !vs.contains(&v) {
                vs.push(v);
            }
        }
    }
    vs
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateData(c) => {
            let cfg = resolve(&c)?;
            for role in [
                DataRole::VaeTrain,
                DataRole::CovnetTrain,
                DataRole::Calib,
                DataRole::Eval,
            ] {
                let ds = ensure_dataset(&cfg, role)?;
                println!(
                    "{}  {} samples",
                    cfg.dataset_path(role).display(),
                    ds.len()
                );
            }
            Ok(())
        }
        Command::TrainVae { common, variant } => {
            let cfg = resolve(&common)?;
            let variants = match &variant {
                Some(name) => vec![parse_variant(name)?],
                None => {
                    let vs = selected_variants(&cfg);
                    if vs.is_empty() {
                        return Err(Error::Config(
                            "no VAE methods selected; pass --variant to train one anyway".into(),
                        )
                        .into());
                    }
                    vs
                }
            };
            for v in variants {
                let (path, report) = train_vae_artifact(&cfg, v)?;
                let best = report
                    .monitor_elbo
                    .get(report.best_epoch)
                    .copied()
                    .unwrap_or(f64::NAN);
                println!(
                    "{}  {}  best epoch {}  monitor ELBO {:.4}",
                    path.display(),
                    variant_name(v),
                    report.best_epoch,
                    best
                );
            }
            Ok(())
        }
        Command::Calibrate(c) => {
            let cfg = resolve(&c)?;
            for path in write_calibrations(&cfg)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::TrainCovnet(c) => {
            let cfg = resolve(&c)?;
            let (path, report) = train_covnet_artifact(&cfg)?;
            let best = report
                .val_accuracy
                .get(report.best_epoch)
                .copied()
                .unwrap_or(f64::NAN);
            println!(
                "{}  best epoch {}  val accuracy {:.3}",
                path.display(),
                report.best_epoch,
                best
            );
            Ok(())
        }
        Command::Evaluate(c) => {
            let cfg = resolve(&c)?;
            let artifacts = run_experiment(&cfg)?;
            let mut order: Vec<Method> = Vec::new();
            for r in &artifacts.records {
                if !order.contains(&r.method) {
                    order.push(r.method);
                }
            }
            for m in order {
                let accs: Vec<f64> = artifacts
                    .records
                    .iter()
                    .filter(|r| r.method == m)
                    .map(|r| r.accuracy)
                    .collect();
                let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
                println!("{m}  mean accuracy {mean:.3} over {} SNRs", accs.len());
            }
            for p in emit_outputs(&artifacts, &cfg)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Plot(c) => {
            let cfg = resolve(&c)?;
            let csv_path = cfg.csv_path();
            let text = std::fs::read_to_string(&csv_path).map_err(|_| Error::MissingArtifact {
                path: csv_path.display().to_string(),
                build_command: format!("moselect evaluate --config {}", cfg.source_name()),
            })?;
            let (hash, records) = parse_records_csv(&text)
                .with_context(|| format!("parsing {}", csv_path.display()))?;
            let svg = render_accuracy_plot(&records, cfg.scenario.eval_snapshots, &hash)?;
            std::fs::create_dir_all(&cfg.paths.out_dir)
                .with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
            let out = cfg.accuracy_plot_path();
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_)) => 2,
        Some(Error::MissingArtifact { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

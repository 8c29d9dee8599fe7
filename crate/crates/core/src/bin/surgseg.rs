//! Command-line front end. Exit status: 0 when every selected cell
//! succeeded, 1 when any failed, 2 on configuration or I/O errors.

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use surgseg::autoseg::CellOutcome;
use surgseg::bridge::server::{serve, MockFactory};
use surgseg::experiment::{
    emit_report, expand_matrix, load_dataset, run_all, run_finetune, run_sweep, validate_all, Bundle, CellFilter,
    ExperimentConfig, ReferenceTable, ReportFormat,
};
use surgseg::mock::DriftModel;

#[derive(Parser)]
#[command(name = "surgseg", version, about = "Promptable video segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cell filter, e.g. `strategy=mask,policy=reinit-*`.
    #[arg(long)]
    filter: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config and load every dataset without running anything.
    Validate(Common),
    /// Run the experiment matrix and write the bundle and reports.
    Run(Common),
    /// Re-render reports from an existing bundle.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,markdown")]
        format: Vec<Format>,
    },
    /// Run the automatic-mask parameter sweep and write the gallery.
    Sweep(Common),
    /// Train the configured variant and evaluate it on held-out videos.
    Finetune(Common),
    /// Serve mock sessions over stdin/stdout for the config's datasets.
    #[command(hide = true)]
    ServeMock {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        dx: f64,
        #[arg(long, default_value_t = 0.0)]
        dy: f64,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf, CellFilter)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
        if let Some(ft) = &mut config.finetune {
            ft.training.seed = seed;
        }
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.clone());
    let filter = CellFilter::parse(common.filter.as_deref().unwrap_or(""))?;
    Ok((config, out, filter))
}

fn report_formats(formats: &[Format]) -> Vec<ReportFormat> {
    formats
        .iter()
        .map(|f| match f {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
        })
        .collect()
}

fn summarize(bundle: &Bundle) -> ExitCode {
    for c in &bundle.cells {
        let score = c.summary.as_ref().map_or("-".to_string(), |s| format!("mIoU {:.4}", s.miou));
        println!("{:<8} {score:<12} {}", c.status.label(), c.descriptor.key());
    }
    let failed = bundle.failed().count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", bundle.cells.len());
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn write_reports(bundle: &Bundle, out: &Path, formats: &[ReportFormat]) -> Result<()> {
    let table = ReferenceTable::bundled()?;
    for path in emit_report(bundle, &table, out, formats)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate(common) => {
            let (config, _, filter) = load(&common)?;
            for line in validate_all(&config)? {
                println!("{line}");
            }
            let cells = filter.apply(expand_matrix(&config)?);
            println!("{} cells selected", cells.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(common) => {
            let (config, out, filter) = load(&common)?;
            let cells = filter.apply(expand_matrix(&config)?);
            if cells.is_empty() {
                bail!("the filter selects no cells");
            }
            let bundle = run_all(&config, &cells, &out)?;
            write_reports(&bundle, &out, &[ReportFormat::Csv, ReportFormat::Markdown])?;
            Ok(summarize(&bundle))
        }
        Command::Report { common, format } => {
            let (config, out, filter) = load(&common)?;
            let mut bundle = Bundle::load(&out).with_context(|| format!("no results under {}", out.display()))?;
            bundle.cells.retain(|c| filter.matches(&c.descriptor));
            if bundle.config_digest != surgseg::experiment::runner::config_digest(&config) {
                log::warn!("bundle was produced by a different config");
            }
            write_reports(&bundle, &out, &report_formats(&format))?;
            Ok(summarize(&bundle))
        }
        Command::Sweep(common) => {
            let (config, out, _) = load(&common)?;
            let outcome = run_sweep(&config, &out)?;
            for cell in &outcome.report.cells {
                let c = &cell.config;
                let result = match &cell.outcome {
                    CellOutcome::Ok { stats, .. } => format!(
                        "{} masks, coverage {:.3}",
                        stats.candidate_count, stats.coverage_fraction
                    ),
                    CellOutcome::Failed { message } => format!("failed: {message}"),
                };
                println!(
                    "cell {}: points_per_side={} min_area={}: {result}",
                    cell.index, c.points_per_side, c.min_mask_region_area
                );
            }
            println!("gallery: {}", outcome.dir.display());
            if let Some(p) = outcome.pseudo_ground_truth {
                println!("pseudo ground truth: {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune(common) => {
            let (config, out, _) = load(&common)?;
            let outcome = run_finetune(&config, &out)?;
            for (epoch, loss) in outcome.training.epoch_losses.iter().enumerate() {
                println!("epoch {epoch}: loss {loss:.5}");
            }
            println!("checkpoint: {}", outcome.training.checkpoint.display());
            Ok(summarize(&outcome.bundle))
        }
        Command::ServeMock { config, dx, dy } => {
            let config = ExperimentConfig::load(&config)?;
            let mut videos = Vec::new();
            for spec in &config.datasets {
                videos.extend(load_dataset(spec)?.videos);
            }
            let drift = DriftModel {
                translation: (dx, dy),
                ..DriftModel::default()
            };
            let mut factory = MockFactory::new(videos, drift);
            serve(io::stdin().lock(), io::stdout().lock(), &mut factory)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

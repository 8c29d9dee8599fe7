//! The full prompt-by-policy matrix on the synthetic video, with the CSV and
//! Markdown reports next to the bundled reference numbers.
//!
//! ```text
//! cargo run --example experiment -- [output-dir]
//! ```

use std::path::PathBuf;

use surgseg::experiment::{emit_report, expand_matrix, run_all, ExperimentConfig, ReferenceTable, ReportFormat};

const CONFIG: &str = include_str!("configs/synthetic_matrix.toml");

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("surgseg-matrix"), PathBuf::from);
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let cells = expand_matrix(&config)?;
    let bundle = run_all(&config, &cells, &out)?;
    for c in &bundle.cells {
        let miou = c.summary.as_ref().map_or(f64::NAN, |s| s.miou);
        println!("{:<8} {miou:.4} {}", c.status.label(), c.descriptor.key());
    }
    let table = ReferenceTable::bundled()?;
    for path in emit_report(&bundle, &table, &out, &[ReportFormat::Csv, ReportFormat::Markdown])? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

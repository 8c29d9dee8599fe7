//! CSV and markdown reports over a finished bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::reference::{Metric, ReferenceTable};
use super::runner::{Bundle, CellRecord};
use super::ExperimentError;
use crate::dataset::GroundTruthKind;
use crate::metrics::fmt_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

/// Scores are fractions; reference values and deltas are percentages.
pub const REPORT_CSV_HEADER: [&str; 21] = [
    "dataset",
    "method",
    "strategy",
    "policy",
    "segmenter",
    "seed",
    "status",
    "videos",
    "miou",
    "mdice",
    "mae",
    "map",
    "ground_truth",
    "subsets",
    "reference_row",
    "reference_miou",
    "reference_mdice",
    "reference_map",
    "delta_miou",
    "delta_mdice",
    "key",
];

struct Reference {
    row: String,
    miou: Option<f64>,
    mdice: Option<f64>,
    map: Option<f64>,
}

fn reference(cell: &CellRecord, table: &ReferenceTable) -> Option<Reference> {
    let (row, column) = cell.reference.as_ref()?;
    Some(Reference {
        row: row.method.clone(),
        miou: table.get(row, column, Metric::Miou),
        mdice: table.get(row, column, Metric::Mdice),
        map: table.get(row, column, Metric::Map),
    })
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_default()
}

fn pct(x: f64) -> String {
    format!("{x:.2}")
}

fn gt_label(kind: GroundTruthKind) -> &'static str {
    match kind {
        GroundTruthKind::Annotated => "annotated",
        GroundTruthKind::Pseudo => "pseudo",
    }
}

fn delta(ours: Option<f64>, theirs: Option<f64>) -> Option<f64> {
    Some(ours? * 100.0 - theirs?)
}

pub fn write_csv<W: std::io::Write>(bundle: &Bundle, table: &ReferenceTable, out: W) -> Result<(), ExperimentError> {
    let err = |e: csv::Error| ExperimentError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER).map_err(err)?;
    for c in &bundle.cells {
        let d = &c.descriptor;
        let s = c.summary.as_ref();
        let p = reference(c, table);
        let pm = |f: fn(&Reference) -> Option<f64>| p.as_ref().and_then(f);
        w.write_record([
            d.dataset.clone(),
            d.method(),
            d.strategy.name(),
            d.policy.to_string(),
            d.segmenter_label.clone(),
            d.seed.to_string(),
            c.status.label().to_string(),
            s.map_or(String::new(), |s| s.videos.to_string()),
            opt(s.map(|s| s.miou), fmt_score),
            opt(s.map(|s| s.mdice), fmt_score),
            opt(s.map(|s| s.mae), fmt_score),
            opt(s.and_then(|s| s.map), fmt_score),
            s.map_or("", |s| gt_label(s.ground_truth)).to_string(),
            s.and_then(|s| s.subset_averaging).map_or("", |a| a.label()).to_string(),
            p.as_ref().map_or(String::new(), |p| p.row.clone()),
            opt(pm(|p| p.miou), pct),
            opt(pm(|p| p.mdice), pct),
            opt(pm(|p| p.map), pct),
            opt(delta(s.map(|s| s.miou), pm(|p| p.miou)), pct),
            opt(delta(s.map(|s| s.mdice), pm(|p| p.mdice)), pct),
            d.key(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| ExperimentError::Format(e.to_string()))?;
    Ok(())
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

/// One table per dataset; rows in bundle order. Values in percent.
pub fn render_markdown(bundle: &Bundle, table: &ReferenceTable) -> String {
    let mut by_dataset: BTreeMap<&str, Vec<&CellRecord>> = BTreeMap::new();
    for c in &bundle.cells {
        by_dataset.entry(c.descriptor.dataset.as_str()).or_default().push(c);
    }
    let mut out = String::from("# Results\n");
    for (dataset, cells) in by_dataset {
        let _ = writeln!(out, "\n## {}\n", md_escape(dataset));
        if let Some(a) = cells.iter().find_map(|c| c.summary.as_ref()?.subset_averaging) {
            let _ = writeln!(out, "Subsets combined: {}.\n", a.label().replace('_', " "));
        }
        out.push_str("| Method | Segmenter | Status | mIoU | mDice | mAP | mIoU (ref) | mDice (ref) | mAP (ref) |\n");
        out.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|\n");
        for c in cells {
            let s = c.summary.as_ref();
            let p = reference(c, table);
            let pm = |f: fn(&Reference) -> Option<f64>| p.as_ref().and_then(f);
            let ours = |x: Option<f64>| opt(x.map(|v| v * 100.0), pct);
            let mut status = c.status.label().to_string();
            if s.is_some_and(|s| s.ground_truth == GroundTruthKind::Pseudo) {
                status.push_str(" (pseudo GT)");
            }
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                md_escape(&c.descriptor.method()),
                md_escape(&c.descriptor.segmenter_label),
                status,
                ours(s.map(|s| s.miou)),
                ours(s.map(|s| s.mdice)),
                ours(s.and_then(|s| s.map)),
                opt(pm(|p| p.miou), pct),
                opt(pm(|p| p.mdice), pct),
                opt(pm(|p| p.map), pct),
            );
        }
    }
    out
}

/// Write the requested formats into `dir`; returns the files written.
pub fn emit_report(
    bundle: &Bundle,
    table: &ReferenceTable,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                let path = dir.join(REPORT_CSV);
                let file = fs::File::create(&path).map_err(|e| ExperimentError::io(&path, e))?;
                write_csv(bundle, table, file)?;
                written.push(path);
            }
            ReportFormat::Markdown => {
                let path = dir.join(REPORT_MD);
                fs::write(&path, render_markdown(bundle, table)).map_err(|e| ExperimentError::io(&path, e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::matrix::RunDescriptor;
    use crate::experiment::reference::vanilla_row;
    use crate::experiment::runner::{CellStatus, CellSummary, RunManifest};
    use crate::prompt::PromptStrategy;
    use crate::propagation::ReinitPolicy;

    fn cell(dataset: &str, label: &str, miou: f64, reference: Option<&str>) -> CellRecord {
        let d = RunDescriptor {
            dataset: dataset.into(),
            strategy: PromptStrategy::mask(),
            policy: ReinitPolicy::every(30),
            segmenter: 0,
            segmenter_label: label.into(),
            seed: 0,
        };
        CellRecord {
            reference: reference.map(|col| (vanilla_row(&d.strategy, &d.policy).unwrap(), col.to_string())),
            manifest: RunManifest {
                key: d.key(),
                seed: 0,
                config_digest: "c".into(),
                cell_digest: "d".into(),
                code_version: "v".into(),
            },
            descriptor: d,
            status: CellStatus::Ok,
            summary: Some(CellSummary {
                miou,
                mdice: miou,
                mae: 0.0,
                map: None,
                videos: 1,
                ground_truth: GroundTruthKind::Annotated,
                subset_averaging: None,
            }),
            videos: vec![],
        }
    }

    fn bundle(cells: Vec<CellRecord>) -> Bundle {
        Bundle {
            config_digest: "c".into(),
            code_version: "v".into(),
            cells,
        }
    }

    #[test]
    fn empty_bundle_gives_headers_only() {
        let t = ReferenceTable::bundled().unwrap();
        let mut buf = Vec::new();
        write_csv(&bundle(vec![]), &t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", REPORT_CSV_HEADER.join(",")));
        assert_eq!(render_markdown(&bundle(vec![]), &t), "# Results\n");
    }

    #[test]
    fn commas_are_quoted() {
        let t = ReferenceTable::bundled().unwrap();
        let mut buf = Vec::new();
        write_csv(&bundle(vec![cell("set, one", "mock(dx=1,dy=0)", 0.5, None)]), &t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("\"set, one\",Mask-Reinit 30,Mask,reinit-30,\"mock(dx=1,dy=0)\""), "{row}");
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "set, one");
        assert_eq!(rec.len(), REPORT_CSV_HEADER.len());
    }

    #[test]
    fn reference_values_sit_beside_ours() {
        let t = ReferenceTable::bundled().unwrap();
        let b = bundle(vec![cell("ev17", "bridge(large)", 0.75, Some("EndoVis2017"))]);
        let md = render_markdown(&b, &t);
        assert!(md.contains("| Mask-Reinit 30 | bridge(large) | ok | 75.00 | 75.00 |  | 76.15 | 79.31 |  |"), "{md}");
        let mut buf = Vec::new();
        write_csv(&b, &t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("SAM2-Mask-Reinit 30,76.15,79.31,,-1.15,-4.31"), "{text}");
    }
}

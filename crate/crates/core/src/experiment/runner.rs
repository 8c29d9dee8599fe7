//! Executing run descriptors: one directory per cell, resumable, with a
//! failing cell recorded rather than aborting the bundle.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DatasetSpec, ExperimentConfig, SegmenterSpec, SubsetAveraging, SubsetSpec};
use super::data::{load_dataset, LoadedDataset};
use super::matrix::RunDescriptor;
use super::reference::{vanilla_row, ReferenceRow};
use super::ExperimentError;
use crate::bridge::{acquire, open_session, DeviceLocks};
use crate::dataset::{AnnotatedVideo, ClassId, GroundTruthKind};
use crate::finetune::{ToyRuntime, ToySession};
use crate::metrics::{evaluate, write_metrics_csv, MetricsReport};
use crate::mock::MockSession;
use crate::propagation::{run_sequence, save_result};
use crate::session::SegmenterSession;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const BUNDLE_FILE: &str = "bundle.json";
pub const CELL_FILE: &str = "cell.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Some videos stopped early; scores cover the frames produced.
    Partial { message: String },
    Failed { message: String },
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Partial { .. } => "partial",
            CellStatus::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub segmenter: String,
    pub miou: f64,
    pub mdice: f64,
    pub mae: f64,
    pub map: Option<f64>,
    pub frames_evaluated: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub miou: f64,
    pub mdice: f64,
    pub mae: f64,
    pub map: Option<f64>,
    pub videos: usize,
    pub ground_truth: GroundTruthKind,
    /// How subsets were combined, for datasets that declare them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_averaging: Option<SubsetAveraging>,
}

/// Everything needed to trace a report row back to how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub key: String,
    pub seed: u64,
    pub config_digest: String,
    pub cell_digest: String,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub descriptor: RunDescriptor,
    pub status: CellStatus,
    pub summary: Option<CellSummary>,
    pub videos: Vec<VideoScore>,
    /// Published row and column to compare against, when declared.
    pub reference: Option<(ReferenceRow, String)>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub config_digest: String,
    pub code_version: String,
    pub cells: Vec<CellRecord>,
}

impl Bundle {
    pub fn failed(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Failed { .. }))
    }

    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Format(format!("{}: {e}", path.display())))
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(bytes))
}

pub fn config_digest(config: &ExperimentConfig) -> String {
    sha256_json(config)
}

/// Digest of everything that determines a cell's outcome.
fn cell_digest(d: &RunDescriptor, dataset: &DatasetSpec, seg: &SegmenterSpec, config: &ExperimentConfig) -> String {
    sha256_json(&(d, dataset, seg, &config.metrics, CODE_VERSION))
}

fn video_dir_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn open(
    seg: &SegmenterSpec,
    video: &AnnotatedVideo,
    data: &LoadedDataset,
    toy: Option<&ToyRuntime>,
) -> Result<Box<dyn SegmenterSession>, ExperimentError> {
    let session_err = |e: crate::session::SessionError| ExperimentError::Run(e.to_string());
    Ok(match seg {
        SegmenterSpec::Mock { drift } => Box::new(MockSession::new(Arc::new(video.clone()), *drift).map_err(session_err)?),
        SegmenterSpec::Bridge(c) => Box::new(open_session(&data.located(video.sequence()), c).map_err(session_err)?),
        SegmenterSpec::Finetuned { .. } => {
            let rt = toy.expect("loaded for finetuned cells");
            let (w, h) = video.sequence().frame_size().unwrap_or((0, 0));
            let lumas = data.lumas(video.sequence())?;
            Box::new(ToySession::new(rt, seg.label(), w, h, lumas).map_err(session_err)?)
        }
    })
}

/// Dataset-level scores: per class, the mean over videos containing it; then
/// the mean over classes. MAE and mAP are means over videos.
pub fn summarize(reports: &[MetricsReport]) -> Option<CellSummary> {
    if reports.is_empty() {
        return None;
    }
    let mut per_class: BTreeMap<ClassId, (f64, f64, usize)> = BTreeMap::new();
    for r in reports {
        for (c, s) in &r.per_class {
            let e = per_class.entry(*c).or_default();
            e.0 += s.iou;
            e.1 += s.dice;
            e.2 += 1;
        }
    }
    let classes = per_class.len().max(1) as f64;
    let miou = per_class.values().map(|(i, _, n)| i / *n as f64).sum::<f64>() / classes;
    let mdice = per_class.values().map(|(_, d, n)| d / *n as f64).sum::<f64>() / classes;
    let mae = reports.iter().map(|r| r.mae).sum::<f64>() / reports.len() as f64;
    let maps: Vec<f64> = reports.iter().filter_map(|r| r.map_score).collect();
    let map = (!maps.is_empty()).then(|| maps.iter().sum::<f64>() / maps.len() as f64);
    let ground_truth = if reports.iter().any(|r| r.ground_truth == GroundTruthKind::Pseudo) {
        GroundTruthKind::Pseudo
    } else {
        GroundTruthKind::Annotated
    };
    Some(CellSummary {
        miou,
        mdice,
        mae,
        map,
        videos: reports.len(),
        ground_truth,
        subset_averaging: None,
    })
}

/// [`summarize`] honoring declared subsets. Per-subset averaging summarizes
/// each subset's videos on their own, then takes the mean over subsets.
pub fn summarize_subsets(
    reports: &[MetricsReport],
    video_ids: &[&str],
    subsets: Option<&SubsetSpec>,
) -> Result<Option<CellSummary>, ExperimentError> {
    let Some(spec) = subsets else {
        return Ok(summarize(reports));
    };
    if spec.averaging == SubsetAveraging::Joint {
        return Ok(summarize(reports).map(|s| CellSummary {
            subset_averaging: Some(SubsetAveraging::Joint),
            ..s
        }));
    }
    let mut groups: BTreeMap<&str, Vec<MetricsReport>> = BTreeMap::new();
    for (report, id) in reports.iter().zip(video_ids) {
        let group = spec
            .groups
            .iter()
            .find(|(_, ids)| ids.iter().any(|v| v == id))
            .map(|(g, _)| g.as_str())
            .ok_or_else(|| ExperimentError::Run(format!("video {id:?} is in no subset")))?;
        groups.entry(group).or_default().push(report.clone());
    }
    let parts: Vec<CellSummary> = groups.values().filter_map(|r| summarize(r)).collect();
    if parts.is_empty() {
        return Ok(None);
    }
    let n = parts.len() as f64;
    let mean = |f: fn(&CellSummary) -> f64| parts.iter().map(f).sum::<f64>() / n;
    let maps: Vec<f64> = parts.iter().filter_map(|s| s.map).collect();
    Ok(Some(CellSummary {
        miou: mean(|s| s.miou),
        mdice: mean(|s| s.mdice),
        mae: mean(|s| s.mae),
        map: (!maps.is_empty()).then(|| maps.iter().sum::<f64>() / maps.len() as f64),
        videos: parts.iter().map(|s| s.videos).sum(),
        ground_truth: if parts.iter().any(|s| s.ground_truth == GroundTruthKind::Pseudo) {
            GroundTruthKind::Pseudo
        } else {
            GroundTruthKind::Annotated
        },
        subset_averaging: Some(SubsetAveraging::PerSubset),
    }))
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    datasets: BTreeMap<String, Result<LoadedDataset, String>>,
    locks: DeviceLocks,
    out: PathBuf,
    config_digest: String,
}

type CellBody = (CellStatus, Option<CellSummary>, Vec<VideoScore>);

fn run_cell(ctx: &Context<'_>, d: &RunDescriptor, dir: &Path) -> Result<CellBody, ExperimentError> {
    let data = match &ctx.datasets[&d.dataset] {
        Ok(data) => data,
        Err(message) => return Err(ExperimentError::Run(message.clone())),
    };
    let seg = &ctx.config.segmenters[d.segmenter];
    let toy = match seg {
        SegmenterSpec::Finetuned { checkpoint, .. } => {
            Some(ToyRuntime::load_checkpoint(checkpoint).map_err(|e| ExperimentError::Run(e.to_string()))?)
        }
        _ => None,
    };
    let lock = seg.device().map(|dev| ctx.locks.lock_for(dev));
    let _guard = lock.as_deref().map(acquire);
    let videos = data.evaluation_videos()?;
    let mut reports = Vec::new();
    let mut scores = Vec::new();
    let mut partial = Vec::new();
    for video in &videos {
        let mut session = open(seg, video, data, toy.as_ref())?;
        let result = run_sequence(video, &d.strategy, &d.policy, &mut session)
            .map_err(|e| ExperimentError::Run(format!("{}: {e}", video.video_id())))?;
        let vdir = dir.join("videos").join(video_dir_name(video.video_id()));
        save_result(&result, &vdir).map_err(|e| ExperimentError::Run(e.to_string()))?;
        let report = evaluate(&result, video, ctx.config.metrics.aggregation, ctx.config.metrics.map)
            .map_err(|e| ExperimentError::Run(format!("{}: {e}", video.video_id())))?;
        let csv_path = vdir.join("metrics.csv");
        let file = fs::File::create(&csv_path).map_err(|e| ExperimentError::io(&csv_path, e))?;
        write_metrics_csv(&report, file).map_err(|e| ExperimentError::Run(e.to_string()))?;
        if let Some(f) = &result.failure {
            partial.push(format!("{} stopped at frame {}: {}", video.video_id(), f.frame_index, f.message));
        }
        scores.push(VideoScore {
            video_id: video.video_id().to_string(),
            segmenter: result.provenance.segmenter.clone(),
            miou: report.miou,
            mdice: report.mdice,
            mae: report.mae,
            map: report.map_score,
            frames_evaluated: report.frames_evaluated,
            complete: result.is_complete(),
        });
        reports.push(report);
    }
    let status = if partial.is_empty() {
        CellStatus::Ok
    } else {
        CellStatus::Partial {
            message: partial.join("; "),
        }
    };
    let ids: Vec<&str> = videos.iter().map(|v| v.video_id()).collect();
    let summary = summarize_subsets(&reports, &ids, data.spec.subsets.as_ref())?;
    Ok((status, summary, scores))
}

fn reference_for(config: &ExperimentConfig, d: &RunDescriptor) -> Option<(ReferenceRow, String)> {
    let column = config.dataset(&d.dataset)?.reference.clone()?;
    let row = match &config.segmenters[d.segmenter] {
        SegmenterSpec::Finetuned { reference, .. } => reference.clone(),
        _ => vanilla_row(&d.strategy, &d.policy),
    }?;
    Some((row, column))
}

fn execute(ctx: &Context<'_>, d: &RunDescriptor) -> CellRecord {
    let dir = ctx.out.join("runs").join(d.dir_name());
    let dataset = ctx.config.dataset(&d.dataset).expect("descriptor from this config");
    let seg = &ctx.config.segmenters[d.segmenter];
    let manifest = RunManifest {
        key: d.key(),
        seed: d.seed,
        config_digest: ctx.config_digest.clone(),
        cell_digest: cell_digest(d, dataset, seg, ctx.config),
        code_version: CODE_VERSION.to_string(),
    };
    let cell_path = dir.join(CELL_FILE);
    if let Ok(text) = fs::read_to_string(&cell_path) {
        if let Ok(prev) = serde_json::from_str::<CellRecord>(&text) {
            let reusable = prev.manifest.cell_digest == manifest.cell_digest
                && !matches!(prev.status, CellStatus::Failed { .. });
            if reusable {
                log::info!("{}: already complete, skipping", d.key());
                return CellRecord { manifest, ..prev };
            }
        }
    }
    log::info!("{}: running", d.key());
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        run_cell(ctx, d, &dir)
    }))
    .unwrap_or_else(|panic| {
        let message = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(ExperimentError::Run(format!("panicked: {message}")))
    });
    let (status, summary, videos) = match outcome {
        Ok(body) => body,
        Err(e) => {
            log::warn!("{}: failed: {e}", d.key());
            (CellStatus::Failed { message: e.to_string() }, None, Vec::new())
        }
    };
    let record = CellRecord {
        descriptor: d.clone(),
        status,
        summary,
        videos,
        reference: reference_for(ctx.config, d),
        manifest,
    };
    if fs::create_dir_all(&dir).is_ok() {
        let text = serde_json::to_string_pretty(&record).expect("record serializes");
        if let Err(e) = fs::write(&cell_path, text) {
            log::warn!("{}: cannot write {}: {e}", d.key(), cell_path.display());
        }
    }
    record
}

/// Run every descriptor under `out`, reusing cells that already completed
/// with the same inputs. The bundle is written to `out/bundle.json`.
pub fn run_all(config: &ExperimentConfig, descriptors: &[RunDescriptor], out: &Path) -> Result<Bundle, ExperimentError> {
    config.validate(true)?;
    fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let mut datasets = BTreeMap::new();
    for d in descriptors {
        if !datasets.contains_key(&d.dataset) {
            let spec = config
                .dataset(&d.dataset)
                .ok_or_else(|| ExperimentError::Run(format!("unknown dataset {:?}", d.dataset)))?;
            datasets.insert(d.dataset.clone(), load_dataset(spec).map_err(|e| e.to_string()));
        }
    }
    let ctx = Context {
        config,
        datasets,
        locks: DeviceLocks::default(),
        out: out.to_path_buf(),
        config_digest: config_digest(config),
    };
    let workers = config.workers.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Run(e.to_string()))?;
    let cells = pool.install(|| descriptors.par_iter().map(|d| execute(&ctx, d)).collect());
    let bundle = Bundle {
        config_digest: ctx.config_digest.clone(),
        code_version: CODE_VERSION.to_string(),
        cells,
    };
    let path = out.join(BUNDLE_FILE);
    let text = serde_json::to_string_pretty(&bundle).expect("bundle serializes");
    fs::write(&path, text).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::matrix::{expand_matrix, CellFilter};

    fn config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            schema_version = 1
            workers = 2
            [[datasets]]
            name = "synthetic"
            adapter = {{ kind = "synthetic", frames = 40 }}
            [[segmenters]]
            kind = "mock"
            drift = {{ translation = [1, 0] }}
            {extra}
            "#
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn matrix_runs_and_resumes() {
        let cfg = config("");
        let runs = CellFilter::parse("policy=reinit-30").unwrap().apply(expand_matrix(&cfg).unwrap());
        let tmp = tempfile::tempdir().unwrap();
        let first = run_all(&cfg, &runs, tmp.path()).unwrap();
        assert_eq!(first.cells.len(), 5);
        assert_eq!(first.failed().count(), 0);
        for c in &first.cells {
            let dir = tmp.path().join("runs").join(c.descriptor.dir_name());
            assert!(dir.join(CELL_FILE).is_file());
            assert!(dir.join("videos/synthetic/metrics.csv").is_file());
        }
        assert_eq!(Bundle::load(tmp.path()).unwrap(), first);

        // A second run reuses every cell.
        let marker = tmp.path().join("runs").join(runs[0].dir_name()).join("videos");
        fs::remove_dir_all(&marker).unwrap();
        let second = run_all(&cfg, &runs, tmp.path()).unwrap();
        assert_eq!(second, first);
        assert!(!marker.exists());
    }

    #[test]
    fn failing_segmenter_does_not_abort_the_bundle() {
        let tmp = tempfile::tempdir().unwrap();
        let ckpt = tmp.path().join("model.pt");
        fs::write(&ckpt, b"x").unwrap();
        let cfg = config(&format!(
            r#"
            [[segmenters]]
            kind = "bridge"
            checkpoint = {:?}
            variant = "large"
            device = "cpu"
            runtime_command = ["/nonexistent/runtime"]
            "#,
            ckpt.display().to_string()
        ));
        let runs = CellFilter::parse("strategy=mask,policy=none").unwrap().apply(expand_matrix(&cfg).unwrap());
        assert_eq!(runs.len(), 2);
        let bundle = run_all(&cfg, &runs, &tmp.path().join("out")).unwrap();
        assert_eq!(bundle.cells[0].status, CellStatus::Ok);
        assert!(matches!(&bundle.cells[1].status, CellStatus::Failed { message } if message.contains("cannot start")));
        assert_eq!(bundle.failed().count(), 1);
    }

    fn class_report(scores: &[(u32, f64)]) -> MetricsReport {
        use crate::metrics::ClassScores;
        MetricsReport {
            per_class: scores
                .iter()
                .map(|(c, v)| {
                    let s = ClassScores {
                        name: c.to_string(),
                        iou: *v,
                        dice: *v,
                        mae: 0.0,
                        counts: Default::default(),
                    };
                    (*c, s)
                })
                .collect(),
            miou: 0.0,
            mdice: 0.0,
            mae: 0.0,
            phi: 0.0,
            map_score: None,
            map_definition: None,
            class_count: scores.len(),
            pixel_count: 1,
            frames_evaluated: 1,
            aggregation: Default::default(),
            ground_truth: GroundTruthKind::Annotated,
        }
    }

    #[test]
    fn summary_averages_classes_over_videos() {
        let report = class_report;
        let s = summarize(&[report(&[(1, 0.8), (2, 0.4)]), report(&[(1, 0.6)])]).unwrap();
        // class 1: 0.7, class 2: 0.4
        assert!((s.miou - 0.55).abs() < 1e-12);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn subsets_average_joint_or_separately() {
        let report = |v: f64| class_report(&[(1, v)]);
        let reports = [report(0.9), report(0.7), report(0.2)];
        let ids = ["a1", "a2", "b1"];
        let spec = |averaging| SubsetSpec {
            groups: BTreeMap::from([
                ("a".to_string(), vec!["a1".to_string(), "a2".to_string()]),
                ("b".to_string(), vec!["b1".to_string()]),
            ]),
            averaging,
        };
        let joint = summarize_subsets(&reports, &ids, Some(&spec(SubsetAveraging::Joint))).unwrap().unwrap();
        assert!((joint.miou - 0.6).abs() < 1e-12);
        assert_eq!(joint.subset_averaging, Some(SubsetAveraging::Joint));
        let split = summarize_subsets(&reports, &ids, Some(&spec(SubsetAveraging::PerSubset))).unwrap().unwrap();
        // a: 0.8, b: 0.2
        assert!((split.miou - 0.5).abs() < 1e-12);
        assert_eq!(split.videos, 3);
        assert!(summarize_subsets(&reports, &["a1", "a2", "c1"], Some(&spec(SubsetAveraging::PerSubset))).is_err());
        assert_eq!(summarize_subsets(&reports, &ids, None).unwrap().unwrap().subset_averaging, None);
    }
}

//! Config-driven experiment matrix: datasets x prompt strategies x
//! re-initialization policies x segmenters, with per-cell persistence and
//! reports that place published scores beside measured ones.

pub mod config;
pub mod data;
pub mod matrix;
pub mod reference;
pub mod report;
pub mod runner;
pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::Digest as _;

pub use config::{
    AdapterSpec, DatasetSpec, ExperimentConfig, GeneratorSpec, SegmenterSpec, SubsetAveraging, SubsetSpec, SCHEMA_VERSION,
};
pub use data::{load_dataset, LoadedDataset};
pub use matrix::{expand_matrix, CellFilter, RunDescriptor};
pub use reference::{finetuned_row, vanilla_row, ReferenceRow, ReferenceTable};
pub use report::{emit_report, ReportFormat};
pub use runner::{run_all, Bundle, CellRecord, CellStatus};
pub use synthetic::{synthetic_video, synthetic_videos, SyntheticFrames, SyntheticSpec};

use crate::autoseg::{
    pseudo_ground_truth_video, select_pseudo_ground_truth, sweep, write_gallery, AutoMaskGenerator,
    AutosegError, ColorRegionGenerator, GalleryIndex, SweepReport,
};
use crate::bridge::open_session;
use crate::dataset::{to_coco_document, AnnotatedVideo};
use crate::finetune::{
    build_clips, build_plan, check_isolation, exclude_test_frames, train, trainable_label, FinetuneError,
    SplitChoice, ToyRuntime, ToySession, TrainingOutcome, TrainingPlan,
};
use crate::metrics::evaluate;
use crate::propagation::{run_sequence, ReinitPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("dataset {dataset}: {message}")]
    Dataset { dataset: String, message: String },
    #[error("{0}")]
    Run(String),
    #[error("bad filter: {0}")]
    Filter(String),
    #[error("reference table: {0}")]
    Reference(String),
    #[error("reference table checksum mismatch: expected {expected}, got {actual}")]
    ReferenceIntegrity { expected: String, actual: String },
    #[error("{0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Autoseg(#[from] AutosegError),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Full validation: config problems first, then every dataset is loaded.
/// Returns one summary line per dataset.
pub fn validate_all(config: &ExperimentConfig) -> Result<Vec<String>, ExperimentError> {
    config.validate(true)?;
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for spec in &config.datasets {
        match load_dataset(spec) {
            Ok(data) => {
                let frames: usize = data.videos.iter().map(|v| v.sequence().len()).sum();
                let annotated: usize = data.videos.iter().map(|v| v.annotated_frames().len()).sum();
                lines.push(format!(
                    "{}: {} videos, {frames} frames, {annotated} annotated",
                    spec.name,
                    data.videos.len()
                ));
                if let Err(e) = data.evaluation_videos() {
                    problems.push(e.to_string());
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
    }
    if problems.is_empty() {
        Ok(lines)
    } else {
        Err(ExperimentError::Config(problems))
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub report: SweepReport,
    pub gallery: GalleryIndex,
    pub pseudo_ground_truth: Option<PathBuf>,
}

/// Run the configured automatic-mask grid on one frame and write the
/// inspection gallery. With `select`, the chosen cell becomes pseudo ground
/// truth, written as a COCO document.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepOutcome, ExperimentError> {
    config.validate(true)?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Config(vec!["no [sweep] section".into()]))?;
    let data = load_dataset(config.dataset(&spec.dataset).expect("validated"))?;
    let video = match &spec.video {
        Some(id) => data
            .videos
            .iter()
            .find(|v| v.video_id() == id)
            .ok_or_else(|| ExperimentError::Config(vec![format!("sweep: unknown video {id:?}")]))?,
        None => &data.videos[0],
    };
    let frame = spec.frame.unwrap_or(0);
    let image = data
        .frames
        .frame_rgb(video.sequence(), frame)
        .map_err(|e| ExperimentError::Run(e.to_string()))?;
    let mut generator: Box<dyn AutoMaskGenerator> = match &spec.generator {
        GeneratorSpec::Reference => Box::new(ColorRegionGenerator::default()),
        GeneratorSpec::Bridge(c) => {
            Box::new(open_session(&data.located(video.sequence()), c).map_err(|e| ExperimentError::Run(e.to_string()))?)
        }
    };
    let report = sweep(video.video_id(), frame, &image, &spec.grid, generator.as_mut())?;
    let dir = out.join("sweep").join(format!("{}_f{frame:06}", video.video_id()));
    let gallery = write_gallery(&report, &image, &dir)?;
    let pseudo_ground_truth = match spec.select {
        Some(cell) => {
            let anns = select_pseudo_ground_truth(&report, cell)?;
            let pseudo = pseudo_ground_truth_video(video.sequence().clone(), anns)?;
            let path = dir.join("pseudo_ground_truth.json");
            write_json(&path, &to_coco_document(&[pseudo], Path::new("")))?;
            Some(path)
        }
        None => None,
    };
    Ok(SweepOutcome {
        dir,
        report,
        gallery,
        pseudo_ground_truth,
    })
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub dir: PathBuf,
    pub plan: TrainingPlan,
    pub training: TrainingOutcome,
    pub bundle: Bundle,
}

fn train_test(
    data: &LoadedDataset,
    choice: &SplitChoice,
) -> Result<(Vec<AnnotatedVideo>, Vec<AnnotatedVideo>), ExperimentError> {
    match choice {
        SplitChoice::Official => data.split(None),
        SplitChoice::Seeded(s) => data.split(Some(s)),
    }
}

/// Train the configured variant with the built-in CPU runtime, then evaluate
/// the checkpoint on the held-out side without re-initialization.
pub fn run_finetune(config: &ExperimentConfig, out: &Path) -> Result<FinetuneOutcome, ExperimentError> {
    config.validate(true)?;
    let spec = config
        .finetune
        .as_ref()
        .ok_or_else(|| ExperimentError::Config(vec!["no [finetune] section".into()]))?;
    let training = &spec.training;
    let dataset_spec = config.dataset(&spec.dataset).expect("validated");
    let data = load_dataset(dataset_spec)?;
    let (train_videos, test_videos) = train_test(&data, &training.split)?;

    let mut plan = build_plan(&train_videos, training)?;
    exclude_test_frames(&mut plan, &test_videos);
    check_isolation(&plan, &test_videos)?;

    let mut lumas = HashMap::new();
    for v in &train_videos {
        lumas.insert(v.video_id().to_string(), data.lumas(v.sequence())?);
    }
    let images = |v: &AnnotatedVideo, f: usize| lumas[v.video_id()][f].clone();
    let clips = build_clips(&plan, &train_videos, training, &images)?;

    let label = trainable_label(&training.trainable);
    let name: String = format!("{label}_{}_{}", training.regime, training.prompt_type)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_");
    let dir = out.join("finetune").join(&name);
    let mut runtime = ToyRuntime::new();
    let outcome = train(&plan, &clips, training, &mut runtime, &dir)?;
    write_json(&dir.join("plan.json"), &plan)?;
    write_json(&dir.join("freeze.json"), &outcome.freeze)?;

    let trained = ToyRuntime::load_checkpoint(&outcome.checkpoint)?;
    let strategy = training.prompt_strategy();
    let policy = ReinitPolicy::none();
    let segmenter = SegmenterSpec::Finetuned {
        checkpoint: outcome.checkpoint.clone(),
        label: Some(name.clone()),
        reference: Some(finetuned_row(training)),
    };
    let descriptor = RunDescriptor {
        dataset: spec.dataset.clone(),
        strategy,
        policy,
        segmenter: 0,
        segmenter_label: segmenter.label(),
        seed: training.seed,
    };
    let mut reports = Vec::new();
    let mut videos = Vec::new();
    for v in &test_videos {
        let (w, h) = v.sequence().frame_size().unwrap_or((0, 0));
        let mut session = ToySession::new(&trained, &name, w, h, data.lumas(v.sequence())?)
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        let result = run_sequence(v, &strategy, &policy, &mut session).map_err(|e| ExperimentError::Run(e.to_string()))?;
        let report = evaluate(&result, v, config.metrics.aggregation, config.metrics.map)
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        videos.push(runner::VideoScore {
            video_id: v.video_id().to_string(),
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
    let ids: Vec<&str> = test_videos.iter().map(|v| v.video_id()).collect();
    let summary = runner::summarize_subsets(&reports, &ids, dataset_spec.subsets.as_ref())?;
    let config_digest = runner::config_digest(config);
    let cell = CellRecord {
        manifest: runner::RunManifest {
            key: descriptor.key(),
            seed: training.seed,
            config_digest: config_digest.clone(),
            cell_digest: hex::encode(sha2::Sha256::digest(
                serde_json::to_vec(&(&descriptor, training)).expect("serializable"),
            )),
            code_version: runner::CODE_VERSION.into(),
        },
        reference: dataset_spec
            .reference
            .clone()
            .map(|col| (finetuned_row(training), col)),
        status: CellStatus::Ok,
        summary,
        videos,
        descriptor,
    };
    let bundle = Bundle {
        config_digest,
        code_version: runner::CODE_VERSION.into(),
        cells: vec![cell],
    };
    write_json(&dir.join(runner::BUNDLE_FILE), &bundle)?;
    emit_report(
        &bundle,
        &ReferenceTable::bundled()?,
        &dir,
        &[ReportFormat::Csv, ReportFormat::Markdown],
    )?;
    Ok(FinetuneOutcome {
        dir,
        plan,
        training: outcome,
        bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FINETUNE: &str = r#"
        schema_version = 1
        [[datasets]]
        name = "synthetic"
        adapter = { kind = "synthetic", frames = 20, videos = 3 }
        test_videos = ["synthetic-2"]
        [[segmenters]]
        kind = "mock"
        [finetune]
        dataset = "synthetic"
        [finetune.training]
        trainable = ["mask_decoder", "prompt_encoder"]
        regime = { kind = "image_sparse", stride = 4 }
        prompt_type = "mask"
        split = "official"
        epochs = 2
        learning_rate = 0.05
    "#;

    #[test]
    fn finetune_trains_then_evaluates_held_out_video() {
        let cfg = ExperimentConfig::from_toml(FINETUNE).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let out = run_finetune(&cfg, tmp.path()).unwrap();
        assert_eq!(out.plan.supervised().count(), 10);
        assert!(out.plan.entries.iter().all(|e| e.video_id != "synthetic-2"));
        assert_eq!(out.training.epoch_losses.len(), 2);
        assert_eq!(out.training.freeze.trainable_parameters(), 4);
        for f in ["plan.json", "freeze.json", "bundle.json", "report.csv", "report.md"] {
            assert!(out.dir.join(f).is_file(), "{f}");
        }
        let cell = &out.bundle.cells[0];
        assert_eq!(cell.status, CellStatus::Ok);
        assert_eq!(cell.videos.len(), 1);
        assert_eq!(cell.videos[0].video_id, "synthetic-2");
        assert!(cell.summary.as_ref().unwrap().miou > 0.0);
    }

    #[test]
    fn sweep_writes_gallery_and_pseudo_ground_truth() {
        let text = r#"
            schema_version = 1
            [[datasets]]
            name = "synthetic"
            adapter = { kind = "synthetic", frames = 4 }
            [[segmenters]]
            kind = "mock"
            [sweep]
            dataset = "synthetic"
            frame = 2
            select = 0
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let out = run_sweep(&cfg, tmp.path()).unwrap();
        assert_eq!(out.report.cells.len(), 4);
        assert!(out.dir.ends_with("sweep/synthetic_f000002"));
        let pseudo = out.pseudo_ground_truth.unwrap();
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(pseudo).unwrap()).unwrap();
        assert!(!doc["annotations"].as_array().unwrap().is_empty());
    }

    #[test]
    fn validate_all_reports_missing_videos() {
        let cfg = ExperimentConfig::from_toml(&FINETUNE.replace("synthetic-2\"]", "nope\"]")).unwrap();
        let err = validate_all(&cfg).unwrap_err().to_string();
        assert!(err.contains("nope"), "{err}");
        let ok = validate_all(&ExperimentConfig::from_toml(FINETUNE).unwrap()).unwrap();
        assert_eq!(ok, ["synthetic: 3 videos, 60 frames, 60 annotated"]);
    }
}

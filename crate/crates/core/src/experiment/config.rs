//! The declarative experiment file (TOML) and its validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::reference::ReferenceRow;
use super::synthetic::SyntheticSpec;
use super::ExperimentError;
use crate::autoseg::AutoSegConfig;
use crate::bridge::BridgeConfig;
use crate::dataset::SplitSpec;
use crate::finetune::FinetuneConfig;
use crate::metrics::AggregationOrder;
use crate::mock::DriftModel;
use crate::prompt::PromptStrategy;
use crate::propagation::ReinitPolicy;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads for the run pool; defaults to the CPU count.
    #[serde(default)]
    pub workers: Option<usize>,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default = "PromptStrategy::standard_set")]
    pub strategies: Vec<PromptStrategy>,
    #[serde(default = "ReinitPolicy::standard_set")]
    pub policies: Vec<ReinitPolicy>,
    pub segmenters: Vec<SegmenterSpec>,
    #[serde(default)]
    pub metrics: MetricsOptions,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub finetune: Option<FinetuneSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub adapter: AdapterSpec,
    /// Column of the reference table to compare against, e.g. `EndoVis2017`.
    #[serde(default)]
    pub reference: Option<String>,
    /// Resample to this rate before anything else.
    #[serde(default)]
    pub sample_fps: Option<f64>,
    /// Official held-out videos. When set (or when `split` is), runs evaluate
    /// only the test side.
    #[serde(default)]
    pub test_videos: Option<Vec<String>>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub subsets: Option<SubsetSpec>,
}

/// Named groups of videos, such as one per organ, and how their scores
/// combine into the dataset summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSpec {
    pub groups: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub averaging: SubsetAveraging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetAveraging {
    /// All evaluated videos pooled into one summary.
    #[default]
    Joint,
    /// One summary per subset, then the unweighted mean over subsets.
    PerSubset,
}

impl SubsetAveraging {
    pub fn label(self) -> &'static str {
        match self {
            SubsetAveraging::Joint => "joint",
            SubsetAveraging::PerSubset => "per_subset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    Synthetic(SyntheticSpec),
    /// COCO instance document; image locators resolve against `image_root`.
    Coco { annotations: PathBuf, image_root: PathBuf },
    /// `root/<video>/labels/*.png` label images with optional
    /// `root/<video>/images/<same name>` frames.
    Pixel {
        root: PathBuf,
        palette: PathBuf,
        #[serde(default = "default_fps")]
        fps: f64,
    },
}

fn default_fps() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterSpec {
    Mock {
        #[serde(default)]
        drift: DriftModel,
    },
    Bridge(BridgeConfig),
    /// A checkpoint written by the `finetune` verb.
    Finetuned {
        checkpoint: PathBuf,
        #[serde(default)]
        label: Option<String>,
        /// Published row to show beside this segmenter's scores.
        #[serde(default)]
        reference: Option<ReferenceRow>,
    },
}

impl SegmenterSpec {
    /// Short stable label used in run keys and reports.
    pub fn label(&self) -> String {
        match self {
            SegmenterSpec::Mock { drift } => {
                let d = drift;
                let dropout = d.dropout_after.map_or("none".to_string(), |h| h.to_string());
                format!(
                    "mock(dx={},dy={},erosion={},dropout={dropout})",
                    d.translation.0, d.translation.1, d.erosion_rate
                )
            }
            SegmenterSpec::Bridge(c) => format!("bridge({})", c.variant),
            SegmenterSpec::Finetuned { checkpoint, label, .. } => {
                let name = label.clone().unwrap_or_else(|| {
                    checkpoint
                        .parent()
                        .and_then(|p| p.file_name())
                        .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned())
                });
                format!("finetuned({name})")
            }
        }
    }

    pub fn device(&self) -> Option<&str> {
        match self {
            SegmenterSpec::Bridge(c) => Some(&c.device),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    pub aggregation: AggregationOrder,
    /// Also compute mAP at IoU 0.5 (instance datasets).
    pub map: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// The built-in color-region generator.
    Reference,
    Bridge(BridgeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub dataset: String,
    /// Defaults to the dataset's first video.
    #[serde(default)]
    pub video: Option<String>,
    /// Defaults to frame 0.
    #[serde(default)]
    pub frame: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid: Vec<AutoSegConfig>,
    #[serde(default = "default_generator")]
    pub generator: GeneratorSpec,
    /// Cell chosen after inspection; its masks are written as pseudo ground truth.
    #[serde(default)]
    pub select: Option<usize>,
}

fn default_generator() -> GeneratorSpec {
    GeneratorSpec::Reference
}

/// Starting grid: two sampling densities crossed with two island filters.
/// These are exploration defaults, not tuned values.
pub fn default_grid() -> Vec<AutoSegConfig> {
    let mut grid = Vec::new();
    for points_per_side in [16, 32] {
        for min_mask_region_area in [0, 64] {
            grid.push(AutoSegConfig {
                points_per_side,
                min_mask_region_area,
                ..AutoSegConfig::default()
            });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub dataset: String,
    pub training: FinetuneConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(vec![e.to_string()]))
    }

    /// Parse a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output);
        for d in &mut self.datasets {
            match &mut d.adapter {
                AdapterSpec::Synthetic(_) => {}
                AdapterSpec::Coco {
                    annotations,
                    image_root,
                } => {
                    resolve(base, annotations);
                    resolve(base, image_root);
                }
                AdapterSpec::Pixel { root, palette, .. } => {
                    resolve(base, root);
                    resolve(base, palette);
                }
            }
        }
        let bridges = self
            .segmenters
            .iter_mut()
            .filter_map(|s| match s {
                SegmenterSpec::Bridge(c) => Some(c),
                _ => None,
            })
            .chain(self.sweep.iter_mut().filter_map(|s| match &mut s.generator {
                GeneratorSpec::Bridge(c) => Some(c),
                GeneratorSpec::Reference => None,
            }));
        for c in bridges {
            resolve(base, &mut c.checkpoint);
        }
        for s in &mut self.segmenters {
            if let SegmenterSpec::Finetuned { checkpoint, .. } = s {
                resolve(base, checkpoint);
            }
        }
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Every problem found, not just the first. `check_files` also requires
    /// referenced locators and checkpoints to exist.
    pub fn problems(&self, check_files: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for (axis, empty) in [
            ("datasets", self.datasets.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("policies", self.policies.is_empty()),
            ("segmenters", self.segmenters.is_empty()),
        ] {
            if empty {
                out.push(format!("{axis} must not be empty"));
            }
        }
        if self.workers == Some(0) {
            out.push("workers must be positive".into());
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if d.name.trim().is_empty() {
                out.push("dataset name is empty".into());
            } else if !names.insert(d.name.as_str()) {
                out.push(format!("dataset {:?} declared twice", d.name));
            }
            if let Some(fps) = d.sample_fps {
                if !(fps > 0.0) {
                    out.push(format!("{}: sample_fps must be positive", d.name));
                }
            }
            if d.test_videos.is_some() && d.split.is_some() {
                out.push(format!("{}: give either test_videos or split, not both", d.name));
            }
            if let Some(s) = &d.subsets {
                let mut seen = BTreeSet::new();
                for (group, ids) in &s.groups {
                    if ids.is_empty() {
                        out.push(format!("{}: subset {group:?} lists no videos", d.name));
                    }
                    for id in ids.iter().filter(|id| !seen.insert(id.as_str())) {
                        out.push(format!("{}: video {id:?} is in more than one subset", d.name));
                    }
                }
                if s.groups.is_empty() {
                    out.push(format!("{}: subsets declares no groups", d.name));
                }
            }
            let missing = |p: &Path| check_files && !p.exists();
            match &d.adapter {
                AdapterSpec::Synthetic(s) => {
                    if let Err(e) = s.validate() {
                        out.push(format!("{}: {e}", d.name));
                    }
                }
                AdapterSpec::Coco {
                    annotations,
                    image_root,
                } => {
                    for p in [annotations, image_root] {
                        if missing(p) {
                            out.push(format!("{}: {} does not exist", d.name, p.display()));
                        }
                    }
                }
                AdapterSpec::Pixel { root, palette, fps } => {
                    for p in [root, palette] {
                        if missing(p) {
                            out.push(format!("{}: {} does not exist", d.name, p.display()));
                        }
                    }
                    if !(*fps > 0.0) {
                        out.push(format!("{}: fps must be positive", d.name));
                    }
                }
            }
        }
        let mut labels = BTreeSet::new();
        for s in &self.segmenters {
            if !labels.insert(s.label()) {
                out.push(format!("segmenter {} declared twice", s.label()));
            }
            match s {
                SegmenterSpec::Mock { drift } => {
                    if let Err(e) = drift.validate() {
                        out.push(format!("{}: {e}", s.label()));
                    }
                }
                SegmenterSpec::Bridge(c) => {
                    if check_files {
                        if let Err(e) = c.validate() {
                            out.push(format!("{}: {e}", s.label()));
                        }
                    }
                }
                SegmenterSpec::Finetuned { checkpoint, .. } => {
                    if check_files && !checkpoint.is_file() {
                        out.push(format!("{}: checkpoint {} does not exist", s.label(), checkpoint.display()));
                    }
                }
            }
        }
        if let Some(sw) = &self.sweep {
            if self.dataset(&sw.dataset).is_none() {
                out.push(format!("sweep: unknown dataset {:?}", sw.dataset));
            }
            if sw.grid.is_empty() {
                out.push("sweep: grid must not be empty".into());
            }
            for (i, c) in sw.grid.iter().enumerate() {
                if let Err(e) = c.validate() {
                    out.push(format!("sweep: grid[{i}]: {e}"));
                }
            }
            if let Some(sel) = sw.select {
                if sel >= sw.grid.len() {
                    out.push(format!("sweep: select {sel} is outside the grid"));
                }
            }
        }
        if let Some(ft) = &self.finetune {
            if self.dataset(&ft.dataset).is_none() {
                out.push(format!("finetune: unknown dataset {:?}", ft.dataset));
            }
            if let Err(e) = ft.training.validate() {
                out.push(format!("finetune: {e}"));
            }
        }
        out
    }

    pub fn validate(&self, check_files: bool) -> Result<(), ExperimentError> {
        let problems = self.problems(check_files);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        schema_version = 1
        [[datasets]]
        name = "synthetic"
        adapter = { kind = "synthetic" }
        [[segmenters]]
        kind = "mock"
        drift = { translation = [1.0, 0.0] }
    "#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate(true).unwrap();
        assert_eq!(c.strategies.len(), 5);
        assert_eq!(c.policies.len(), 3);
        assert_eq!(c.segmenters[0].label(), "mock(dx=1,dy=0,erosion=0,dropout=none)");
        assert_eq!(c.metrics.aggregation, AggregationOrder::PerClassOverVideo);
    }

    #[test]
    fn problems_are_listed_exhaustively() {
        let text = r#"
            schema_version = 2
            strategies = []
            [[datasets]]
            name = "a"
            adapter = { kind = "coco", annotations = "/nope.json", image_root = "/nope" }
            [[datasets]]
            name = "a"
            adapter = { kind = "synthetic", frames = 0 }
            [[segmenters]]
            kind = "finetuned"
            checkpoint = "/nope/checkpoint.json"
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let problems = c.problems(true);
        assert_eq!(problems.len(), 7, "{problems:#?}");
        assert_eq!(c.problems(false).len(), 4);
    }

    #[test]
    fn subsets_are_checked() {
        let text = format!(
            "{MINIMAL}\n[datasets.subsets]\naveraging = \"per_subset\"\ngroups = {{ liver = [\"v1\", \"v2\"], colon = [\"v2\"], fat = [] }}\n"
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.datasets[0].subsets.as_ref().unwrap().averaging, SubsetAveraging::PerSubset);
        let problems = c.problems(false);
        assert!(problems.iter().any(|p| p.contains("\"fat\" lists no videos")), "{problems:?}");
        assert!(problems.iter().any(|p| p.contains("\"v2\" is in more than one subset")), "{problems:?}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 1\nsed = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let text = r#"
            schema_version = 1
            output = "out"
            [[datasets]]
            name = "c"
            adapter = { kind = "coco", annotations = "ann.json", image_root = "imgs" }
            [[segmenters]]
            kind = "mock"
        "#;
        let mut c = ExperimentConfig::from_toml(text).unwrap();
        c.resolve_paths(Path::new("/data/exp"));
        assert_eq!(c.output, Path::new("/data/exp/out"));
        match &c.datasets[0].adapter {
            AdapterSpec::Coco { annotations, .. } => assert_eq!(annotations, Path::new("/data/exp/ann.json")),
            other => panic!("{other:?}"),
        }
    }
}

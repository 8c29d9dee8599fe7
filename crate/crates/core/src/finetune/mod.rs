//! Fine-tuning ablations: which module groups train, which frames supervise,
//! and which prompt type seeds each supervised frame.
//!
//! Gradient computation belongs to a [`TrainableRuntime`]. This module builds
//! the frame schedule, applies and audits the freeze manifest, runs the epoch
//! loop, and writes the training log and checkpoints.
//!
//! Regimes:
//!
//! * `image_dense`: every annotated frame is an independent supervised sample.
//! * `image_sparse(s)`: annotated frames at offsets `0, s, 2s, ...` from the
//!   video's first annotated frame.
//! * `video_sparse(s)`: every frame in temporal order, supervised only on the
//!   same strided subset.

mod toy;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use toy::{ToyRuntime, ToySession};

use crate::dataset::{AnnotatedVideo, ObjectId, SplitSpec};
use crate::mask::BinaryMask;
use crate::prompt::{build_prompt_set, Prompt, PromptError, PromptKindTag, PromptStrategy};

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error("unknown module group {0:?}")]
    UnknownModuleGroup(String),
    #[error("runtime does not expose module group {0}")]
    MissingModuleGroup(ModuleGroup),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("no video produced a non-empty schedule")]
    EmptyPlan,
    #[error("plan touches test frame {frame_index} of {video_id}")]
    TestLeak { video_id: String, frame_index: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}; last good checkpoint: {checkpoint}")]
    Diverged {
        epoch: usize,
        step: usize,
        checkpoint: PathBuf,
    },
    #[error("frozen group {0} changed during training")]
    FreezeViolation(ModuleGroup),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleGroup {
    MaskDecoder,
    PromptEncoder,
    ImageEncoder,
    MemoryEncoder,
    MemoryAttention,
}

impl ModuleGroup {
    pub const ALL: [ModuleGroup; 5] = [
        ModuleGroup::MaskDecoder,
        ModuleGroup::PromptEncoder,
        ModuleGroup::ImageEncoder,
        ModuleGroup::MemoryEncoder,
        ModuleGroup::MemoryAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModuleGroup::MaskDecoder => "mask_decoder",
            ModuleGroup::PromptEncoder => "prompt_encoder",
            ModuleGroup::ImageEncoder => "image_encoder",
            ModuleGroup::MemoryEncoder => "memory_encoder",
            ModuleGroup::MemoryAttention => "memory_attention",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            ModuleGroup::MaskDecoder => "MD",
            ModuleGroup::PromptEncoder => "PE",
            ModuleGroup::ImageEncoder => "IE",
            ModuleGroup::MemoryEncoder => "ME",
            ModuleGroup::MemoryAttention => "MA",
        }
    }
}

impl fmt::Display for ModuleGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleGroup {
    type Err = FinetuneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ModuleGroup::ALL
            .into_iter()
            .find(|g| g.name() == s || g.abbreviation().eq_ignore_ascii_case(s))
            .ok_or_else(|| FinetuneError::UnknownModuleGroup(s.to_string()))
    }
}

/// Parse `MD+PE+IE` or `mask_decoder,prompt_encoder`.
pub fn parse_trainable(s: &str) -> Result<BTreeSet<ModuleGroup>, FinetuneError> {
    s.split(['+', ','])
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Short label such as `MD+PE`, in canonical group order.
pub fn trainable_label(groups: &BTreeSet<ModuleGroup>) -> String {
    groups.iter().map(|g| g.abbreviation()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    ImageDense,
    ImageSparse { stride: usize },
    VideoSparse { stride: usize },
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::ImageDense => f.write_str("image_dense"),
            Regime::ImageSparse { stride } => write!(f, "image_sparse({stride})"),
            Regime::VideoSparse { stride } => write!(f, "video_sparse({stride})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    /// The dataset's own train/test partition.
    Official,
    Seeded(SplitSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub cross_entropy_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            cross_entropy_weight: 1.0,
            dice_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub trainable: BTreeSet<ModuleGroup>,
    pub regime: Regime,
    pub prompt_type: PromptKindTag,
    #[serde(default = "default_split")]
    pub split: SplitChoice,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
}

fn default_split() -> SplitChoice {
    SplitChoice::Seeded(SplitSpec::default())
}

fn default_epochs() -> usize {
    10
}

fn default_lr() -> f64 {
    1e-4
}

impl FinetuneConfig {
    pub fn new(trainable: BTreeSet<ModuleGroup>, regime: Regime, prompt_type: PromptKindTag) -> Self {
        Self {
            trainable,
            regime,
            prompt_type,
            split: default_split(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            seed: 0,
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        let bad = |m: &str| Err(FinetuneError::Config(m.to_string()));
        if self.trainable.is_empty() {
            return bad("at least one module group must be trainable");
        }
        match self.regime {
            Regime::ImageSparse { stride } if stride < 2 => return bad("image_sparse stride must be at least 2"),
            Regime::VideoSparse { stride } if stride < 1 => return bad("video_sparse stride must be positive"),
            _ => {}
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        let l = self.loss;
        if !(l.cross_entropy_weight >= 0.0 && l.dice_weight >= 0.0 && l.cross_entropy_weight + l.dice_weight > 0.0) {
            return bad("loss weights must be non-negative and not both zero");
        }
        Ok(())
    }

    /// Prompt strategy used to seed supervised frames.
    pub fn prompt_strategy(&self) -> PromptStrategy {
        match self.prompt_type {
            PromptKindTag::Point => PromptStrategy::one_point_random(),
            PromptKindTag::Box => PromptStrategy::bbox(),
            PromptKindTag::Mask => PromptStrategy::mask(),
        }
        .with_seed(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanEntry {
    pub video_id: String,
    pub frame_index: usize,
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeManifest {
    pub trainable: BTreeMap<ModuleGroup, bool>,
}

impl FreezeManifest {
    pub fn from_trainable(groups: &BTreeSet<ModuleGroup>) -> Self {
        Self {
            trainable: ModuleGroup::ALL.iter().map(|g| (*g, groups.contains(g))).collect(),
        }
    }

    pub fn trainable_groups(&self) -> BTreeSet<ModuleGroup> {
        self.trainable.iter().filter(|(_, t)| **t).map(|(g, _)| *g).collect()
    }

    /// Parse `name = true|false` lines, as written by hand in audits.
    pub fn parse(text: &str) -> Result<Self, FinetuneError> {
        let mut trainable = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FinetuneError::Config(format!("bad manifest line {line:?}")))?;
            let g: ModuleGroup = k.parse()?;
            let v: bool = v
                .trim()
                .parse()
                .map_err(|_| FinetuneError::Config(format!("bad flag in {line:?}")))?;
            trainable.insert(g, v);
        }
        Ok(Self { trainable })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub regime: Regime,
    pub entries: Vec<PlanEntry>,
    pub freeze: FreezeManifest,
    pub skipped_videos: Vec<String>,
}

impl TrainingPlan {
    pub fn supervised(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(|e| e.supervised)
    }
}

fn sparse_frames(video: &AnnotatedVideo, stride: usize) -> Vec<usize> {
    let annotated = video.annotated_frames();
    let Some(&anchor) = annotated.first() else {
        return Vec::new();
    };
    annotated.into_iter().filter(|f| (f - anchor) % stride == 0).collect()
}

pub fn build_plan(train: &[AnnotatedVideo], config: &FinetuneConfig) -> Result<TrainingPlan, FinetuneError> {
    config.validate()?;
    if train.is_empty() {
        return Err(FinetuneError::EmptyTrainSplit);
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for video in train {
        let id = video.video_id().to_string();
        let entry = |f: usize, supervised: bool| PlanEntry {
            video_id: id.clone(),
            frame_index: f,
            supervised,
        };
        let supervised = match config.regime {
            Regime::ImageDense => video.annotated_frames(),
            Regime::ImageSparse { stride } | Regime::VideoSparse { stride } => sparse_frames(video, stride),
        };
        if supervised.is_empty() {
            log::warn!("{id}: empty schedule under {}, skipping", config.regime);
            skipped.push(id);
            continue;
        }
        match config.regime {
            Regime::ImageDense | Regime::ImageSparse { .. } => {
                entries.extend(supervised.into_iter().map(|f| entry(f, true)));
            }
            Regime::VideoSparse { .. } => {
                let set: HashSet<usize> = supervised.into_iter().collect();
                entries.extend((0..video.sequence().len()).map(|f| entry(f, set.contains(&f))));
            }
        }
    }
    if entries.is_empty() {
        return Err(FinetuneError::EmptyPlan);
    }
    Ok(TrainingPlan {
        regime: config.regime,
        entries,
        freeze: FreezeManifest::from_trainable(&config.trainable),
        skipped_videos: skipped,
    })
}

/// Drop plan entries on frames annotated in the test split (possible with a
/// frame-level split), then verify nothing remains.
pub fn exclude_test_frames(plan: &mut TrainingPlan, test: &[AnnotatedVideo]) {
    let test_frames: HashSet<(&str, usize)> = test
        .iter()
        .flat_map(|v| v.annotated_frames().into_iter().map(move |f| (v.video_id(), f)))
        .collect();
    plan.entries
        .retain(|e| !test_frames.contains(&(e.video_id.as_str(), e.frame_index)));
}

pub fn check_isolation(plan: &TrainingPlan, test: &[AnnotatedVideo]) -> Result<(), FinetuneError> {
    for e in &plan.entries {
        if test.iter().any(|v| v.video_id() == e.video_id && v.is_annotated(e.frame_index)) {
            return Err(FinetuneError::TestLeak {
                video_id: e.video_id.clone(),
                frame_index: e.frame_index,
            });
        }
    }
    Ok(())
}

/// One frame of a training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFrame {
    pub frame_index: usize,
    /// Luma in [0, 1], row-major; empty when pixels are unavailable.
    pub image: Vec<f32>,
    pub prompts: Vec<Prompt>,
    /// Targets for supervised frames only.
    pub targets: Option<BTreeMap<ObjectId, BinaryMask>>,
}

/// A single image (image regimes) or a whole video in order (video regime).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingClip {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<ClipFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Number of (frame, object) loss terms that contributed.
    pub supervised_terms: usize,
}

/// A model whose named module groups can be frozen and trained.
pub trait TrainableRuntime {
    fn variant(&self) -> String;
    fn module_groups(&self) -> Vec<ModuleGroup>;
    fn parameter_count(&self, group: ModuleGroup) -> usize;
    fn parameter_digest(&self, group: ModuleGroup) -> String;
    fn set_trainable(&mut self, group: ModuleGroup, trainable: bool);
    fn is_trainable(&self, group: ModuleGroup) -> bool;
    /// Forward, loss on supervised frames only, backward, one optimizer update.
    fn step(
        &mut self,
        clip: &TrainingClip,
        loss: &LossConfig,
        optimizer: &AdamConfig,
        learning_rate: f64,
    ) -> Result<StepReport, FinetuneError>;
    fn save_checkpoint(&self, path: &Path) -> Result<(), FinetuneError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeLine {
    pub group: ModuleGroup,
    pub trainable: bool,
    pub parameters: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub lines: Vec<FreezeLine>,
}

impl FreezeReport {
    pub fn trainable_parameters(&self) -> usize {
        self.lines.iter().filter(|l| l.trainable).map(|l| l.parameters).sum()
    }
}

pub fn apply_freeze(
    runtime: &mut dyn TrainableRuntime,
    manifest: &FreezeManifest,
) -> Result<FreezeReport, FinetuneError> {
    let available: BTreeSet<ModuleGroup> = runtime.module_groups().into_iter().collect();
    if let Some(g) = manifest.trainable.keys().find(|g| !available.contains(g)) {
        return Err(FinetuneError::MissingModuleGroup(*g));
    }
    let mut lines = Vec::new();
    for g in available {
        let t = manifest.trainable.get(&g).copied().unwrap_or(false);
        runtime.set_trainable(g, t);
        lines.push(FreezeLine {
            group: g,
            trainable: runtime.is_trainable(g),
            parameters: runtime.parameter_count(g),
            digest: runtime.parameter_digest(g),
        });
    }
    Ok(FreezeReport { lines })
}

/// Supplies luma images for clip frames.
pub type ImageProvider<'a> = dyn Fn(&AnnotatedVideo, usize) -> Vec<f32> + 'a;

fn clip_frame(
    video: &AnnotatedVideo,
    f: usize,
    supervised: bool,
    strategy: &PromptStrategy,
    images: &ImageProvider<'_>,
) -> Result<ClipFrame, FinetuneError> {
    let (prompts, targets) = if supervised {
        let prompts = build_prompt_set(video, f, strategy)?;
        let targets = video
            .frame_annotations(f)
            .iter()
            .map(|a| (a.object_id, a.mask.clone()))
            .collect();
        (prompts, Some(targets))
    } else {
        (Vec::new(), None)
    };
    Ok(ClipFrame {
        frame_index: f,
        image: images(video, f),
        prompts,
        targets,
    })
}

/// Turn a plan into training clips, in plan order.
pub fn build_clips(
    plan: &TrainingPlan,
    videos: &[AnnotatedVideo],
    config: &FinetuneConfig,
    images: &ImageProvider<'_>,
) -> Result<Vec<TrainingClip>, FinetuneError> {
    let by_id: BTreeMap<&str, &AnnotatedVideo> = videos.iter().map(|v| (v.video_id(), v)).collect();
    let strategy = config.prompt_strategy();
    let mut clips: Vec<TrainingClip> = Vec::new();
    for e in &plan.entries {
        let video = by_id
            .get(e.video_id.as_str())
            .ok_or_else(|| FinetuneError::Config(format!("plan names unknown video {}", e.video_id)))?;
        let (w, h) = video.sequence().frame_size().unwrap_or((0, 0));
        let mut frame = clip_frame(video, e.frame_index, e.supervised, &strategy, images)?;
        let extend = matches!(plan.regime, Regime::VideoSparse { .. })
            && clips.last().is_some_and(|c| c.video_id == e.video_id);
        if extend {
            // Prompted once, like evaluation; later frames are reached by propagation.
            let prompted = clips.last().is_some_and(|c| c.frames.iter().any(|f| !f.prompts.is_empty()));
            if prompted {
                frame.prompts.clear();
            }
            clips.last_mut().expect("checked").frames.push(frame);
        } else {
            clips.push(TrainingClip {
                video_id: e.video_id.clone(),
                width: w,
                height: h,
                frames: vec![frame],
            });
        }
    }
    Ok(clips)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Config {
        variant: String,
        trainable: String,
        regime: String,
        prompt_type: PromptKindTag,
        epochs: usize,
        learning_rate: f64,
        optimizer: String,
        loss: String,
        seed: u64,
        trainable_parameters: usize,
    },
    Step {
        epoch: usize,
        step: usize,
        video_id: String,
        loss: f64,
        lr: f64,
        supervised_terms: usize,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
        lr: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub freeze: FreezeReport,
    pub epoch_losses: Vec<f64>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "training_log.jsonl";

fn write_log(out: &mut impl Write, rec: &LogRecord) -> Result<(), FinetuneError> {
    serde_json::to_writer(&mut *out, rec).map_err(|e| FinetuneError::Runtime(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Run the epoch loop. The checkpoint is rewritten after every epoch, so on
/// divergence the file on disk is the last good state. Clip order is shuffled
/// per epoch from the config seed.
pub fn train(
    plan: &TrainingPlan,
    clips: &[TrainingClip],
    config: &FinetuneConfig,
    runtime: &mut dyn TrainableRuntime,
    out_dir: &Path,
) -> Result<TrainingOutcome, FinetuneError> {
    config.validate()?;
    if clips.is_empty() {
        return Err(FinetuneError::EmptyPlan);
    }
    std::fs::create_dir_all(out_dir)?;
    let freeze = apply_freeze(runtime, &plan.freeze)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path)?);
    let opt = config.optimizer;
    write_log(
        &mut log,
        &LogRecord::Config {
            variant: runtime.variant(),
            trainable: trainable_label(&plan.freeze.trainable_groups()),
            regime: plan.regime.to_string(),
            prompt_type: config.prompt_type,
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            optimizer: format!("adam(beta1={},beta2={},eps={})", opt.beta1, opt.beta2, opt.epsilon),
            loss: format!(
                "{}*cross_entropy+{}*soft_dice",
                config.loss.cross_entropy_weight, config.loss.dice_weight
            ),
            seed: config.seed,
            trainable_parameters: freeze.trainable_parameters(),
        },
    )?;
    runtime.save_checkpoint(&checkpoint)?;

    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut sum = 0.0;
        let mut n = 0usize;
        for &i in &order {
            step += 1;
            let r = runtime.step(&clips[i], &config.loss, &opt, config.learning_rate)?;
            if !r.loss.is_finite() {
                log.flush()?;
                return Err(FinetuneError::Diverged {
                    epoch,
                    step,
                    checkpoint,
                });
            }
            write_log(
                &mut log,
                &LogRecord::Step {
                    epoch,
                    step,
                    video_id: clips[i].video_id.clone(),
                    loss: r.loss,
                    lr: config.learning_rate,
                    supervised_terms: r.supervised_terms,
                },
            )?;
            if r.supervised_terms > 0 {
                sum += r.loss;
                n += 1;
            }
        }
        let mean_loss = if n == 0 { 0.0 } else { sum / n as f64 };
        write_log(
            &mut log,
            &LogRecord::Epoch {
                epoch,
                mean_loss,
                lr: config.learning_rate,
            },
        )?;
        epoch_losses.push(mean_loss);
        runtime.save_checkpoint(&checkpoint)?;
    }
    log.flush()?;
    for line in freeze.lines.iter().filter(|l| !l.trainable) {
        if runtime.parameter_digest(line.group) != line.digest {
            return Err(FinetuneError::FreezeViolation(line.group));
        }
    }
    Ok(TrainingOutcome {
        checkpoint,
        log: log_path,
        freeze,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InstanceAnnotation, VideoSequence};

    fn dense_video(id: &str, n: usize) -> AnnotatedVideo {
        let seq = VideoSequence::blank(id, n, 8, 8);
        let anns = (0..n)
            .map(|f| {
                let m = BinaryMask::from_fn(8, 8, |x, y| x < 3 && y < 3);
                (f, vec![InstanceAnnotation::new(f, 0, 1, m).unwrap()])
            })
            .collect();
        AnnotatedVideo::new(seq, anns, BTreeMap::new()).unwrap()
    }

    fn cfg(regime: Regime) -> FinetuneConfig {
        FinetuneConfig::new(parse_trainable("MD").unwrap(), regime, PromptKindTag::Mask)
    }

    #[test]
    fn regimes_on_twenty_frames() {
        let v = [dense_video("v", 20)];
        let sparse = build_plan(&v, &cfg(Regime::ImageSparse { stride: 4 })).unwrap();
        let frames: Vec<usize> = sparse.supervised().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![0, 4, 8, 12, 16]);
        assert_eq!(sparse.entries.len(), 5);

        let dense = build_plan(&v, &cfg(Regime::ImageDense)).unwrap();
        assert_eq!(dense.supervised().count(), 20);

        let video = build_plan(&v, &cfg(Regime::VideoSparse { stride: 4 })).unwrap();
        assert_eq!(video.entries.len(), 20);
        assert_eq!(video.supervised().count(), 5);
        assert!(video.entries.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    }

    #[test]
    fn sparse_anchor_is_first_annotation() {
        let v = dense_video("v", 20).filter_annotations(|f| f >= 3);
        let plan = build_plan(&[v], &cfg(Regime::ImageSparse { stride: 4 })).unwrap();
        let frames: Vec<usize> = plan.supervised().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![3, 7, 11, 15, 19]);
    }

    #[test]
    fn manifests_for_named_variants() {
        for (label, n) in [("MD", 1), ("MD+PE", 2), ("MD+PE+IE", 3)] {
            let m = FreezeManifest::from_trainable(&parse_trainable(label).unwrap());
            assert_eq!(m.trainable.len(), 5);
            assert_eq!(m.trainable_groups().len(), n);
            assert_eq!(trainable_label(&m.trainable_groups()), label);
        }
        assert!(matches!(parse_trainable("MD+XX"), Err(FinetuneError::UnknownModuleGroup(_))));
        assert!(FreezeManifest::parse("decoder_head = true").is_err());
        let m = FreezeManifest::parse("mask_decoder = true\nimage_encoder = false").unwrap();
        assert_eq!(m.trainable_groups(), [ModuleGroup::MaskDecoder].into());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(Regime::ImageSparse { stride: 1 }).validate().is_err());
        let mut c = cfg(Regime::ImageDense);
        c.trainable.clear();
        assert!(c.validate().is_err());
        assert!(build_plan(&[], &cfg(Regime::ImageDense)).is_err());
    }

    #[test]
    fn isolation() {
        let all = dense_video("v", 6);
        let train = all.filter_annotations(|f| f % 2 == 0);
        let test = all.filter_annotations(|f| f % 2 == 1);
        let mut plan = build_plan(std::slice::from_ref(&train), &cfg(Regime::VideoSparse { stride: 2 })).unwrap();
        assert!(check_isolation(&plan, std::slice::from_ref(&test)).is_err());
        exclude_test_frames(&mut plan, std::slice::from_ref(&test));
        check_isolation(&plan, &[test]).unwrap();
        assert_eq!(plan.entries.len(), 3);
    }

    fn blank_images(_: &AnnotatedVideo, _: usize) -> Vec<f32> {
        Vec::new()
    }

    #[test]
    fn smoke_run_writes_log_and_checkpoint() {
        let v = vec![dense_video("v", 2)];
        let mut c = cfg(Regime::ImageDense);
        c.epochs = 1;
        c.learning_rate = 1e-2;
        let plan = build_plan(&v, &c).unwrap();
        let clips = build_clips(&plan, &v, &c, &blank_images).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut rt = ToyRuntime::new();
        let out = train(&plan, &clips, &c, &mut rt, dir.path()).unwrap();
        assert!(out.epoch_losses[0].is_finite());
        let back = ToyRuntime::load_checkpoint(&out.checkpoint).unwrap();
        assert_eq!(back.parameters(ModuleGroup::MaskDecoder), rt.parameters(ModuleGroup::MaskDecoder));
        assert_eq!(out.freeze.trainable_parameters(), 2);
        let log = std::fs::read_to_string(out.log).unwrap();
        let kinds: Vec<String> = log
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["record"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["config", "step", "step", "epoch"]);
    }

    #[test]
    fn video_sparse_supervises_only_scheduled_frames() {
        let v = vec![dense_video("v", 8)];
        let mut c = cfg(Regime::VideoSparse { stride: 4 });
        c.epochs = 2;
        let plan = build_plan(&v, &c).unwrap();
        let clips = build_clips(&plan, &v, &c, &blank_images).unwrap();
        assert_eq!(clips.len(), 1);
        let supervised: Vec<usize> = clips[0]
            .frames
            .iter()
            .filter(|f| f.targets.is_some())
            .map(|f| f.frame_index)
            .collect();
        assert_eq!(supervised, [0, 4]);
        let prompted: Vec<usize> = clips[0]
            .frames
            .iter()
            .filter(|f| !f.prompts.is_empty())
            .map(|f| f.frame_index)
            .collect();
        assert_eq!(prompted, [0]);
        let dir = tempfile::tempdir().unwrap();
        let out = train(&plan, &clips, &c, &mut ToyRuntime::new(), dir.path()).unwrap();
        let log = std::fs::read_to_string(out.log).unwrap();
        for line in log.lines() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            if rec["record"] == "step" {
                assert_eq!(rec["supervised_terms"], 2);
            }
        }
    }

    /// Delegates to the toy runtime but reports a NaN loss from a given step.
    struct Exploding {
        inner: ToyRuntime,
        steps: usize,
        explode_at: usize,
    }

    impl TrainableRuntime for Exploding {
        fn variant(&self) -> String {
            "exploding".into()
        }
        fn module_groups(&self) -> Vec<ModuleGroup> {
            self.inner.module_groups()
        }
        fn parameter_count(&self, g: ModuleGroup) -> usize {
            self.inner.parameter_count(g)
        }
        fn parameter_digest(&self, g: ModuleGroup) -> String {
            self.inner.parameter_digest(g)
        }
        fn set_trainable(&mut self, g: ModuleGroup, t: bool) {
            self.inner.set_trainable(g, t)
        }
        fn is_trainable(&self, g: ModuleGroup) -> bool {
            self.inner.is_trainable(g)
        }
        fn step(
            &mut self,
            clip: &TrainingClip,
            loss: &LossConfig,
            opt: &AdamConfig,
            lr: f64,
        ) -> Result<StepReport, FinetuneError> {
            self.steps += 1;
            let mut r = self.inner.step(clip, loss, opt, lr)?;
            if self.steps >= self.explode_at {
                r.loss = f64::NAN;
            }
            Ok(r)
        }
        fn save_checkpoint(&self, path: &Path) -> Result<(), FinetuneError> {
            self.inner.save_checkpoint(path)
        }
    }

    #[test]
    fn divergence_keeps_last_good_checkpoint() {
        let v = vec![dense_video("v", 2)];
        let mut c = cfg(Regime::ImageDense);
        c.epochs = 3;
        let plan = build_plan(&v, &c).unwrap();
        let clips = build_clips(&plan, &v, &c, &blank_images).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut rt = Exploding {
            inner: ToyRuntime::new(),
            steps: 0,
            explode_at: 3,
        };
        match train(&plan, &clips, &c, &mut rt, dir.path()) {
            Err(FinetuneError::Diverged { epoch, checkpoint, .. }) => {
                assert_eq!(epoch, 2);
                ToyRuntime::load_checkpoint(&checkpoint).unwrap();
            }
            other => panic!("{other:?}"),
        }
    }
}

//! Unified annotated-video model and the loaders that produce it.
//!
//! Both COCO-style instance documents ([`coco`]) and per-pixel label images
//! ([`pixel`]) end up as [`AnnotatedVideo`] values. Frames are always indexed
//! densely from 0 in temporal order; the index a frame had in its source is
//! kept in [`FrameRef::source_index`].

pub mod coco;
pub mod frames;
pub mod manifest;
pub mod pixel;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::mask::{BBox, BinaryMask, MaskError};

pub use frames::{luma, FrameSource, ImageFiles};
pub use coco::{load_coco_annotations, load_coco_file, to_coco_document, CocoDataset};
pub use manifest::{annotation_digest, write_manifest, ManifestRecord};
pub use pixel::{
    load_label_image, load_palette, parse_palette, pixel_mask_video, pixel_masks_to_instances,
    IdentityTracker, LabelImage, Palette, PaletteEntry, PixelKey,
};
pub use split::{split_train_test, SplitSpec, SplitUnit, TrainTestSplit};

pub type ObjectId = u32;
pub type ClassId = u32;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("pixel values not in palette: {0:?}")]
    UnknownPixelValues(Vec<String>),
    #[error("target fps {target} exceeds source fps {source_fps}; upsampling is unsupported")]
    Upsampling { source_fps: f64, target: f64 },
    #[error("fps must be positive, got {0}")]
    InvalidFps(f64),
    #[error("video {0} has no annotated frames and cannot be used for prompted evaluation")]
    NoAnnotatedFrames(String),
    #[error("cannot split {units} unit(s) into non-empty train and test sets")]
    SplitTooSmall { units: usize },
    #[error("invalid split fraction {0}; expected a value in (0, 1)")]
    InvalidFraction(f64),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    /// Position of the frame in the original, unsampled stream.
    pub source_index: usize,
    pub image_locator: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSequence {
    video_id: String,
    frames: Vec<FrameRef>,
    source_fps: f64,
    sampled_fps: f64,
}

impl VideoSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<FrameRef>,
        source_fps: f64,
        sampled_fps: f64,
    ) -> Result<Self, DatasetError> {
        let video_id = video_id.into();
        if !(source_fps > 0.0) || !(sampled_fps > 0.0) {
            return Err(DatasetError::InvalidFps(source_fps.min(sampled_fps)));
        }
        if sampled_fps > source_fps + 1e-9 {
            return Err(DatasetError::InvalidSequence(format!(
                "{video_id}: sampled fps {sampled_fps} > source fps {source_fps}"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.index != i {
                return Err(DatasetError::InvalidSequence(format!(
                    "{video_id}: frame at position {i} has index {}",
                    f.index
                )));
            }
            if f.width == 0 || f.height == 0 {
                return Err(DatasetError::InvalidSequence(format!(
                    "{video_id}: frame {i} has zero size"
                )));
            }
            if f.width != frames[0].width || f.height != frames[0].height {
                return Err(DatasetError::InvalidSequence(format!(
                    "{video_id}: frame {i} is {}x{}, expected {}x{}",
                    f.width, f.height, frames[0].width, frames[0].height
                )));
            }
        }
        Ok(Self {
            video_id,
            frames,
            source_fps,
            sampled_fps,
        })
    }

    /// Frames with no image files behind them; handy for synthetic data and tests.
    pub fn blank(video_id: impl Into<String>, n: usize, width: u32, height: u32) -> Self {
        let video_id = video_id.into();
        let frames = (0..n)
            .map(|i| FrameRef {
                index: i,
                source_index: i,
                image_locator: format!("{video_id}/{i:06}.png"),
                width,
                height,
            })
            .collect();
        Self::new(video_id, frames, 1.0, 1.0).expect("blank sequence is valid")
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source_fps(&self) -> f64 {
        self.source_fps
    }

    pub fn sampled_fps(&self) -> f64 {
        self.sampled_fps
    }

    /// (width, height) shared by all frames; `None` for an empty sequence.
    pub fn frame_size(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| (f.width, f.height))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub frame_index: usize,
    pub object_id: ObjectId,
    pub class_id: ClassId,
    pub mask: BinaryMask,
    pub bbox: BBox,
}

impl InstanceAnnotation {
    /// Returns `None` for an empty mask. The box is always derived from the mask.
    pub fn new(
        frame_index: usize,
        object_id: ObjectId,
        class_id: ClassId,
        mask: BinaryMask,
    ) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self {
            frame_index,
            object_id,
            class_id,
            mask,
            bbox,
        })
    }
}

/// Whether annotations are human ground truth or generated pseudo ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    #[default]
    Annotated,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedVideo {
    sequence: VideoSequence,
    annotations: BTreeMap<usize, Vec<InstanceAnnotation>>,
    class_names: BTreeMap<ClassId, String>,
    ground_truth: GroundTruthKind,
}

impl AnnotatedVideo {
    /// Validates frame membership, mask sizes, bbox tightness and the
    /// object-to-class association. Frames with empty annotation lists are
    /// dropped from the map; instances within a frame are sorted by object id.
    pub fn new(
        sequence: VideoSequence,
        annotations: BTreeMap<usize, Vec<InstanceAnnotation>>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self, DatasetError> {
        let size = sequence.frame_size();
        let mut object_class: BTreeMap<ObjectId, ClassId> = BTreeMap::new();
        let mut cleaned = BTreeMap::new();
        for (frame, mut list) in annotations {
            if frame >= sequence.len() {
                return Err(DatasetError::Integrity(format!(
                    "{}: annotation on frame {frame} but sequence has {} frames",
                    sequence.video_id(),
                    sequence.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for ann in &list {
                if ann.frame_index != frame {
                    return Err(DatasetError::InvalidAnnotation(format!(
                        "annotation for frame {} filed under frame {frame}",
                        ann.frame_index
                    )));
                }
                if Some(ann.mask.dims()) != size {
                    return Err(DatasetError::InvalidAnnotation(format!(
                        "{}: object {} mask is {:?}, frame is {:?}",
                        sequence.video_id(),
                        ann.object_id,
                        ann.mask.dims(),
                        size
                    )));
                }
                if ann.mask.bbox() != Some(ann.bbox) {
                    return Err(DatasetError::InvalidAnnotation(format!(
                        "{}: object {} on frame {frame} has a bbox that does not bound its mask",
                        sequence.video_id(),
                        ann.object_id
                    )));
                }
                if !seen.insert(ann.object_id) {
                    return Err(DatasetError::InvalidAnnotation(format!(
                        "{}: object {} appears twice on frame {frame}",
                        sequence.video_id(),
                        ann.object_id
                    )));
                }
                match object_class.insert(ann.object_id, ann.class_id) {
                    Some(c) if c != ann.class_id => {
                        return Err(DatasetError::Integrity(format!(
                            "{}: object {} changes class {c} -> {}",
                            sequence.video_id(),
                            ann.object_id,
                            ann.class_id
                        )))
                    }
                    _ => {}
                }
            }
            if !list.is_empty() {
                list.sort_by_key(|a| a.object_id);
                cleaned.insert(frame, list);
            }
        }
        Ok(Self {
            sequence,
            annotations: cleaned,
            class_names,
            ground_truth: GroundTruthKind::Annotated,
        })
    }

    pub fn with_ground_truth_kind(mut self, kind: GroundTruthKind) -> Self {
        self.ground_truth = kind;
        self
    }

    pub fn ground_truth_kind(&self) -> GroundTruthKind {
        self.ground_truth
    }

    pub fn sequence(&self) -> &VideoSequence {
        &self.sequence
    }

    pub fn video_id(&self) -> &str {
        self.sequence.video_id()
    }

    pub fn annotations(&self) -> &BTreeMap<usize, Vec<InstanceAnnotation>> {
        &self.annotations
    }

    /// Instances on `frame`, empty when the frame is unannotated.
    pub fn frame_annotations(&self, frame: usize) -> &[InstanceAnnotation] {
        self.annotations.get(&frame).map_or(&[], |v| v.as_slice())
    }

    pub fn annotation(&self, frame: usize, object_id: ObjectId) -> Option<&InstanceAnnotation> {
        self.frame_annotations(frame)
            .iter()
            .find(|a| a.object_id == object_id)
    }

    pub fn annotated_frames(&self) -> Vec<usize> {
        self.annotations.keys().copied().collect()
    }

    pub fn is_annotated(&self, frame: usize) -> bool {
        self.annotations.contains_key(&frame)
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.class_names
    }

    pub fn object_classes(&self) -> BTreeMap<ObjectId, ClassId> {
        self.annotations
            .values()
            .flatten()
            .map(|a| (a.object_id, a.class_id))
            .collect()
    }

    /// Copy with only the annotations on frames accepted by `keep`.
    pub fn filter_annotations(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            sequence: self.sequence.clone(),
            annotations: self
                .annotations
                .iter()
                .filter(|(f, _)| keep(**f))
                .map(|(f, v)| (*f, v.clone()))
                .collect(),
            class_names: self.class_names.clone(),
            ground_truth: self.ground_truth,
        }
    }
}

/// Keep every ⌈source_fps / target_fps⌉-th frame starting at 0 and reindex densely.
pub fn sample_frames(
    sequence: &VideoSequence,
    target_fps: f64,
) -> Result<VideoSequence, DatasetError> {
    let stride = frame_stride(sequence.source_fps(), target_fps)?;
    let frames = sequence
        .frames()
        .iter()
        .step_by(stride)
        .enumerate()
        .map(|(i, f)| FrameRef {
            index: i,
            ..f.clone()
        })
        .collect();
    VideoSequence::new(
        sequence.video_id(),
        frames,
        sequence.source_fps(),
        sequence.source_fps() / stride as f64,
    )
}

/// Sampling stride for a source/target rate pair.
pub fn frame_stride(source_fps: f64, target_fps: f64) -> Result<usize, DatasetError> {
    if !(target_fps > 0.0) || !target_fps.is_finite() {
        return Err(DatasetError::InvalidFps(target_fps));
    }
    if target_fps > source_fps {
        return Err(DatasetError::Upsampling {
            source_fps,
            target: target_fps,
        });
    }
    // Tolerate representation error such as 29.97 / 0.999 landing a hair above an integer.
    let ratio = source_fps / target_fps;
    let rounded = ratio.round();
    let stride = if (ratio - rounded).abs() < 1e-9 {
        rounded
    } else {
        ratio.ceil()
    };
    Ok(stride.max(1.0) as usize)
}

/// Sample an annotated video, carrying over annotations of kept frames.
pub fn sample_annotated_video(
    video: &AnnotatedVideo,
    target_fps: f64,
) -> Result<AnnotatedVideo, DatasetError> {
    let stride = frame_stride(video.sequence().source_fps(), target_fps)?;
    let sequence = sample_frames(video.sequence(), target_fps)?;
    let annotations = video
        .annotations()
        .iter()
        .filter(|(f, _)| *f % stride == 0)
        .map(|(f, list)| {
            let new_index = f / stride;
            let list = list
                .iter()
                .map(|a| InstanceAnnotation {
                    frame_index: new_index,
                    ..a.clone()
                })
                .collect();
            (new_index, list)
        })
        .collect();
    Ok(AnnotatedVideo::new(sequence, annotations, video.class_names().clone())?
        .with_ground_truth_kind(video.ground_truth_kind()))
}

/// The first frame carrying ground truth: the initial prompt frame.
pub fn first_valid_prompt_frame(video: &AnnotatedVideo) -> Result<usize, DatasetError> {
    video
        .annotations()
        .iter()
        .find(|(_, list)| !list.is_empty())
        .map(|(f, _)| *f)
        .ok_or_else(|| DatasetError::NoAnnotatedFrames(video.video_id().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video_with_frames(n: usize, annotated: &[usize]) -> AnnotatedVideo {
        let seq = VideoSequence::blank("v", n, 8, 8);
        let mut ann = BTreeMap::new();
        for &f in annotated {
            let m = BinaryMask::from_pixels(8, 8, &[(1, 1)]);
            ann.insert(f, vec![InstanceAnnotation::new(f, 1, 1, m).unwrap()]);
        }
        AnnotatedVideo::new(seq, ann, BTreeMap::new()).unwrap()
    }

    fn fps_sequence(n: usize, fps: f64) -> VideoSequence {
        let frames = (0..n)
            .map(|i| FrameRef {
                index: i,
                source_index: i,
                image_locator: format!("{i}.jpg"),
                width: 4,
                height: 4,
            })
            .collect();
        VideoSequence::new("clip", frames, fps, fps).unwrap()
    }

    #[test]
    fn sixty_fps_to_one() {
        let s = sample_frames(&fps_sequence(120, 60.0), 1.0).unwrap();
        let src: Vec<_> = s.frames().iter().map(|f| f.source_index).collect();
        assert_eq!(src, vec![0, 60]);
        assert_eq!(s.frames()[1].index, 1);
        assert_eq!(s.sampled_fps(), 1.0);
    }

    #[test]
    fn twenty_five_fps_to_one() {
        let s = sample_frames(&fps_sequence(50, 25.0), 1.0).unwrap();
        let src: Vec<_> = s.frames().iter().map(|f| f.source_index).collect();
        assert_eq!(src, vec![0, 25]);
    }

    #[test]
    fn same_rate_is_identity() {
        let seq = fps_sequence(7, 25.0);
        assert_eq!(sample_frames(&seq, 25.0).unwrap(), seq);
    }

    #[test]
    fn upsampling_rejected() {
        assert!(matches!(
            sample_frames(&fps_sequence(5, 1.0), 2.0),
            Err(DatasetError::Upsampling { .. })
        ));
        assert!(matches!(
            sample_frames(&fps_sequence(5, 1.0), 0.0),
            Err(DatasetError::InvalidFps(_))
        ));
    }

    #[test]
    fn sampled_length_matches_ceiling() {
        for n in 0..40usize {
            for stride in 1..10usize {
                let seq = fps_sequence(n, stride as f64);
                if n == 0 {
                    continue;
                }
                let s = sample_frames(&seq, 1.0).unwrap();
                assert_eq!(s.len(), n.div_ceil(stride), "n={n} stride={stride}");
            }
        }
    }

    #[test]
    fn first_prompt_frame() {
        assert_eq!(first_valid_prompt_frame(&video_with_frames(10, &[0, 4, 8])).unwrap(), 0);
        assert_eq!(first_valid_prompt_frame(&video_with_frames(10, &[3, 5])).unwrap(), 3);
        assert_eq!(first_valid_prompt_frame(&video_with_frames(100, &[99])).unwrap(), 99);
        assert!(matches!(
            first_valid_prompt_frame(&video_with_frames(10, &[])),
            Err(DatasetError::NoAnnotatedFrames(_))
        ));
    }

    #[test]
    fn class_change_is_integrity_error() {
        let seq = VideoSequence::blank("v", 2, 4, 4);
        let m = BinaryMask::from_pixels(4, 4, &[(0, 0)]);
        let mut ann = BTreeMap::new();
        ann.insert(0, vec![InstanceAnnotation::new(0, 1, 1, m.clone()).unwrap()]);
        ann.insert(1, vec![InstanceAnnotation::new(1, 1, 2, m).unwrap()]);
        assert!(matches!(
            AnnotatedVideo::new(seq, ann, BTreeMap::new()),
            Err(DatasetError::Integrity(_))
        ));
    }

    #[test]
    fn annotation_outside_sequence_rejected() {
        let seq = VideoSequence::blank("v", 2, 4, 4);
        let m = BinaryMask::from_pixels(4, 4, &[(0, 0)]);
        let mut ann = BTreeMap::new();
        ann.insert(5, vec![InstanceAnnotation::new(5, 1, 1, m).unwrap()]);
        assert!(AnnotatedVideo::new(seq, ann, BTreeMap::new()).is_err());
    }

    #[test]
    fn sampling_annotated_video_keeps_aligned_annotations() {
        let v = video_with_frames(12, &[0, 3, 4, 8]);
        let seq = v.sequence().clone();
        let seq = VideoSequence::new("v", seq.frames().to_vec(), 4.0, 4.0).unwrap();
        let v = AnnotatedVideo::new(seq, v.annotations().clone(), BTreeMap::new()).unwrap();
        let s = sample_annotated_video(&v, 1.0).unwrap();
        assert_eq!(s.annotated_frames(), vec![0, 1, 2]);
    }
}

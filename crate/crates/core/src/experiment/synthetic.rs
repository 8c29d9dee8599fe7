//! A generated surgical-looking video: two instruments moving over a static
//! two-part tissue region. Used for desk-scale runs where no real dataset is
//! available, and rendered to RGB so pixel-based segmenters have input.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    AnnotatedVideo, ClassId, DatasetError, FrameRef, FrameSource, InstanceAnnotation, ObjectId, VideoSequence,
};
use crate::mask::BinaryMask;

pub const SYNTHETIC_WIDTH: u32 = 64;
pub const SYNTHETIC_HEIGHT: u32 = 48;
pub const INSTRUMENT_CLASS: ClassId = 1;
pub const TISSUE_CLASS: ClassId = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub video_id: String,
    pub frames: usize,
    /// Only every `annotation_stride`-th frame carries annotations.
    pub annotation_stride: usize,
    /// Number of videos; each starts at a different motion phase.
    pub videos: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            video_id: "synthetic".into(),
            frames: 120,
            annotation_stride: 1,
            videos: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 {
            return Err("synthetic video needs at least one frame".into());
        }
        if self.annotation_stride == 0 {
            return Err("annotation_stride must be positive".into());
        }
        if self.videos == 0 {
            return Err("synthetic dataset needs at least one video".into());
        }
        if self.video_id.is_empty() {
            return Err("synthetic video_id is empty".into());
        }
        Ok(())
    }
}

/// Ground-truth objects at frame `f`: `(object id, class, mask)`.
pub fn synthetic_objects(f: usize) -> Vec<(ObjectId, ClassId, BinaryMask)> {
    let (w, h) = (SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT);
    let t = f as f64;
    let x0 = (10.0 + 6.0 * (TAU * t / 60.0).sin()).round() as u32;
    let probe = BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + 12 && (4..12).contains(&y));
    let cy = (16.0 + 4.0 * (TAU * t / 40.0).sin()).round() as i64;
    let grasper = BinaryMask::from_fn(w, h, |x, y| {
        let (dx, dy) = (i64::from(x) - 46, i64::from(y) - cy);
        dx * dx + dy * dy <= 36
    });
    let tissue = BinaryMask::from_fn(w, h, |x, y| {
        ((8..22).contains(&x) && (30..42).contains(&y)) || ((36..56).contains(&x) && (32..44).contains(&y))
    });
    vec![
        (0, INSTRUMENT_CLASS, probe),
        (1, INSTRUMENT_CLASS, grasper),
        (2, TISSUE_CLASS, tissue),
    ]
}

/// Frames by which consecutive videos are offset in the motion cycle.
const PHASE_STEP: usize = 23;

/// The first video of the spec.
pub fn synthetic_video(spec: &SyntheticSpec) -> Result<AnnotatedVideo, DatasetError> {
    spec.validate().map_err(DatasetError::InvalidSequence)?;
    build(spec, &spec.video_id, 0)
}

/// All videos of the spec. With more than one, ids get a `-k` suffix.
pub fn synthetic_videos(spec: &SyntheticSpec) -> Result<Vec<AnnotatedVideo>, DatasetError> {
    spec.validate().map_err(DatasetError::InvalidSequence)?;
    if spec.videos == 1 {
        return Ok(vec![build(spec, &spec.video_id, 0)?]);
    }
    (0..spec.videos)
        .map(|k| build(spec, &format!("{}-{k}", spec.video_id), k * PHASE_STEP))
        .collect()
}

fn build(spec: &SyntheticSpec, video_id: &str, phase: usize) -> Result<AnnotatedVideo, DatasetError> {
    let frames = (0..spec.frames)
        .map(|i| FrameRef {
            index: i,
            source_index: i + phase,
            image_locator: format!("synthetic://{video_id}/{:06}", i + phase),
            width: SYNTHETIC_WIDTH,
            height: SYNTHETIC_HEIGHT,
        })
        .collect();
    let sequence = VideoSequence::new(video_id, frames, 30.0, 30.0)?;
    let annotations = (0..spec.frames)
        .step_by(spec.annotation_stride)
        .map(|f| {
            let list = synthetic_objects(f + phase)
                .into_iter()
                .filter_map(|(id, class, mask)| InstanceAnnotation::new(f, id, class, mask))
                .collect();
            (f, list)
        })
        .collect();
    let names = BTreeMap::from([
        (INSTRUMENT_CLASS, "instrument".to_string()),
        (TISSUE_CLASS, "tissue".to_string()),
    ]);
    AnnotatedVideo::new(sequence, annotations, names)
}

/// Renders synthetic frames from the same geometry as the annotations.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticFrames;

impl FrameSource for SyntheticFrames {
    fn frame_rgb(&self, video: &VideoSequence, index: usize) -> Result<RgbImage, DatasetError> {
        if index >= video.len() {
            return Err(DatasetError::InvalidSequence(format!(
                "{}: no frame {index}",
                video.video_id()
            )));
        }
        let mut img = RgbImage::from_fn(SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT, |x, y| {
            let texture = ((x * 7 + y * 13) % 16) as u8;
            Rgb([40 + texture, 18 + texture / 2, 20])
        });
        // The source index carries the motion phase of the video.
        for (_, class, mask) in synthetic_objects(video.frames()[index].source_index) {
            let color = if class == INSTRUMENT_CLASS {
                Rgb([205, 205, 215])
            } else {
                Rgb([170, 70, 60])
            };
            for (x, y) in mask.foreground() {
                img.put_pixel(x, y, color);
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_of_default_video() {
        let v = synthetic_video(&SyntheticSpec::default()).unwrap();
        assert_eq!(v.sequence().len(), 120);
        assert_eq!(v.annotated_frames().len(), 120);
        assert_eq!(v.object_classes().len(), 3);
        assert_eq!(v.class_names().len(), 2);
        for f in [0, 37, 119] {
            let anns = v.frame_annotations(f);
            for (i, a) in anns.iter().enumerate() {
                for b in &anns[i + 1..] {
                    assert_eq!(a.mask.intersection_area(&b.mask).unwrap(), 0, "frame {f}");
                }
            }
        }
        assert_eq!(v.frame_annotations(0)[2].mask.regions().len(), 2);
    }

    #[test]
    fn sparse_annotations_and_rendering() {
        let spec = SyntheticSpec {
            annotation_stride: 5,
            ..SyntheticSpec::default()
        };
        let v = synthetic_video(&spec).unwrap();
        assert_eq!(v.annotated_frames().len(), 24);
        let img = SyntheticFrames.frame_rgb(v.sequence(), 7).unwrap();
        let probe = &synthetic_objects(7)[0].2;
        let (x, y) = probe.foreground().next().unwrap();
        assert_eq!(img.get_pixel(x, y), &Rgb([205, 205, 215]));
        assert!(SyntheticFrames.frame_rgb(v.sequence(), 120).is_err());
    }

    #[test]
    fn several_videos_differ_in_phase() {
        let spec = SyntheticSpec {
            frames: 10,
            videos: 3,
            ..SyntheticSpec::default()
        };
        let vs = synthetic_videos(&spec).unwrap();
        let ids: Vec<_> = vs.iter().map(|v| v.video_id().to_string()).collect();
        assert_eq!(ids, ["synthetic-0", "synthetic-1", "synthetic-2"]);
        let a = &vs[0].frame_annotations(0)[0].mask;
        let b = &vs[1].frame_annotations(0)[0].mask;
        assert_ne!(a, b);
        assert_eq!(b, &synthetic_objects(PHASE_STEP)[0].2);
        let img = SyntheticFrames.frame_rgb(vs[1].sequence(), 0).unwrap();
        let (x, y) = b.foreground().next().unwrap();
        assert_eq!(img.get_pixel(x, y), &Rgb([205, 205, 215]));
    }
}

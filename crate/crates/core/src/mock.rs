//! A deterministic stand-in segmenter that degrades ground truth with
//! parameterized drift.
//!
//! The mask for an object at frame `t` is derived from its ground truth at `t`,
//! restricted by what the last prompt could "see", then eroded and shifted in
//! proportion to the frames elapsed since that prompt. Because degradation is
//! measured from the last prompt, a memory reset followed by reseeding wipes
//! the accumulated error, which is what makes re-initialization effects
//! observable without a model.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedVideo, ObjectId};
use crate::mask::BinaryMask;
use crate::prompt::{PointLabel, Prompt};
use crate::session::{validate_prompts, Capabilities, SegmenterSession, SessionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    /// Pixels per frame along x and y.
    #[serde(default)]
    pub translation: (f64, f64),
    /// Erosion radius accumulated per frame.
    #[serde(default)]
    pub erosion_rate: f64,
    /// Frames after the last prompt beyond which the object is lost.
    #[serde(default)]
    pub dropout_after: Option<usize>,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self::none()
    }
}

impl DriftModel {
    pub fn none() -> Self {
        Self {
            translation: (0.0, 0.0),
            erosion_rate: 0.0,
            dropout_after: None,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translation: (dx, dy),
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (dx, dy) = self.translation;
        if !dx.is_finite() || !dy.is_finite() {
            return Err("translation must be finite".into());
        }
        if !self.erosion_rate.is_finite() || self.erosion_rate < 0.0 {
            return Err("erosion_rate must be finite and non-negative".into());
        }
        if self.dropout_after == Some(0) {
            return Err("dropout_after must be positive".into());
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.translation == (0.0, 0.0) && self.erosion_rate == 0.0 && self.dropout_after.is_none()
    }

    /// Degrade `mask` as it would look `elapsed` frames after its prompt:
    /// erosion by `floor(elapsed * rate)`, then a shift by
    /// `round(elapsed * translation)`, clipped to the frame.
    pub fn apply(&self, mask: &BinaryMask, elapsed: usize) -> BinaryMask {
        if self.dropout_after.is_some_and(|h| elapsed > h) {
            return BinaryMask::empty(mask.width(), mask.height());
        }
        let e = elapsed as f64;
        let radius = (e * self.erosion_rate).floor() as u32;
        let dx = (e * self.translation.0).round() as i64;
        let dy = (e * self.translation.1).round() as i64;
        let eroded = mask.erode(radius);
        if dx == 0 && dy == 0 {
            eroded
        } else {
            eroded.translate(dx, dy)
        }
    }
}

/// Ground truth of `object_id` at `target_frame` degraded by the frames elapsed
/// since `seeded_frame`. Empty when the object has no ground truth there.
///
/// # Panics
///
/// Panics if `seeded_frame > target_frame`.
pub fn mock_propagate(
    video: &AnnotatedVideo,
    seeded_frame: usize,
    object_id: ObjectId,
    target_frame: usize,
    drift: &DriftModel,
) -> BinaryMask {
    assert!(seeded_frame <= target_frame, "cannot propagate backwards");
    match video.annotation(target_frame, object_id) {
        Some(a) => drift.apply(&a.mask, target_frame - seeded_frame),
        None => {
            let (w, h) = video.sequence().frame_size().unwrap_or((0, 0));
            BinaryMask::empty(w, h)
        }
    }
}

/// What part of the ground truth a prompt captured at its seed frame.
#[derive(Debug, Clone, PartialEq)]
enum Selector {
    Full,
    /// Indices of connected regions, in scan order, that the prompt touched.
    Regions(BTreeSet<usize>),
    /// Box corners relative to the ground-truth bbox origin at the seed frame.
    BoxClip { x0: i64, y0: i64, x1: i64, y1: i64 },
    Nothing,
}

impl Selector {
    fn from_prompts(gt: Option<&BinaryMask>, prompts: &[&Prompt]) -> Self {
        let Some(gt) = gt else {
            return Selector::Nothing;
        };
        let regions = gt.region_masks();
        let by_regions = |keep: &dyn Fn(&BinaryMask) -> bool| {
            let kept: BTreeSet<usize> = (0..regions.len()).filter(|&i| keep(&regions[i])).collect();
            if kept.is_empty() {
                Selector::Nothing
            } else if kept.len() == regions.len() {
                Selector::Full
            } else {
                Selector::Regions(kept)
            }
        };
        // Richest prompt wins when several kinds target one object.
        if let Some(Prompt::Mask(m)) = prompts.iter().find(|p| matches!(p, Prompt::Mask(_))) {
            return by_regions(&|r| r.intersection_area(&m.mask).unwrap_or(0) > 0);
        }
        if let Some(Prompt::Box(b)) = prompts.iter().find(|p| matches!(p, Prompt::Box(_))) {
            let Some(bb) = gt.bbox() else {
                return Selector::Nothing;
            };
            if b.contains(bb.x_min, bb.y_min) && b.contains(bb.x_max, bb.y_max) {
                return Selector::Full;
            }
            let (ox, oy) = (bb.x_min as i64, bb.y_min as i64);
            return Selector::BoxClip {
                x0: b.top_left.0 as i64 - ox,
                y0: b.top_left.1 as i64 - oy,
                x1: b.bottom_right.0 as i64 - ox,
                y1: b.bottom_right.1 as i64 - oy,
            };
        }
        let positives: Vec<(u32, u32)> = prompts
            .iter()
            .filter_map(|p| match p {
                Prompt::Point(pt) if pt.label == PointLabel::Positive => Some((pt.x, pt.y)),
                _ => None,
            })
            .collect();
        by_regions(&|r| positives.iter().any(|&(x, y)| r.get(x, y)))
    }

    fn restrict(&self, gt: &BinaryMask) -> BinaryMask {
        match self {
            Selector::Full => gt.clone(),
            Selector::Nothing => BinaryMask::empty(gt.width(), gt.height()),
            Selector::Regions(keep) => {
                let mut out = BinaryMask::empty(gt.width(), gt.height());
                for (i, region) in gt.regions().into_iter().enumerate() {
                    if keep.contains(&i) {
                        for (x, y) in region {
                            out.set(x, y, true);
                        }
                    }
                }
                out
            }
            Selector::BoxClip { x0, y0, x1, y1 } => {
                let Some(bb) = gt.bbox() else {
                    return gt.clone();
                };
                let (ox, oy) = (bb.x_min as i64, bb.y_min as i64);
                BinaryMask::from_fn(gt.width(), gt.height(), |x, y| {
                    let (x, y) = (x as i64 - ox, y as i64 - oy);
                    x >= *x0 && x <= *x1 && y >= *y0 && y <= *y1
                })
                .intersection(gt)
                .expect("same dimensions")
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Tracked {
    seeded_frame: usize,
    selector: Selector,
}

/// A [`SegmenterSession`] over a video whose ground truth it can see.
#[derive(Debug, Clone)]
pub struct MockSession {
    video: Arc<AnnotatedVideo>,
    drift: DriftModel,
    objects: BTreeMap<ObjectId, Tracked>,
}

impl MockSession {
    pub fn new(video: Arc<AnnotatedVideo>, drift: DriftModel) -> Result<Self, SessionError> {
        drift.validate().map_err(SessionError::Startup)?;
        if video.sequence().frame_size().is_none() {
            return Err(SessionError::Startup("video has no frames".into()));
        }
        Ok(Self {
            video,
            drift,
            objects: BTreeMap::new(),
        })
    }

    pub fn drift(&self) -> &DriftModel {
        &self.drift
    }

    fn frame_size(&self) -> (u32, u32) {
        self.video.sequence().frame_size().unwrap_or((0, 0))
    }
}

impl SegmenterSession for MockSession {
    fn identity(&self) -> String {
        let d = &self.drift;
        let dropout = d.dropout_after.map_or("none".to_string(), |h| h.to_string());
        format!(
            "mock(dx={},dy={},erosion={},dropout={dropout})",
            d.translation.0, d.translation.1, d.erosion_rate
        )
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn frame_count(&self) -> usize {
        self.video.sequence().len()
    }

    fn add_prompts(&mut self, frame_index: usize, prompts: &[Prompt]) -> Result<(), SessionError> {
        validate_prompts(
            &self.capabilities(),
            frame_index,
            self.frame_count(),
            self.frame_size(),
            prompts,
        )?;
        let mut by_object: BTreeMap<ObjectId, Vec<&Prompt>> = BTreeMap::new();
        for p in prompts {
            by_object.entry(p.object_id()).or_default().push(p);
        }
        for (id, ps) in by_object {
            let gt = self.video.annotation(frame_index, id).map(|a| &a.mask);
            self.objects.insert(
                id,
                Tracked {
                    seeded_frame: frame_index,
                    selector: Selector::from_prompts(gt, &ps),
                },
            );
        }
        Ok(())
    }

    fn propagate(
        &mut self,
        frame_index: usize,
    ) -> Result<BTreeMap<ObjectId, BinaryMask>, SessionError> {
        let frames = self.frame_count();
        if frame_index >= frames {
            return Err(SessionError::FrameOutOfRange {
                frame_index,
                frames,
            });
        }
        let (w, h) = self.frame_size();
        let mut out = BTreeMap::new();
        for (&id, t) in &self.objects {
            if t.seeded_frame > frame_index {
                continue;
            }
            let mask = match self.video.annotation(frame_index, id) {
                Some(a) => self
                    .drift
                    .apply(&t.selector.restrict(&a.mask), frame_index - t.seeded_frame),
                None => BinaryMask::empty(w, h),
            };
            out.insert(id, mask);
        }
        Ok(out)
    }

    fn reset_memory(&mut self) -> Result<(), SessionError> {
        self.objects.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InstanceAnnotation, VideoSequence};
    use crate::mask::BBox;
    use crate::prompt::{BoxPrompt, MaskPrompt, PointPrompt};

    fn static_video(frames: usize, masks: &[BinaryMask]) -> AnnotatedVideo {
        let (w, h) = masks[0].dims();
        let seq = VideoSequence::blank("v", frames, w, h);
        let anns = (0..frames)
            .map(|f| {
                let v = masks
                    .iter()
                    .enumerate()
                    .filter_map(|(i, m)| InstanceAnnotation::new(f, i as u32, 1, m.clone()))
                    .collect();
                (f, v)
            })
            .collect();
        AnnotatedVideo::new(seq, anns, BTreeMap::new()).unwrap()
    }

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::rect(
            40,
            30,
            BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            },
        )
    }

    #[test]
    fn zero_drift_is_identity() {
        let v = static_video(5, &[rect(3, 3, 10, 8)]);
        let m = mock_propagate(&v, 0, 0, 4, &DriftModel::none());
        assert_eq!(m, v.annotation(4, 0).unwrap().mask);
    }

    #[test]
    fn translation_shifts_by_elapsed() {
        let v = static_video(12, &[rect(3, 3, 10, 8)]);
        let m = mock_propagate(&v, 0, 0, 10, &DriftModel::translation(1.0, 0.0));
        let gt = &v.annotation(10, 0).unwrap().mask;
        let oracle = BinaryMask::from_fn(40, 30, |x, y| x >= 10 && gt.get(x - 10, y));
        assert_eq!(m, oracle);
    }

    #[test]
    fn dropout_horizon() {
        let v = static_video(30, &[rect(3, 3, 10, 8)]);
        let d = DriftModel {
            dropout_after: Some(20),
            ..DriftModel::none()
        };
        assert_eq!(mock_propagate(&v, 0, 0, 25, &d).area(), 0);
        assert!(mock_propagate(&v, 0, 0, 20, &d).area() > 0);
    }

    #[test]
    fn prompt_fidelity() {
        let two = rect(2, 2, 6, 6).union(&rect(20, 10, 25, 15)).unwrap();
        let v = Arc::new(static_video(3, std::slice::from_ref(&two)));
        let mut s = MockSession::new(v, DriftModel::none()).unwrap();

        s.add_prompts(
            0,
            &[Prompt::Mask(MaskPrompt {
                mask: two.clone(),
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(0).unwrap()[&0], two);

        s.add_prompts(
            0,
            &[Prompt::Box(BoxPrompt {
                top_left: (2, 2),
                bottom_right: (25, 15),
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(0).unwrap()[&0], two);

        s.add_prompts(
            0,
            &[Prompt::Point(PointPrompt {
                x: 22,
                y: 12,
                label: PointLabel::Positive,
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(0).unwrap()[&0], rect(20, 10, 25, 15));

        s.add_prompts(
            0,
            &[Prompt::Point(PointPrompt {
                x: 30,
                y: 25,
                label: PointLabel::Positive,
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(0).unwrap()[&0].area(), 0);
    }

    #[test]
    fn partial_box_clips() {
        let v = Arc::new(static_video(2, &[rect(2, 2, 9, 9)]));
        let mut s = MockSession::new(v, DriftModel::none()).unwrap();
        s.add_prompts(
            0,
            &[Prompt::Box(BoxPrompt {
                top_left: (0, 0),
                bottom_right: (5, 20),
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(1).unwrap()[&0], rect(2, 2, 5, 9));
    }

    #[test]
    fn objects_appear_only_after_seeding() {
        let v = Arc::new(static_video(4, &[rect(2, 2, 9, 9)]));
        let mut s = MockSession::new(v, DriftModel::none()).unwrap();
        let p = Prompt::Mask(MaskPrompt {
            mask: rect(2, 2, 9, 9),
            object_id: 0,
            frame_index: 2,
        });
        s.add_prompts(2, &[p]).unwrap();
        assert!(s.propagate(1).unwrap().is_empty());
        assert_eq!(s.propagate(3).unwrap().len(), 1);
        s.reset_memory().unwrap();
        assert!(s.propagate(3).unwrap().is_empty());
    }

    #[test]
    fn invalid_drift_rejected() {
        let v = Arc::new(static_video(2, &[rect(2, 2, 9, 9)]));
        let bad = DriftModel {
            erosion_rate: -1.0,
            ..DriftModel::none()
        };
        assert!(MockSession::new(v, bad).is_err());
    }
}

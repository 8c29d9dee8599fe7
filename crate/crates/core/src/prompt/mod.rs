//! Prompt synthesis from ground truth: center points, random positive points
//! with negatives and bounded fluctuation, boxes, and masks.
//!
//! All randomness flows from [`PointSamplingConfig::seed`] mixed with the frame
//! index and object id, so a given annotation always yields the same prompts
//! regardless of which other objects are processed or in what order.

mod record;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{first_valid_prompt_frame, AnnotatedVideo, InstanceAnnotation, ObjectId};
use crate::mask::BinaryMask;

pub use record::{parse_prompt_records, write_prompt_records, PromptRecord};

/// Corner labels used by the box encoding.
pub const BOX_TOP_LEFT_LABEL: u8 = 2;
pub const BOX_BOTTOM_RIGHT_LABEL: u8 = 3;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("frame {frame} has no annotations; the first annotated frame is {first_valid:?}")]
    UnannotatedFrame {
        frame: usize,
        first_valid: Option<usize>,
    },
    #[error("object {object_id}: frame {width}x{height} is too small for a non-degenerate box")]
    DegenerateFrame {
        object_id: ObjectId,
        width: u32,
        height: u32,
    },
    #[error("prompt record line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("unknown prompt strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Negative,
    Positive,
}

impl PointLabel {
    pub fn value(self) -> u8 {
        match self {
            PointLabel::Negative => 0,
            PointLabel::Positive => 1,
        }
    }

    pub fn from_value(v: u8) -> Option<Self> {
        match v {
            0 => Some(PointLabel::Negative),
            1 => Some(PointLabel::Positive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub label: PointLabel,
    pub object_id: ObjectId,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub top_left: (u32, u32),
    pub bottom_right: (u32, u32),
    pub object_id: ObjectId,
    pub frame_index: usize,
}

impl BoxPrompt {
    /// The box as two labeled points `(x, y, label)`.
    pub fn as_labeled_points(&self) -> [(u32, u32, u8); 2] {
        [
            (self.top_left.0, self.top_left.1, BOX_TOP_LEFT_LABEL),
            (self.bottom_right.0, self.bottom_right.1, BOX_BOTTOM_RIGHT_LABEL),
        ]
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.top_left.0 && x <= self.bottom_right.0 && y >= self.top_left.1 && y <= self.bottom_right.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPrompt {
    pub mask: BinaryMask,
    pub object_id: ObjectId,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prompt {
    Point(PointPrompt),
    Box(BoxPrompt),
    Mask(MaskPrompt),
}

impl Prompt {
    pub fn object_id(&self) -> ObjectId {
        match self {
            Prompt::Point(p) => p.object_id,
            Prompt::Box(b) => b.object_id,
            Prompt::Mask(m) => m.object_id,
        }
    }

    pub fn frame_index(&self) -> usize {
        match self {
            Prompt::Point(p) => p.frame_index,
            Prompt::Box(b) => b.frame_index,
            Prompt::Mask(m) => m.frame_index,
        }
    }

    pub fn kind(&self) -> PromptKindTag {
        match self {
            Prompt::Point(_) => PromptKindTag::Point,
            Prompt::Box(_) => PromptKindTag::Box,
            Prompt::Mask(_) => PromptKindTag::Mask,
        }
    }
}

/// Coarse prompt type, used for capability checks and fine-tuning configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKindTag {
    Point,
    Box,
    Mask,
}

impl fmt::Display for PromptKindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKindTag::Point => "point",
            PromptKindTag::Box => "box",
            PromptKindTag::Mask => "mask",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointSamplingConfig {
    /// Positive points per connected region.
    pub positives_per_region: usize,
    /// Negative points per connected region.
    pub negatives_per_region: usize,
    /// Maximum per-axis displacement, in pixels.
    pub fluctuation_radius: u32,
    pub seed: u64,
}

impl Default for PointSamplingConfig {
    fn default() -> Self {
        Self {
            positives_per_region: 1,
            negatives_per_region: 1,
            fluctuation_radius: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    BoxCenter,
    MassCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    CenterPoint(CenterMode),
    RandomPoints,
    Box,
    Mask,
}

/// One of the evaluated prompting strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    pub point_config: PointSamplingConfig,
}

impl PromptStrategy {
    pub fn one_point_center() -> Self {
        Self {
            kind: StrategyKind::CenterPoint(CenterMode::MassCenter),
            point_config: PointSamplingConfig::default(),
        }
    }

    pub fn random_points(n: usize) -> Self {
        Self {
            kind: StrategyKind::RandomPoints,
            point_config: PointSamplingConfig {
                positives_per_region: n,
                ..PointSamplingConfig::default()
            },
        }
    }

    pub fn one_point_random() -> Self {
        Self::random_points(1)
    }

    pub fn three_points_random() -> Self {
        Self::random_points(3)
    }

    pub fn bbox() -> Self {
        Self {
            kind: StrategyKind::Box,
            point_config: PointSamplingConfig::default(),
        }
    }

    pub fn mask() -> Self {
        Self {
            kind: StrategyKind::Mask,
            point_config: PointSamplingConfig::default(),
        }
    }

    /// The five strategies of the vanilla prompt study, in table order.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::one_point_center(),
            Self::one_point_random(),
            Self::three_points_random(),
            Self::bbox(),
            Self::mask(),
        ]
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.point_config.seed = seed;
        self
    }

    pub fn prompt_kind(&self) -> PromptKindTag {
        match self.kind {
            StrategyKind::CenterPoint(_) | StrategyKind::RandomPoints => PromptKindTag::Point,
            StrategyKind::Box => PromptKindTag::Box,
            StrategyKind::Mask => PromptKindTag::Mask,
        }
    }

    /// Table-style name, e.g. `1Point-Center`, `3Points-Random`, `Bbox`, `Mask`.
    pub fn name(&self) -> String {
        match self.kind {
            StrategyKind::CenterPoint(CenterMode::MassCenter) => "1Point-Center".into(),
            StrategyKind::CenterPoint(CenterMode::BoxCenter) => "1Point-BoxCenter".into(),
            StrategyKind::RandomPoints => match self.point_config.positives_per_region {
                1 => "1Point-Random".into(),
                n => format!("{n}Points-Random"),
            },
            StrategyKind::Box => "Bbox".into(),
            StrategyKind::Mask => "Mask".into(),
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PromptStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "1point-center" | "center" => return Ok(Self::one_point_center()),
            "1point-boxcenter" => {
                return Ok(Self {
                    kind: StrategyKind::CenterPoint(CenterMode::BoxCenter),
                    ..Self::one_point_center()
                })
            }
            "bbox" | "box" => return Ok(Self::bbox()),
            "mask" => return Ok(Self::mask()),
            _ => {}
        }
        let n = lower
            .strip_suffix("point-random")
            .or_else(|| lower.strip_suffix("points-random"))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))?;
        Ok(Self::random_points(n))
    }
}

impl Serialize for PromptStrategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for PromptStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (seed, frame, object, purpose).
fn stream(seed: u64, frame: usize, object: ObjectId, salt: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ frame as u64) ^ object as u64) ^ salt;
    ChaCha8Rng::seed_from_u64(splitmix(s))
}

const SALT_POSITIVE: u64 = 0x706f73;
const SALT_NEGATIVE: u64 = 0x6e6567;

/// Perturb each coordinate by an independent uniform integer offset in
/// `[-beta, beta]`, then clamp into the frame.
pub fn fluctuate_point<R: Rng + ?Sized>(
    p: PointPrompt,
    beta: u32,
    bounds: (u32, u32),
    rng: &mut R,
) -> PointPrompt {
    if beta == 0 {
        return p;
    }
    let b = beta as i64;
    let dx = rng.gen_range(-b..=b);
    let dy = rng.gen_range(-b..=b);
    PointPrompt {
        x: (p.x as i64 + dx).clamp(0, bounds.0 as i64 - 1) as u32,
        y: (p.y as i64 + dy).clamp(0, bounds.1 as i64 - 1) as u32,
        ..p
    }
}

/// Pre-fluctuation draws: for every 4-connected region, N pixels sampled
/// uniformly (without replacement when the region is large enough).
fn draw_region_points(
    annotation: &InstanceAnnotation,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(u32, u32)>> {
    annotation
        .mask
        .regions()
        .into_iter()
        .map(|region| {
            if n == 0 {
                Vec::new()
            } else if region.len() >= n {
                index::sample(rng, region.len(), n)
                    .into_iter()
                    .map(|i| region[i])
                    .collect()
            } else {
                (0..n).map(|_| region[rng.gen_range(0..region.len())]).collect()
            }
        })
        .collect()
}

/// N positive points per connected region of the annotation, fluctuated by beta.
pub fn sample_positive_points(
    annotation: &InstanceAnnotation,
    config: &PointSamplingConfig,
) -> Vec<PointPrompt> {
    let mut rng = stream(
        config.seed,
        annotation.frame_index,
        annotation.object_id,
        SALT_POSITIVE,
    );
    let bounds = annotation.mask.dims();
    let draws = draw_region_points(annotation, config.positives_per_region, &mut rng);
    draws
        .into_iter()
        .flatten()
        .map(|(x, y)| {
            let p = PointPrompt {
                x,
                y,
                label: PointLabel::Positive,
                object_id: annotation.object_id,
                frame_index: annotation.frame_index,
            };
            fluctuate_point(p, config.fluctuation_radius, bounds, &mut rng)
        })
        .collect()
}

/// Up to M negatives per region of `target`, drawn from the positive samples of
/// the other objects on the same frame.
pub fn sample_negative_points(
    target: &InstanceAnnotation,
    others: &[InstanceAnnotation],
    config: &PointSamplingConfig,
) -> Vec<PointPrompt> {
    let m = config.negatives_per_region;
    if m == 0 {
        return Vec::new();
    }
    let donors: Vec<PointPrompt> = others
        .iter()
        .filter(|o| o.object_id != target.object_id && o.frame_index == target.frame_index)
        .flat_map(|o| sample_positive_points(o, config))
        .collect();
    if donors.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(
        config.seed,
        target.frame_index,
        target.object_id,
        SALT_NEGATIVE,
    );
    let regions = target.mask.regions().len();
    let mut out = Vec::with_capacity(regions * m);
    for _ in 0..regions {
        let k = m.min(donors.len());
        for i in index::sample(&mut rng, donors.len(), k) {
            let d = donors[i];
            out.push(PointPrompt {
                x: d.x,
                y: d.y,
                label: PointLabel::Negative,
                object_id: target.object_id,
                frame_index: target.frame_index,
            });
        }
    }
    out
}

/// Box midpoint (integer division) or rounded centroid, snapped to the nearest
/// foreground pixel when it lands on background.
pub fn center_point(annotation: &InstanceAnnotation, mode: CenterMode) -> PointPrompt {
    let b = annotation.bbox;
    let (cx, cy) = match mode {
        CenterMode::BoxCenter => (((b.x_min + b.x_max) / 2) as i64, ((b.y_min + b.y_max) / 2) as i64),
        CenterMode::MassCenter => {
            let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
            for (x, y) in annotation.mask.foreground() {
                sx += x as u64;
                sy += y as u64;
                n += 1;
            }
            let n = n.max(1) as f64;
            ((sx as f64 / n).round() as i64, (sy as f64 / n).round() as i64)
        }
    };
    let (x, y) = if annotation.mask.get_signed(cx, cy) {
        (cx as u32, cy as u32)
    } else {
        annotation
            .mask
            .nearest_foreground(cx, cy)
            .unwrap_or((cx as u32, cy as u32))
    };
    PointPrompt {
        x,
        y,
        label: PointLabel::Positive,
        object_id: annotation.object_id,
        frame_index: annotation.frame_index,
    }
}

/// Tight box with corner labels (2, 3). A zero-extent side is widened by one
/// pixel (toward the far edge when possible) so corners stay strictly ordered.
pub fn box_from_annotation(annotation: &InstanceAnnotation) -> Result<BoxPrompt, PromptError> {
    let (w, h) = annotation.mask.dims();
    let b = annotation.bbox;
    let widen = |lo: u32, hi: u32, limit: u32| -> Option<(u32, u32)> {
        if lo < hi {
            Some((lo, hi))
        } else if hi + 1 < limit {
            Some((lo, hi + 1))
        } else if lo > 0 {
            Some((lo - 1, hi))
        } else {
            None
        }
    };
    let degenerate = || PromptError::DegenerateFrame {
        object_id: annotation.object_id,
        width: w,
        height: h,
    };
    let (x0, x1) = widen(b.x_min, b.x_max, w).ok_or_else(degenerate)?;
    let (y0, y1) = widen(b.y_min, b.y_max, h).ok_or_else(degenerate)?;
    Ok(BoxPrompt {
        top_left: (x0, y0),
        bottom_right: (x1, y1),
        object_id: annotation.object_id,
        frame_index: annotation.frame_index,
    })
}

/// Prompts for every object annotated on `frame_index`, grouped by object in
/// ascending id order.
pub fn build_prompt_set(
    video: &AnnotatedVideo,
    frame_index: usize,
    strategy: &PromptStrategy,
) -> Result<Vec<Prompt>, PromptError> {
    let anns = video.frame_annotations(frame_index);
    if anns.is_empty() {
        return Err(PromptError::UnannotatedFrame {
            frame: frame_index,
            first_valid: first_valid_prompt_frame(video).ok(),
        });
    }
    let mut out = Vec::new();
    for ann in anns {
        match strategy.kind {
            StrategyKind::CenterPoint(mode) => {
                out.push(Prompt::Point(center_point(ann, mode)));
            }
            StrategyKind::RandomPoints => {
                let cfg = &strategy.point_config;
                out.extend(sample_positive_points(ann, cfg).into_iter().map(Prompt::Point));
                out.extend(
                    sample_negative_points(ann, anns, cfg)
                        .into_iter()
                        .map(Prompt::Point),
                );
            }
            StrategyKind::Box => out.push(Prompt::Box(box_from_annotation(ann)?)),
            StrategyKind::Mask => out.push(Prompt::Mask(MaskPrompt {
                mask: ann.mask.clone(),
                object_id: ann.object_id,
                frame_index: ann.frame_index,
            })),
        }
    }
    Ok(out)
}

/// Fraction of positive points lying outside their own object's mask.
/// `None` when the set has no positive points.
pub fn mask_exit_rate(prompts: &[Prompt], video: &AnnotatedVideo) -> Option<f64> {
    let mut total = 0usize;
    let mut outside = 0usize;
    for p in prompts {
        if let Prompt::Point(pt) = p {
            if pt.label != PointLabel::Positive {
                continue;
            }
            total += 1;
            let inside = video
                .annotation(pt.frame_index, pt.object_id)
                .is_some_and(|a| a.mask.get(pt.x, pt.y));
            if !inside {
                outside += 1;
            }
        }
    }
    (total > 0).then(|| outside as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VideoSequence;
    use crate::mask::BBox;
    use std::collections::BTreeMap;

    fn ann(object_id: ObjectId, mask: BinaryMask) -> InstanceAnnotation {
        InstanceAnnotation::new(0, object_id, 1, mask).unwrap()
    }

    fn cfg(n: usize, m: usize, beta: u32) -> PointSamplingConfig {
        PointSamplingConfig {
            positives_per_region: n,
            negatives_per_region: m,
            fluctuation_radius: beta,
            seed: 11,
        }
    }

    fn square(w: u32, h: u32, x0: u32, y0: u32, side: u32) -> BinaryMask {
        BinaryMask::rect(
            w,
            h,
            BBox {
                x_min: x0,
                y_min: y0,
                x_max: x0 + side - 1,
                y_max: y0 + side - 1,
            },
        )
    }

    #[test]
    fn three_points_single_region() {
        let a = ann(1, square(20, 20, 2, 2, 6));
        let pts = sample_positive_points(&a, &cfg(3, 0, 0));
        assert_eq!(pts.len(), 3);
        assert!(pts.iter().all(|p| a.mask.get(p.x, p.y) && p.label == PointLabel::Positive));
    }

    #[test]
    fn one_point_per_separate_area() {
        let m = square(20, 20, 0, 0, 3).union(&square(20, 20, 10, 10, 3)).unwrap();
        let a = ann(1, m);
        let pts = sample_positive_points(&a, &cfg(1, 0, 0));
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().any(|p| p.x < 3) && pts.iter().any(|p| p.x >= 10));
    }

    #[test]
    fn single_pixel_mask_repeats_pixel() {
        let a = ann(1, BinaryMask::from_pixels(5, 5, &[(3, 2)]));
        let pts = sample_positive_points(&a, &cfg(2, 0, 0));
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| (p.x, p.y) == (3, 2)));
    }

    #[test]
    fn negatives() {
        let a = ann(1, square(20, 20, 0, 0, 4));
        assert!(sample_negative_points(&a, std::slice::from_ref(&a), &cfg(1, 1, 0)).is_empty());
        let b = ann(2, square(20, 20, 10, 10, 4));
        let others = vec![a.clone(), b.clone()];
        let neg = sample_negative_points(&a, &others, &cfg(1, 1, 0));
        assert_eq!(neg.len(), 1);
        assert!(b.mask.get(neg[0].x, neg[0].y));
        assert_eq!(neg[0].label, PointLabel::Negative);
        assert_eq!(neg[0].object_id, 1);
        assert!(sample_negative_points(&a, &others, &cfg(1, 0, 0)).is_empty());
    }

    #[test]
    fn fluctuation_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PointPrompt {
            x: 4,
            y: 4,
            label: PointLabel::Positive,
            object_id: 0,
            frame_index: 0,
        };
        assert_eq!(fluctuate_point(p, 0, (10, 10), &mut rng), p);
        for _ in 0..200 {
            let q = fluctuate_point(PointPrompt { x: 0, y: 0, ..p }, 5, (10, 10), &mut rng);
            assert!(q.x <= 5 && q.y <= 5);
            let q = fluctuate_point(PointPrompt { x: 9, y: 9, ..p }, 3, (10, 10), &mut rng);
            assert!((6..=9).contains(&q.x) && (6..=9).contains(&q.y));
        }
    }

    #[test]
    fn centers() {
        let a = ann(1, BinaryMask::from_pixels(12, 12, &[(0, 0), (10, 10), (5, 5)]));
        let c = center_point(&a, CenterMode::BoxCenter);
        assert_eq!((c.x, c.y), (5, 5));
        let sq = ann(1, square(8, 8, 0, 0, 3));
        let c = center_point(&sq, CenterMode::MassCenter);
        assert_eq!((c.x, c.y), (1, 1));
    }

    #[test]
    fn ring_centroid_snaps_to_nearest_foreground() {
        // 7x7 ring, hole 5x5 at center; centroid (3,3) is background
        let ring = BinaryMask::from_fn(7, 7, |x, y| x == 0 || y == 0 || x == 6 || y == 6);
        let a = ann(1, ring.clone());
        let c = center_point(&a, CenterMode::MassCenter);
        assert!(ring.get(c.x, c.y));
        // independent oracle: minimal squared distance to (3,3) over ring pixels
        let best = ring
            .foreground()
            .map(|(x, y)| (x as i64 - 3).pow(2) + (y as i64 - 3).pow(2))
            .min()
            .unwrap();
        assert_eq!((c.x as i64 - 3).pow(2) + (c.y as i64 - 3).pow(2), best);
        assert_eq!((c.x, c.y), (3, 0));
    }

    #[test]
    fn boxes() {
        let a = ann(1, BinaryMask::from_pixels(10, 10, &[(2, 3), (5, 7)]));
        let b = box_from_annotation(&a).unwrap();
        assert_eq!((b.top_left, b.bottom_right), ((2, 3), (5, 7)));
        assert_eq!(b.as_labeled_points(), [(2, 3, 2), (5, 7, 3)]);
        let full = ann(1, BinaryMask::full(6, 4));
        let b = box_from_annotation(&full).unwrap();
        assert_eq!((b.top_left, b.bottom_right), ((0, 0), (5, 3)));
        let single = ann(1, BinaryMask::from_pixels(6, 4, &[(5, 1)]));
        let b = box_from_annotation(&single).unwrap();
        assert_eq!((b.top_left, b.bottom_right), ((4, 1), (5, 2)));
        let tiny = ann(1, BinaryMask::full(1, 1));
        assert!(box_from_annotation(&tiny).is_err());
    }

    fn two_object_video() -> AnnotatedVideo {
        let seq = VideoSequence::blank("v", 2, 20, 20);
        let mut map = BTreeMap::new();
        map.insert(
            0,
            vec![
                InstanceAnnotation::new(0, 1, 1, square(20, 20, 0, 0, 4)).unwrap(),
                InstanceAnnotation::new(0, 2, 2, square(20, 20, 10, 10, 4)).unwrap(),
            ],
        );
        AnnotatedVideo::new(seq, map, BTreeMap::new()).unwrap()
    }

    #[test]
    fn prompt_sets() {
        let v = two_object_video();
        let masks = build_prompt_set(&v, 0, &PromptStrategy::mask()).unwrap();
        assert_eq!(masks.len(), 2);
        assert!(masks.iter().all(|p| matches!(p, Prompt::Mask(_))));
        let boxes = build_prompt_set(&v, 0, &PromptStrategy::bbox()).unwrap();
        assert_eq!(boxes.len(), 2);
        let pts = build_prompt_set(&v, 0, &PromptStrategy::three_points_random()).unwrap();
        for oid in [1, 2] {
            let mine: Vec<_> = pts.iter().filter(|p| p.object_id() == oid).collect();
            let pos = mine
                .iter()
                .filter(|p| matches!(p, Prompt::Point(q) if q.label == PointLabel::Positive))
                .count();
            assert_eq!(pos, 3);
            assert!(mine.len() - pos <= 1);
        }
        assert!(matches!(
            build_prompt_set(&v, 1, &PromptStrategy::mask()),
            Err(PromptError::UnannotatedFrame {
                frame: 1,
                first_valid: Some(0)
            })
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in PromptStrategy::standard_set() {
            assert_eq!(s.name().parse::<PromptStrategy>().unwrap(), s);
        }
        assert_eq!(
            "5Points-Random".parse::<PromptStrategy>().unwrap(),
            PromptStrategy::random_points(5)
        );
        assert!("lasso".parse::<PromptStrategy>().is_err());
    }
}

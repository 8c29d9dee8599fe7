//! Pixel and instance metrics for segmentation results against ground truth.
//!
//! Scores for a class compare the union of its predicted object masks with the
//! union of its ground-truth masks on each evaluated frame. A frame is
//! evaluated when it is annotated and the result covers it. Classes enter the
//! averages only if they have ground-truth pixels somewhere in that span.
//!
//! Two aggregation orders are offered because they can disagree:
//! [`AggregationOrder::PerClassOverVideo`] sums TP/FP/FN over frames before
//! scoring, [`AggregationOrder::PerFrameThenClass`] scores each frame and
//! averages. The order used is stored in every report.
//!
//! When both masks are empty, IoU and Dice are defined as 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedVideo, ClassId, GroundTruthKind, ObjectId};
use crate::mask::{BinaryMask, MaskError};
use crate::propagation::SegmentationResult;

/// Describes the mAP variant computed here; included wherever mAP is reported.
pub const MAP_DEFINITION: &str =
    "mAP@[0.5]: predictions ranked by mask area (no confidence scores), greedy IoU matching, all-point AP, mean over classes";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("result and ground truth share no annotated frames")]
    NoCommonFrames,
    #[error("IoU threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error("report output: {0}")]
    Output(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricsError> {
    if pred.dims() != gt.dims() {
        let ((pw, ph), (gw, gh)) = (pred.dims(), gt.dims());
        return Err(MaskError::DimensionMismatch(pw, ph, gw, gh).into());
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn iou(c: ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

pub fn dice(c: ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// TP/(TP+FP+FN). Same formula as [`iou`]; kept under its own name for reports.
pub fn overlap_phi(c: ConfusionCounts) -> f64 {
    iou(c)
}

/// Mean absolute per-pixel difference between binary masks, (FP+FN)/N.
pub fn mae(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    let c = confusion_counts(pred, gt)?;
    let n = pred.len();
    Ok(if n == 0 { 0.0 } else { (c.fp + c.fn_) as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationOrder {
    PerFrameThenClass,
    #[default]
    PerClassOverVideo,
}

impl fmt::Display for AggregationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationOrder::PerFrameThenClass => "per_frame_then_class",
            AggregationOrder::PerClassOverVideo => "per_class_over_video",
        })
    }
}

impl std::str::FromStr for AggregationOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_frame_then_class" => Ok(Self::PerFrameThenClass),
            "per_class_over_video" => Ok(Self::PerClassOverVideo),
            _ => Err(format!("unknown aggregation order {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub name: String,
    pub iou: f64,
    pub dice: f64,
    pub mae: f64,
    /// Totals over evaluated frames, whatever the aggregation order.
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<ClassId, ClassScores>,
    pub miou: f64,
    pub mdice: f64,
    pub mae: f64,
    pub phi: f64,
    pub map_score: Option<f64>,
    pub map_definition: Option<String>,
    pub class_count: usize,
    /// Pixels per frame.
    pub pixel_count: u64,
    pub frames_evaluated: usize,
    pub aggregation: AggregationOrder,
    pub ground_truth: GroundTruthKind,
}

fn class_union(
    masks: impl Iterator<Item = (ObjectId, BinaryMask)>,
    classes: &BTreeMap<ObjectId, ClassId>,
    dims: (u32, u32),
) -> Result<BTreeMap<ClassId, BinaryMask>, MetricsError> {
    let mut out: BTreeMap<ClassId, BinaryMask> = BTreeMap::new();
    for (id, m) in masks {
        let Some(&c) = classes.get(&id) else {
            continue;
        };
        let slot = out.entry(c).or_insert_with(|| BinaryMask::empty(dims.0, dims.1));
        *slot = slot.union(&m)?;
    }
    Ok(out)
}

fn common_frames(result: &SegmentationResult, gt: &AnnotatedVideo) -> Vec<usize> {
    result
        .frames
        .keys()
        .copied()
        .filter(|&f| gt.is_annotated(f))
        .collect()
}

/// Per-class and mean scores of `result` against `gt`.
pub fn aggregate(
    result: &SegmentationResult,
    gt: &AnnotatedVideo,
    order: AggregationOrder,
) -> Result<MetricsReport, MetricsError> {
    let frames = common_frames(result, gt);
    if frames.is_empty() {
        return Err(MetricsError::NoCommonFrames);
    }
    let dims = gt.sequence().frame_size().ok_or(MetricsError::NoCommonFrames)?;
    let n = u64::from(dims.0) * u64::from(dims.1);
    let classes = gt.object_classes();

    let mut totals: BTreeMap<ClassId, ConfusionCounts> = BTreeMap::new();
    let mut frame_scores: BTreeMap<ClassId, Vec<(f64, f64)>> = BTreeMap::new();
    let mut gt_present: BTreeSet<ClassId> = BTreeSet::new();
    for &f in &frames {
        let pred = class_union(result.frames[&f].iter().map(|(id, m)| (*id, m.clone())), &classes, dims)?;
        let truth = class_union(
            gt.frame_annotations(f).iter().map(|a| (a.object_id, a.mask.clone())),
            &classes,
            dims,
        )?;
        let empty = BinaryMask::empty(dims.0, dims.1);
        let seen: BTreeSet<ClassId> = pred.keys().chain(truth.keys()).copied().collect();
        for c in seen {
            let p = pred.get(&c).unwrap_or(&empty);
            let g = truth.get(&c).unwrap_or(&empty);
            let counts = confusion_counts(p, g)?;
            if counts.tp + counts.fn_ > 0 {
                gt_present.insert(c);
            }
            *totals.entry(c).or_default() += counts;
            if counts.tp + counts.fp + counts.fn_ > 0 {
                frame_scores.entry(c).or_default().push((iou(counts), dice(counts)));
            }
        }
    }

    let frame_pixels = n * frames.len() as u64;
    let mut per_class = BTreeMap::new();
    for &c in &gt_present {
        let counts = totals[&c];
        let (ci, cd) = match order {
            AggregationOrder::PerClassOverVideo => (iou(counts), dice(counts)),
            AggregationOrder::PerFrameThenClass => {
                let s = &frame_scores[&c];
                let k = s.len() as f64;
                (s.iter().map(|x| x.0).sum::<f64>() / k, s.iter().map(|x| x.1).sum::<f64>() / k)
            }
        };
        let name = gt.class_names().get(&c).cloned().unwrap_or_else(|| format!("class_{c}"));
        per_class.insert(
            c,
            ClassScores {
                name,
                iou: ci,
                dice: cd,
                mae: (counts.fp + counts.fn_) as f64 / frame_pixels as f64,
                counts,
            },
        );
    }
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| {
        if per_class.is_empty() {
            0.0
        } else {
            per_class.values().map(f).sum::<f64>() / k
        }
    };
    let miou = mean(|s| s.iou);
    Ok(MetricsReport {
        miou,
        mdice: mean(|s| s.dice),
        mae: mean(|s| s.mae),
        phi: miou,
        per_class,
        map_score: None,
        map_definition: None,
        class_count: gt_present.len(),
        pixel_count: n,
        frames_evaluated: frames.len(),
        aggregation: order,
        ground_truth: gt.ground_truth_kind(),
    })
}

/// All-point interpolated average precision from a ranked list of hits.
fn average_precision(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision envelope: max precision at any recall >= r.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (r, _) = points[i];
        if r > prev_recall {
            let envelope = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    ap
}

/// Mean over classes and thresholds of instance-level AP.
///
/// Predictions take their class from the ground-truth class of their object
/// id. Within a class they are ranked by descending mask area (then frame,
/// then object id) and each is greedily matched to the unmatched same-frame
/// ground-truth instance with the highest IoU, if that IoU reaches the
/// threshold.
pub fn mean_average_precision(
    result: &SegmentationResult,
    gt: &AnnotatedVideo,
    iou_thresholds: &[f64],
) -> Result<f64, MetricsError> {
    if let Some(&t) = iou_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(MetricsError::BadThreshold(t));
    }
    let frames = common_frames(result, gt);
    if frames.is_empty() {
        return Err(MetricsError::NoCommonFrames);
    }
    let classes = gt.object_classes();
    let mut gt_by_class: BTreeMap<ClassId, Vec<(usize, &BinaryMask)>> = BTreeMap::new();
    let mut pred_by_class: BTreeMap<ClassId, Vec<(usize, ObjectId, &BinaryMask)>> = BTreeMap::new();
    for &f in &frames {
        for a in gt.frame_annotations(f) {
            gt_by_class.entry(a.class_id).or_default().push((f, &a.mask));
        }
        for (id, m) in &result.frames[&f] {
            if let (Some(&c), true) = (classes.get(id), m.area() > 0) {
                pred_by_class.entry(c).or_default().push((f, *id, m));
            }
        }
    }
    if gt_by_class.is_empty() || iou_thresholds.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (c, truths) in &gt_by_class {
        let mut preds = pred_by_class.remove(c).unwrap_or_default();
        preds.sort_by(|a, b| b.2.area().cmp(&a.2.area()).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        for &t in iou_thresholds {
            let mut matched = vec![false; truths.len()];
            let mut hits = Vec::with_capacity(preds.len());
            for (f, _, m) in &preds {
                let mut best: Option<(usize, f64)> = None;
                for (j, (gf, g)) in truths.iter().enumerate() {
                    if gf != f || matched[j] {
                        continue;
                    }
                    let v = m.iou(g)?;
                    if v >= t && best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                if let Some((j, _)) = best {
                    matched[j] = true;
                }
                hits.push(best.is_some());
            }
            total += average_precision(&hits, truths.len());
        }
    }
    Ok(total / (gt_by_class.len() * iou_thresholds.len()) as f64)
}

/// [`aggregate`] plus mAP at IoU 0.5.
pub fn evaluate(
    result: &SegmentationResult,
    gt: &AnnotatedVideo,
    order: AggregationOrder,
    with_map: bool,
) -> Result<MetricsReport, MetricsError> {
    let mut report = aggregate(result, gt, order)?;
    if with_map {
        report.map_score = Some(mean_average_precision(result, gt, &[0.5])?);
        report.map_definition = Some(MAP_DEFINITION.to_string());
    }
    Ok(report)
}

/// Column order of [`write_metrics_csv`].
pub const METRICS_CSV_HEADER: [&str; 13] = [
    "row", "class_id", "class_name", "iou", "dice", "mae", "phi", "map", "tp", "fp", "fn", "ground_truth",
    "aggregation",
];

fn gt_label(kind: GroundTruthKind) -> &'static str {
    match kind {
        GroundTruthKind::Annotated => "annotated",
        GroundTruthKind::Pseudo => "pseudo",
    }
}

/// Scores are written with six decimals.
pub fn fmt_score(x: f64) -> String {
    format!("{x:.6}")
}

/// One row per class, then a `mean` row. Every row names the ground-truth
/// kind so pseudo-label scores cannot be mistaken for real ones.
pub fn write_metrics_csv<W: Write>(report: &MetricsReport, out: W) -> Result<(), MetricsError> {
    let err = |e: csv::Error| MetricsError::Output(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_CSV_HEADER).map_err(err)?;
    let gt = gt_label(report.ground_truth);
    let agg = report.aggregation.to_string();
    for (c, s) in &report.per_class {
        w.write_record([
            "class",
            &c.to_string(),
            &s.name,
            &fmt_score(s.iou),
            &fmt_score(s.dice),
            &fmt_score(s.mae),
            &fmt_score(s.iou),
            "",
            &s.counts.tp.to_string(),
            &s.counts.fp.to_string(),
            &s.counts.fn_.to_string(),
            gt,
            &agg,
        ])
        .map_err(err)?;
    }
    let map = report.map_score.map(fmt_score).unwrap_or_default();
    w.write_record([
        "mean",
        "",
        "",
        &fmt_score(report.miou),
        &fmt_score(report.mdice),
        &fmt_score(report.mae),
        &fmt_score(report.phi),
        &map,
        "",
        "",
        "",
        gt,
        &agg,
    ])
    .map_err(err)?;
    w.flush().map_err(|e| MetricsError::Output(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InstanceAnnotation, VideoSequence};
    use crate::mask::BBox;
    use crate::propagation::Provenance;

    fn rect(x0: u32, x1: u32) -> BinaryMask {
        BinaryMask::rect(10, 4, BBox { x_min: x0, y_min: 0, x_max: x1, y_max: 3 })
    }

    fn video(frames: Vec<Vec<(ObjectId, ClassId, BinaryMask)>>) -> AnnotatedVideo {
        let seq = VideoSequence::blank("v", frames.len(), 10, 4);
        let anns = frames
            .into_iter()
            .enumerate()
            .map(|(f, v)| {
                (
                    f,
                    v.into_iter()
                        .filter_map(|(o, c, m)| InstanceAnnotation::new(f, o, c, m))
                        .collect(),
                )
            })
            .collect();
        AnnotatedVideo::new(seq, anns, BTreeMap::new()).unwrap()
    }

    pub(crate) fn result(frames: Vec<Vec<(ObjectId, BinaryMask)>>) -> SegmentationResult {
        SegmentationResult {
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(f, v)| (f, v.into_iter().collect()))
                .collect(),
            provenance: Provenance {
                video_id: "v".into(),
                strategy: "Mask".into(),
                policy: "none".into(),
                segmenter: "test".into(),
                seed: 0,
                initial_prompt_frame: 0,
                reinit_events: vec![],
                prompt_injections: 1,
                mask_exit_rate: None,
                ground_truth: GroundTruthKind::Annotated,
            },
            failure: None,
        }
    }

    #[test]
    fn count_examples() {
        let a = rect(0, 2);
        assert_eq!(confusion_counts(&a, &a).unwrap(), ConfusionCounts { tp: 12, fp: 0, fn_: 0 });
        let c = confusion_counts(&rect(0, 1), &rect(5, 7)).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 8, fn_: 12 });
        let one = ConfusionCounts { tp: 1, fp: 1, fn_: 1 };
        assert!((iou(one) - 1.0 / 3.0).abs() < 1e-15);
        assert!((dice(one) - 0.5).abs() < 1e-15);
        assert_eq!(iou(ConfusionCounts::default()), 1.0);
        assert_eq!(overlap_phi(ConfusionCounts { tp: 0, fp: 2, fn_: 0 }), 0.0);
        assert_eq!(mae(&a, &a.complement()).unwrap(), 1.0);
        assert!(confusion_counts(&a, &BinaryMask::empty(3, 3)).is_err());
    }

    #[test]
    fn perfect_and_missing_class() {
        let gt = video(vec![vec![(0, 1, rect(0, 2)), (1, 2, rect(5, 7))]]);
        let perfect = result(vec![vec![(0, rect(0, 2)), (1, rect(5, 7))]]);
        for order in [AggregationOrder::PerClassOverVideo, AggregationOrder::PerFrameThenClass] {
            let r = aggregate(&perfect, &gt, order).unwrap();
            assert_eq!((r.miou, r.mdice, r.mae), (1.0, 1.0, 0.0));
        }
        let half = result(vec![vec![(0, rect(0, 2))]]);
        let r = aggregate(&half, &gt, AggregationOrder::default()).unwrap();
        assert_eq!(r.class_count, 2);
        assert!((r.miou - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orders_differ_when_frames_differ() {
        // Class 1: frame 0 perfect on 12 px, frame 1 half wrong on 4+4 px.
        let gt = video(vec![vec![(0, 1, rect(0, 2))], vec![(0, 1, rect(0, 0))]]);
        let pred = result(vec![vec![(0, rect(0, 2))], vec![(0, rect(1, 1))]]);
        let video_order = aggregate(&pred, &gt, AggregationOrder::PerClassOverVideo).unwrap();
        let frame_order = aggregate(&pred, &gt, AggregationOrder::PerFrameThenClass).unwrap();
        assert!((video_order.miou - 12.0 / 20.0).abs() < 1e-15);
        assert!((frame_order.miou - 0.5).abs() < 1e-15);
        assert_eq!(frame_order.aggregation, AggregationOrder::PerFrameThenClass);
    }

    #[test]
    fn unannotated_frames_are_skipped() {
        let gt = video(vec![vec![(0, 1, rect(0, 2))], vec![]]);
        let pred = result(vec![vec![(0, rect(0, 2))], vec![(0, rect(5, 9))]]);
        let r = aggregate(&pred, &gt, AggregationOrder::default()).unwrap();
        assert_eq!(r.frames_evaluated, 1);
        assert_eq!(r.miou, 1.0);
        let nothing = result(vec![]);
        assert!(matches!(
            aggregate(&nothing, &gt, AggregationOrder::default()),
            Err(MetricsError::NoCommonFrames)
        ));
    }

    #[test]
    fn map_examples() {
        let gt = video(vec![vec![(0, 1, rect(0, 4)), (1, 1, rect(7, 9))]]);
        let perfect = result(vec![vec![(0, rect(0, 4)), (1, rect(7, 9))]]);
        assert_eq!(mean_average_precision(&perfect, &gt, &[0.5]).unwrap(), 1.0);
        let none = result(vec![vec![]]);
        assert_eq!(mean_average_precision(&none, &gt, &[0.5]).unwrap(), 0.0);
        // One prediction at IoU 0.6 against the 5-wide object, the other object missed.
        let one = result(vec![vec![(0, rect(0, 2))]]);
        assert!((rect(0, 2).iou(&rect(0, 4)).unwrap() - 0.6).abs() < 1e-12);
        assert!((mean_average_precision(&one, &gt, &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(mean_average_precision(&one, &gt, &[1.5]).is_err());
    }

    #[test]
    fn ap_envelope() {
        // hits: T F T with 2 positives → 0.5*1 + 0.5*(2/3)
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let gt = video(vec![vec![(0, 1, rect(0, 2))]]).with_ground_truth_kind(GroundTruthKind::Pseudo);
        let r = evaluate(&result(vec![vec![(0, rect(0, 2))]]), &gt, AggregationOrder::default(), true).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_HEADER.join(","));
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().skip(1).all(|l| l.contains(",pseudo,")));
        assert!(lines[2].starts_with("mean,,,1.000000,1.000000,0.000000,1.000000,1.000000"));
    }
}

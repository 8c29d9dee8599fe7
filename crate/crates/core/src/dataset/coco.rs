//! COCO-style instance documents.
//!
//! Videos are delimited by a `video_id` field on each image record, frames are
//! ordered by an optional `frame_index` (falling back to `file_name`), and
//! object identity comes from `object_id` / `track_id` / `instance_id`. When a
//! document has no identity field at all, ids are assigned by class and mask
//! overlap with [`IdentityTracker`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    AnnotatedVideo, ClassId, DatasetError, FrameRef, GroundTruthKind, IdentityTracker,
    InstanceAnnotation, ObjectId, VideoSequence,
};
use crate::mask::{BinaryMask, Rle};

/// Video id used when a document carries no grouping field.
pub const DEFAULT_VIDEO_ID: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub struct CocoDataset {
    pub videos: Vec<AnnotatedVideo>,
    /// True when the document lacked `video_id` and everything was treated as one video.
    pub grouping_inferred: bool,
    /// Annotations whose decoded mask was empty.
    pub dropped_empty: usize,
}

#[derive(Deserialize)]
struct Document {
    images: Vec<Value>,
    annotations: Vec<Value>,
    categories: Vec<Value>,
    #[serde(default)]
    videos: Vec<Value>,
}

#[derive(Deserialize)]
struct ImageRecord {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    video_id: Option<Value>,
    #[serde(default, alias = "frame_id")]
    frame_index: Option<usize>,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    category_id: ClassId,
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default, alias = "track_id", alias = "instance_id")]
    object_id: Option<ObjectId>,
}

#[derive(Deserialize)]
struct CategoryRecord {
    id: ClassId,
    name: String,
}

#[derive(Deserialize)]
struct VideoRecord {
    id: Value,
    #[serde(default)]
    fps: Option<f64>,
    #[serde(default)]
    sampled_fps: Option<f64>,
    #[serde(default)]
    pseudo: bool,
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_record<T: for<'de> Deserialize<'de>>(
    collection: &str,
    i: usize,
    v: &Value,
) -> Result<T, DatasetError> {
    T::deserialize(v).map_err(|e| {
        let id = v.get("id").map(id_string).unwrap_or_else(|| "?".into());
        DatasetError::Parse {
            record: format!("{collection}[{i}] (id={id})"),
            message: e.to_string(),
        }
    })
}

fn decode_segmentation(
    seg: &Value,
    width: u32,
    height: u32,
    record: &str,
) -> Result<BinaryMask, DatasetError> {
    let parse_err = |message: String| DatasetError::Parse {
        record: record.to_string(),
        message,
    };
    match seg {
        Value::Object(obj) => {
            if let Some(size) = obj.get("size") {
                let size: [u32; 2] = serde_json::from_value(size.clone())
                    .map_err(|e| parse_err(format!("bad RLE size: {e}")))?;
                if size != [height, width] {
                    return Err(parse_err(format!(
                        "RLE size {size:?} does not match image {height}x{width}"
                    )));
                }
            }
            let rle = match obj.get("counts") {
                Some(Value::String(s)) => Rle::from_coco_string(s, width, height)?,
                Some(Value::Array(_)) => {
                    let counts: Vec<u32> = serde_json::from_value(obj["counts"].clone())
                        .map_err(|e| parse_err(format!("bad RLE counts: {e}")))?;
                    Rle {
                        width,
                        height,
                        counts,
                    }
                }
                _ => return Err(parse_err("RLE segmentation without counts".into())),
            };
            BinaryMask::from_rle(&rle).map_err(|e| parse_err(e.to_string()))
        }
        Value::Array(_) => {
            let polys: Vec<Vec<f64>> = serde_json::from_value(seg.clone())
                .map_err(|e| parse_err(format!("bad polygon list: {e}")))?;
            Ok(BinaryMask::from_polygons(&polys, width, height))
        }
        other => Err(parse_err(format!("unsupported segmentation {other}"))),
    }
}

fn bbox_mask(b: [f64; 4], width: u32, height: u32) -> BinaryMask {
    let x0 = b[0].floor().max(0.0);
    let y0 = b[1].floor().max(0.0);
    let x1 = (b[0] + b[2]).ceil().min(width as f64);
    let y1 = (b[1] + b[3]).ceil().min(height as f64);
    BinaryMask::from_fn(width, height, |x, y| {
        (x as f64) >= x0 && (x as f64) < x1 && (y as f64) >= y0 && (y as f64) < y1
    })
}

/// Parse a COCO document. `image_root` is joined onto each `file_name`.
pub fn load_coco_annotations(
    document: &str,
    image_root: &Path,
) -> Result<CocoDataset, DatasetError> {
    let doc: Document = serde_json::from_str(document).map_err(|e| DatasetError::Parse {
        record: "document".into(),
        message: e.to_string(),
    })?;

    let mut class_names = BTreeMap::new();
    for (i, v) in doc.categories.iter().enumerate() {
        let c: CategoryRecord = parse_record("categories", i, v)?;
        class_names.insert(c.id, c.name);
    }

    let mut video_meta: HashMap<String, VideoRecord> = HashMap::new();
    for (i, v) in doc.videos.iter().enumerate() {
        let r: VideoRecord = parse_record("videos", i, v)?;
        video_meta.insert(id_string(&r.id), r);
    }

    let mut images = Vec::with_capacity(doc.images.len());
    for (i, v) in doc.images.iter().enumerate() {
        images.push(parse_record::<ImageRecord>("images", i, v)?);
    }
    let with_group = images.iter().filter(|im| im.video_id.is_some()).count();
    if with_group != 0 && with_group != images.len() {
        return Err(DatasetError::Parse {
            record: "images".into(),
            message: format!(
                "{with_group} of {} images carry video_id; grouping must be all or nothing",
                images.len()
            ),
        });
    }
    let grouping_inferred = with_group == 0 && !images.is_empty();
    if grouping_inferred {
        log::warn!(
            "COCO document has no video_id grouping; treating all {} images as one video",
            images.len()
        );
    }

    // video id -> image records, in first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<&ImageRecord>> = HashMap::new();
    for im in &images {
        let vid = im
            .video_id
            .as_ref()
            .map(id_string)
            .unwrap_or_else(|| DEFAULT_VIDEO_ID.to_string());
        if !grouped.contains_key(&vid) {
            order.push(vid.clone());
        }
        grouped.entry(vid).or_default().push(im);
    }

    // image id -> (video id, dense frame index)
    let mut image_slot: HashMap<u64, (String, usize)> = HashMap::new();
    let mut sequences: HashMap<String, VideoSequence> = HashMap::new();
    for vid in &order {
        let list = grouped.get_mut(vid).expect("grouped");
        list.sort_by(|a, b| match (a.frame_index, b.frame_index) {
            (Some(x), Some(y)) => x.cmp(&y),
            _ => a.file_name.cmp(&b.file_name),
        });
        let mut frames = Vec::with_capacity(list.len());
        for (i, im) in list.iter().enumerate() {
            if image_slot.insert(im.id, (vid.clone(), i)).is_some() {
                return Err(DatasetError::Integrity(format!("duplicate image id {}", im.id)));
            }
            frames.push(FrameRef {
                index: i,
                source_index: im.frame_index.unwrap_or(i),
                image_locator: image_root.join(&im.file_name).to_string_lossy().into_owned(),
                width: im.width,
                height: im.height,
            });
        }
        for w in frames.windows(2) {
            if w[0].source_index >= w[1].source_index {
                return Err(DatasetError::Integrity(format!(
                    "video {vid}: duplicate frame_index {}",
                    w[1].source_index
                )));
            }
        }
        let meta = video_meta.get(vid);
        let fps = meta.and_then(|m| m.fps).unwrap_or(1.0);
        let sampled = meta.and_then(|m| m.sampled_fps).unwrap_or(fps);
        sequences.insert(vid.clone(), VideoSequence::new(vid.clone(), frames, fps, sampled)?);
    }

    let mut records = Vec::with_capacity(doc.annotations.len());
    for (i, v) in doc.annotations.iter().enumerate() {
        records.push(parse_record::<AnnotationRecord>("annotations", i, v)?);
    }
    let with_ids = records.iter().filter(|r| r.object_id.is_some()).count();
    if with_ids != 0 && with_ids != records.len() {
        return Err(DatasetError::Parse {
            record: "annotations".into(),
            message: format!(
                "{with_ids} of {} annotations carry an object id; identity must be all or nothing",
                records.len()
            ),
        });
    }
    let explicit_ids = with_ids > 0;

    // video -> frame -> [(object id, class, mask)]
    type Pending = Vec<(Option<ObjectId>, ClassId, BinaryMask)>;
    let mut pending: HashMap<String, BTreeMap<usize, Pending>> = HashMap::new();
    let mut dropped_empty = 0usize;
    for (i, r) in records.iter().enumerate() {
        let record = format!(
            "annotations[{i}] (id={})",
            r.id.map_or("?".to_string(), |x| x.to_string())
        );
        let (vid, frame) = image_slot.get(&r.image_id).ok_or_else(|| {
            DatasetError::Integrity(format!("{record} references unknown image {}", r.image_id))
        })?;
        if !class_names.contains_key(&r.category_id) {
            return Err(DatasetError::Integrity(format!(
                "{record} references unknown category {}",
                r.category_id
            )));
        }
        let frame_ref = &sequences[vid].frames()[*frame];
        let (w, h) = (frame_ref.width, frame_ref.height);
        let mask = match (&r.segmentation, r.bbox) {
            (Some(seg), _) if !seg.is_null() && seg != &json!([]) => {
                decode_segmentation(seg, w, h, &record)?
            }
            (_, Some(b)) => bbox_mask(b, w, h),
            _ => {
                return Err(DatasetError::Parse {
                    record,
                    message: "annotation has neither segmentation nor bbox".into(),
                })
            }
        };
        if mask.is_empty() {
            log::warn!("{record}: decoded mask is empty; dropping");
            dropped_empty += 1;
            continue;
        }
        pending
            .entry(vid.clone())
            .or_default()
            .entry(*frame)
            .or_default()
            .push((r.object_id, r.category_id, mask));
    }

    let mut videos = Vec::with_capacity(order.len());
    for vid in &order {
        let frames = pending.remove(vid).unwrap_or_default();
        let mut annotations = BTreeMap::new();
        let mut tracker = IdentityTracker::default();
        for (frame, items) in frames {
            let list = if explicit_ids {
                items
                    .into_iter()
                    .filter_map(|(oid, class, mask)| {
                        InstanceAnnotation::new(frame, oid.expect("explicit"), class, mask)
                    })
                    .collect()
            } else {
                tracker.assign(
                    frame,
                    items.into_iter().map(|(_, c, m)| (c, m)).collect(),
                )
            };
            annotations.insert(frame, list);
        }
        let seq = sequences.remove(vid).expect("sequence");
        let pseudo = video_meta.get(vid).is_some_and(|m| m.pseudo);
        let video = AnnotatedVideo::new(seq, annotations, class_names.clone())?;
        videos.push(video.with_ground_truth_kind(if pseudo {
            GroundTruthKind::Pseudo
        } else {
            GroundTruthKind::Annotated
        }));
    }

    Ok(CocoDataset {
        videos,
        grouping_inferred,
        dropped_empty,
    })
}

pub fn load_coco_file(path: &Path, image_root: &Path) -> Result<CocoDataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_coco_annotations(&text, image_root)
}

/// Serialize videos back to a COCO document with uncompressed RLE segmentations.
/// `image_root` is stripped from image locators so that a reload with the same
/// root reproduces them.
pub fn to_coco_document(videos: &[AnnotatedVideo], image_root: &Path) -> Value {
    let root = image_root.to_string_lossy().into_owned();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut video_records = Vec::new();
    let mut categories: BTreeMap<ClassId, String> = BTreeMap::new();
    let mut image_id = 0u64;
    let mut ann_id = 0u64;
    for video in videos {
        let seq = video.sequence();
        categories.extend(video.class_names().clone());
        video_records.push(json!({
            "id": seq.video_id(),
            "fps": seq.source_fps(),
            "sampled_fps": seq.sampled_fps(),
            "pseudo": video.ground_truth_kind() == GroundTruthKind::Pseudo,
        }));
        for frame in seq.frames() {
            image_id += 1;
            let file_name = Path::new(&frame.image_locator)
                .strip_prefix(&root)
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_else(|_| frame.image_locator.clone());
            images.push(json!({
                "id": image_id,
                "video_id": seq.video_id(),
                "frame_index": frame.source_index,
                "file_name": file_name,
                "width": frame.width,
                "height": frame.height,
            }));
            for ann in video.frame_annotations(frame.index) {
                ann_id += 1;
                let rle = ann.mask.to_rle();
                annotations.push(json!({
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": ann.class_id,
                    "object_id": ann.object_id,
                    "segmentation": {"size": [rle.height, rle.width], "counts": rle.counts},
                    "bbox": [ann.bbox.x_min, ann.bbox.y_min, ann.bbox.width(), ann.bbox.height()],
                    "area": ann.mask.area(),
                    "iscrowd": 0,
                }));
            }
        }
    }
    json!({
        "videos": video_records,
        "images": images,
        "annotations": annotations,
        "categories": categories
            .into_iter()
            .map(|(id, name)| json!({"id": id, "name": name}))
            .collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rle_annotation() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4, "video_id": "v"}],
            "annotations": [{"id": 7, "image_id": 1, "category_id": 3, "object_id": 1,
                             "segmentation": {"size": [4, 4], "counts": [5, 3, 8]}}],
            "categories": [{"id": 3, "name": "grasper"}]
        }"#;
        let ds = load_coco_annotations(doc, Path::new("root")).unwrap();
        assert_eq!(ds.videos.len(), 1);
        let v = &ds.videos[0];
        assert_eq!(v.sequence().len(), 1);
        let anns = v.frame_annotations(0);
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].mask.area(), 3);
        assert!(!ds.grouping_inferred);
    }

    #[test]
    fn empty_annotation_list() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4, "video_id": 0}],
                      "annotations": [], "categories": []}"#;
        let ds = load_coco_annotations(doc, Path::new("")).unwrap();
        assert!(ds.videos[0].annotations().is_empty());
    }

    #[test]
    fn unknown_image_is_integrity_error() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
                      "annotations": [{"id": 1, "image_id": 9, "category_id": 1, "bbox": [0,0,1,1]}],
                      "categories": [{"id": 1, "name": "x"}]}"#;
        let err = load_coco_annotations(doc, Path::new("")).unwrap_err();
        assert!(matches!(err, DatasetError::Integrity(_)), "{err}");
    }

    #[test]
    fn malformed_record_is_named() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "width": "wide", "height": 4}],
                      "annotations": [], "categories": []}"#;
        match load_coco_annotations(doc, Path::new("")).unwrap_err() {
            DatasetError::Parse { record, .. } => assert_eq!(record, "images[0] (id=1)"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_grouping_is_flagged() {
        let doc = r#"{"images": [{"id": 1, "file_name": "b.png", "width": 4, "height": 4},
                                 {"id": 2, "file_name": "a.png", "width": 4, "height": 4}],
                      "annotations": [], "categories": []}"#;
        let ds = load_coco_annotations(doc, Path::new("")).unwrap();
        assert!(ds.grouping_inferred);
        assert_eq!(ds.videos[0].video_id(), DEFAULT_VIDEO_ID);
        // ordered by file name
        assert_eq!(ds.videos[0].sequence().frames()[0].image_locator, "a.png");
    }

    #[test]
    fn inconsistent_bbox_is_recomputed_and_empty_masks_dropped() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4, "video_id": "v"}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 1, "object_id": 1, "bbox": [0, 0, 4, 4],
                 "segmentation": {"size": [4, 4], "counts": [5, 3, 8]}},
                {"id": 2, "image_id": 1, "category_id": 1, "object_id": 2,
                 "segmentation": {"size": [4, 4], "counts": [16]}}
            ],
            "categories": [{"id": 1, "name": "x"}]
        }"#;
        let ds = load_coco_annotations(doc, Path::new("")).unwrap();
        assert_eq!(ds.dropped_empty, 1);
        let a = &ds.videos[0].frame_annotations(0)[0];
        assert_eq!((a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max), (1, 1, 1, 3));
    }

    #[test]
    fn compressed_rle_and_polygon() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 5, "height": 5, "video_id": "v"}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 1, "object_id": 1,
                 "segmentation": [[1, 1, 3, 1, 3, 3, 1, 3]]},
                {"id": 2, "image_id": 1, "category_id": 1, "object_id": 2,
                 "segmentation": {"size": [5, 5], "counts": "0i0"}}
            ],
            "categories": [{"id": 1, "name": "x"}]
        }"#;
        let ds = load_coco_annotations(doc, Path::new("")).unwrap();
        let anns = ds.videos[0].frame_annotations(0);
        assert_eq!(anns[0].mask.area(), 4);
        assert_eq!(anns[1].mask.area(), 25);
    }
}

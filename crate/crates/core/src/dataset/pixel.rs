//! Pixel-level label images: palette mapping, component extraction and
//! cross-frame identity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{AnnotatedVideo, ClassId, DatasetError, FrameRef, InstanceAnnotation, ObjectId};
use crate::dataset::VideoSequence;
use crate::mask::BinaryMask;

/// Minimum IoU for an instance to inherit an id from the previous annotated frame.
pub const IDENTITY_MIN_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PixelKey {
    Gray(u16),
    Rgb(u8, u8, u8),
}

impl fmt::Display for PixelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PixelKey::Gray(v) => write!(f, "{v}"),
            PixelKey::Rgb(r, g, b) => write!(f, "{r},{g},{b}"),
        }
    }
}

impl FromStr for PixelKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [v] => v.parse().map(PixelKey::Gray).map_err(|e| format!("{s:?}: {e}")),
            [r, g, b] => {
                let c = |x: &str| x.parse::<u8>().map_err(|e| format!("{s:?}: {e}"));
                Ok(PixelKey::Rgb(c(r)?, c(g)?, c(b)?))
            }
            _ => Err(format!("{s:?}: expected `v` or `r,g,b`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaletteEntry {
    Background,
    Class { id: ClassId, name: Option<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Palette {
    pub entries: BTreeMap<PixelKey, PaletteEntry>,
}

impl Palette {
    pub fn class_names(&self) -> BTreeMap<ClassId, String> {
        self.entries
            .values()
            .filter_map(|e| match e {
                PaletteEntry::Class { id, name } => {
                    Some((*id, name.clone().unwrap_or_else(|| format!("class_{id}"))))
                }
                PaletteEntry::Background => None,
            })
            .collect()
    }
}

/// Parse the palette text format: one `key = class_id [name]` or
/// `key = background` per line, `#` starts a comment. Keys are a gray level
/// (`7`) or an RGB triple (`255,0,0`).
pub fn parse_palette(text: &str) -> Result<Palette, DatasetError> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Parse {
            record: format!("palette line {}", lineno + 1),
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key: PixelKey = key.trim().parse().map_err(err)?;
        let value = value.trim();
        let entry = if value.eq_ignore_ascii_case("background") {
            PaletteEntry::Background
        } else {
            let mut it = value.splitn(2, char::is_whitespace);
            let id = it
                .next()
                .unwrap_or("")
                .parse::<ClassId>()
                .map_err(|e| err(format!("class id: {e}")))?;
            let name = it.next().map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
            PaletteEntry::Class { id, name }
        };
        if entries.insert(key, entry).is_some() {
            return Err(err(format!("duplicate key {key}")));
        }
    }
    Ok(Palette { entries })
}

pub fn load_palette(path: &Path) -> Result<Palette, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_palette(&text)
}

/// A per-pixel class map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<PixelKey>,
}

impl LabelImage {
    pub fn from_gray(width: u32, height: u32, values: &[u16]) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        Self {
            width,
            height,
            pixels: values.iter().map(|&v| PixelKey::Gray(v)).collect(),
        }
    }
}

/// Read a label PNG. Gray images yield gray keys, color images yield RGB keys.
pub fn load_label_image(path: &Path) -> Result<LabelImage, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (img.width(), img.height());
    let pixels = if img.color().has_color() {
        img.to_rgb8()
            .pixels()
            .map(|p| PixelKey::Rgb(p[0], p[1], p[2]))
            .collect()
    } else {
        img.to_luma16().pixels().map(|p| PixelKey::Gray(p[0])).collect()
    };
    Ok(LabelImage {
        width,
        height,
        pixels,
    })
}

/// Split a label image into (class, connected component) masks, ordered by the
/// scan position of each component's first pixel.
fn class_components(
    label: &LabelImage,
    palette: &Palette,
) -> Result<Vec<(ClassId, BinaryMask)>, DatasetError> {
    let mut unknown = BTreeSet::new();
    let mut class_of = Vec::with_capacity(label.pixels.len());
    for p in &label.pixels {
        match palette.entries.get(p) {
            Some(PaletteEntry::Class { id, .. }) => class_of.push(Some(*id)),
            Some(PaletteEntry::Background) => class_of.push(None),
            None => {
                unknown.insert(*p);
                class_of.push(None);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(DatasetError::UnknownPixelValues(
            unknown.iter().map(ToString::to_string).collect(),
        ));
    }
    let classes: BTreeSet<ClassId> = class_of.iter().flatten().copied().collect();
    let mut out: Vec<(usize, ClassId, BinaryMask)> = Vec::new();
    for class in classes {
        let bits = class_of.iter().map(|c| *c == Some(class)).collect();
        let mask = BinaryMask::from_bits(label.width, label.height, bits)?;
        for region in mask.regions() {
            let (x, y) = region[0];
            let first = y as usize * label.width as usize + x as usize;
            out.push((first, class, BinaryMask::from_pixels(label.width, label.height, &region)));
        }
    }
    out.sort_by_key(|(first, _, _)| *first);
    Ok(out.into_iter().map(|(_, c, m)| (c, m)).collect())
}

/// One instance per (class, 4-connected component), ids 0.. in scan order.
pub fn pixel_masks_to_instances(
    label: &LabelImage,
    palette: &Palette,
) -> Result<Vec<InstanceAnnotation>, DatasetError> {
    let comps = class_components(label, palette)?;
    Ok(IdentityTracker::default().assign(0, comps))
}

/// Carries object identity across annotated frames: an instance inherits the id
/// of the same-class instance on the previous annotated frame with which it has
/// the highest IoU, provided that IoU is at least [`IDENTITY_MIN_IOU`]. Matching
/// is greedy by descending IoU; unmatched instances get fresh ids in scan order.
#[derive(Debug, Clone, Default)]
pub struct IdentityTracker {
    next_id: ObjectId,
    previous: Vec<(ObjectId, ClassId, BinaryMask)>,
}

impl IdentityTracker {
    pub fn assign(
        &mut self,
        frame_index: usize,
        instances: Vec<(ClassId, BinaryMask)>,
    ) -> Vec<InstanceAnnotation> {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, (_, pc, pm)) in self.previous.iter().enumerate() {
            for (ci, (cc, cm)) in instances.iter().enumerate() {
                if pc != cc || pm.dims() != cm.dims() {
                    continue;
                }
                let iou = pm.iou(cm).unwrap_or(0.0);
                if iou >= IDENTITY_MIN_IOU {
                    candidates.push((iou, pi, ci));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut ids: Vec<Option<ObjectId>> = vec![None; instances.len()];
        let mut used_prev = vec![false; self.previous.len()];
        for (_, pi, ci) in candidates {
            if used_prev[pi] || ids[ci].is_some() {
                continue;
            }
            used_prev[pi] = true;
            ids[ci] = Some(self.previous[pi].0);
        }
        let mut out = Vec::with_capacity(instances.len());
        let mut next_previous = Vec::with_capacity(instances.len());
        for ((class, mask), id) in instances.into_iter().zip(ids) {
            let id = id.unwrap_or_else(|| {
                let id = self.next_id;
                self.next_id += 1;
                id
            });
            next_previous.push((id, class, mask.clone()));
            match InstanceAnnotation::new(frame_index, id, class, mask) {
                Some(a) => out.push(a),
                None => log::warn!("frame {frame_index}: empty instance dropped"),
            }
        }
        self.previous = next_previous;
        out
    }
}

/// Build an annotated video from (frame, label image) pairs. Frames with
/// `None` labels are unannotated.
pub fn pixel_mask_video(
    sequence: VideoSequence,
    labels: &[Option<LabelImage>],
    palette: &Palette,
) -> Result<AnnotatedVideo, DatasetError> {
    if labels.len() != sequence.len() {
        return Err(DatasetError::Integrity(format!(
            "{}: {} label images for {} frames",
            sequence.video_id(),
            labels.len(),
            sequence.len()
        )));
    }
    let mut tracker = IdentityTracker::default();
    let mut annotations = BTreeMap::new();
    for (frame, label) in sequence.frames().iter().zip(labels) {
        let Some(label) = label else { continue };
        check_label_size(frame, label)?;
        let comps = class_components(label, palette)?;
        let list = tracker.assign(frame.index, comps);
        annotations.insert(frame.index, list);
    }
    AnnotatedVideo::new(sequence, annotations, palette.class_names())
}

fn check_label_size(frame: &FrameRef, label: &LabelImage) -> Result<(), DatasetError> {
    if (frame.width, frame.height) != (label.width, label.height) {
        return Err(DatasetError::Integrity(format!(
            "label for frame {} is {}x{}, frame is {}x{}",
            frame.index, label.width, label.height, frame.width, frame.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn palette() -> Palette {
        parse_palette("0 = background\n1 = 4 grasper\n2 = 5  # unnamed\n").unwrap()
    }

    #[test]
    fn palette_parsing() {
        let p = parse_palette("# header\n255,0,0 = 3 liver\n0,0,0 = background\n").unwrap();
        assert_eq!(
            p.entries[&PixelKey::Rgb(255, 0, 0)],
            PaletteEntry::Class {
                id: 3,
                name: Some("liver".into())
            }
        );
        assert!(parse_palette("1 = 2\n1 = 3\n").is_err());
        assert!(parse_palette("x = 1\n").is_err());
    }

    #[test]
    fn left_two_columns() {
        let vals: Vec<u16> = (0..16).map(|i| if i % 4 < 2 { 1 } else { 0 }).collect();
        let inst = pixel_masks_to_instances(&LabelImage::from_gray(4, 4, &vals), &palette()).unwrap();
        assert_eq!(inst.len(), 1);
        let b = inst[0].bbox;
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0, 0, 1, 3));
        assert_eq!(inst[0].class_id, 4);
    }

    #[test]
    fn two_blobs_same_class() {
        #[rustfmt::skip]
        let vals = [
            1, 0, 0, 0,
            1, 0, 0, 1,
            0, 0, 0, 1,
            0, 0, 0, 0,
        ];
        let inst = pixel_masks_to_instances(&LabelImage::from_gray(4, 4, &vals), &palette()).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].class_id, inst[1].class_id);
        assert_ne!(inst[0].object_id, inst[1].object_id);
    }

    #[test]
    fn all_background() {
        let inst =
            pixel_masks_to_instances(&LabelImage::from_gray(3, 3, &[0; 9]), &palette()).unwrap();
        assert!(inst.is_empty());
    }

    #[test]
    fn unknown_value_listed() {
        let err = pixel_masks_to_instances(&LabelImage::from_gray(2, 1, &[0, 9]), &palette())
            .unwrap_err();
        match err {
            DatasetError::UnknownPixelValues(v) => assert_eq!(v, vec!["9".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn identity_follows_overlap() {
        // frame 0: blob A at left, blob B at right (same class)
        // frame 1: both shift right by one pixel, order in scan unchanged
        let seq = VideoSequence::blank("v", 2, 6, 2);
        #[rustfmt::skip]
        let f0 = [1, 1, 0, 1, 1, 0,
                  1, 1, 0, 1, 1, 0];
        #[rustfmt::skip]
        let f1 = [0, 1, 1, 0, 1, 1,
                  0, 1, 1, 0, 1, 1];
        let labels = vec![
            Some(LabelImage::from_gray(6, 2, &f0)),
            Some(LabelImage::from_gray(6, 2, &f1)),
        ];
        let v = pixel_mask_video(seq, &labels, &palette()).unwrap();
        let a0 = &v.frame_annotations(0);
        let a1 = &v.frame_annotations(1);
        let left0 = a0.iter().find(|a| a.bbox.x_min == 0).unwrap().object_id;
        let left1 = a1.iter().find(|a| a.bbox.x_min == 1).unwrap().object_id;
        assert_eq!(left0, left1);
        let right0 = a0.iter().find(|a| a.bbox.x_min == 3).unwrap().object_id;
        let right1 = a1.iter().find(|a| a.bbox.x_min == 4).unwrap().object_id;
        assert_eq!(right0, right1);
    }

    #[test]
    fn disjoint_successor_gets_new_id() {
        let seq = VideoSequence::blank("v", 2, 4, 1);
        let labels = vec![
            Some(LabelImage::from_gray(4, 1, &[1, 0, 0, 0])),
            Some(LabelImage::from_gray(4, 1, &[0, 0, 0, 1])),
        ];
        let v = pixel_mask_video(seq, &labels, &palette()).unwrap();
        assert_ne!(
            v.frame_annotations(0)[0].object_id,
            v.frame_annotations(1)[0].object_id
        );
    }
}

//! Hyperparameter sweeps of automatic mask generation on the first frame of an
//! unlabeled video, an overlay gallery for visual inspection, and promotion of
//! a hand-picked configuration's masks to pseudo ground truth.
//!
//! The harness ranks nothing: it reports per-cell statistics that proxy mask
//! completeness (coverage), boundary quality (boundary/area ratio), and object
//! separation (max pairwise IoU), and leaves the choice to a person.

mod generator;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use generator::{
    fill_holes, remove_small_islands, AutoMask, AutoMaskGenerator, AutoSegConfig,
    ColorRegionGenerator,
};

use crate::dataset::{AnnotatedVideo, ClassId, DatasetError, GroundTruthKind, InstanceAnnotation, VideoSequence};

/// Class assigned to every pseudo ground-truth instance.
pub const PSEUDO_CLASS_ID: ClassId = 0;
pub const PSEUDO_CLASS_NAME: &str = "auto";

#[derive(Debug, thiserror::Error)]
pub enum AutosegError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("no sweep cell {0}")]
    UnknownCell(usize),
    #[error("sweep cell {index} failed: {message}")]
    FailedCell { index: usize, message: String },
    #[error("sweep cell {0} produced no candidates; the video cannot be evaluated")]
    NoCandidates(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("gallery I/O at {path}: {message}")]
    Gallery { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub candidate_count: usize,
    /// Fraction of frame pixels covered by the union of candidates.
    pub coverage_fraction: f64,
    /// Mean over candidates of boundary pixels per foreground pixel.
    pub mean_boundary_area_ratio: f64,
    /// Largest IoU between any two candidates; 0 with fewer than two.
    pub max_pairwise_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        stats: CellStats,
        candidates: Vec<AutoMask>,
    },
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub config: AutoSegConfig,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub video_id: String,
    pub frame_index: usize,
    pub generator: String,
    pub cells: Vec<SweepCell>,
}

pub fn cell_stats(candidates: &[AutoMask], width: u32, height: u32) -> CellStats {
    let n = f64::from(width) * f64::from(height);
    let mut union = crate::mask::BinaryMask::empty(width, height);
    let mut ratio_sum = 0.0;
    for c in candidates {
        union = union.union(&c.mask).expect("candidates match frame size");
        let area = c.mask.area();
        if area > 0 {
            ratio_sum += c.mask.boundary_length() as f64 / area as f64;
        }
    }
    let mut max_iou = 0.0f64;
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            max_iou = max_iou.max(a.mask.iou(&b.mask).unwrap_or(0.0));
        }
    }
    CellStats {
        candidate_count: candidates.len(),
        coverage_fraction: if n > 0.0 { union.area() as f64 / n } else { 0.0 },
        mean_boundary_area_ratio: if candidates.is_empty() {
            0.0
        } else {
            ratio_sum / candidates.len() as f64
        },
        max_pairwise_iou: max_iou,
    }
}

/// Run `generator` once per grid entry on one frame. A failing configuration
/// marks its cell failed; the sweep carries on.
pub fn sweep(
    video_id: &str,
    frame_index: usize,
    image: &RgbImage,
    grid: &[AutoSegConfig],
    generator: &mut dyn AutoMaskGenerator,
) -> Result<SweepReport, AutosegError> {
    if grid.is_empty() {
        return Err(AutosegError::EmptyGrid);
    }
    let (w, h) = image.dimensions();
    let cells = grid
        .iter()
        .enumerate()
        .map(|(index, config)| {
            let outcome = match generator.generate(image, config) {
                Ok(candidates) => {
                    let bad = candidates.iter().find(|c| c.mask.dims() != (w, h));
                    match bad {
                        Some(c) => CellOutcome::Failed {
                            message: format!("candidate mask is {:?}, frame is {:?}", c.mask.dims(), (w, h)),
                        },
                        None => CellOutcome::Ok {
                            stats: cell_stats(&candidates, w, h),
                            candidates,
                        },
                    }
                }
                Err(e) => {
                    log::warn!("sweep cell {index} failed: {e}");
                    CellOutcome::Failed {
                        message: e.to_string(),
                    }
                }
            };
            SweepCell {
                index,
                config: config.clone(),
                outcome,
            }
        })
        .collect();
    Ok(SweepReport {
        video_id: video_id.to_string(),
        frame_index,
        generator: generator.identity(),
        cells,
    })
}

/// Candidates of the chosen cell as annotations on the report's frame, with
/// object ids assigned by descending area (ties by first foreground pixel).
pub fn select_pseudo_ground_truth(
    report: &SweepReport,
    cell_index: usize,
) -> Result<Vec<InstanceAnnotation>, AutosegError> {
    let cell = report
        .cells
        .get(cell_index)
        .ok_or(AutosegError::UnknownCell(cell_index))?;
    let candidates = match &cell.outcome {
        CellOutcome::Failed { message } => {
            return Err(AutosegError::FailedCell {
                index: cell_index,
                message: message.clone(),
            })
        }
        CellOutcome::Ok { candidates, .. } => candidates,
    };
    if candidates.is_empty() {
        return Err(AutosegError::NoCandidates(cell_index));
    }
    let first_pixel = |m: &crate::mask::BinaryMask| m.bits().iter().position(|&b| b);
    let mut masks: Vec<_> = candidates.iter().map(|c| &c.mask).collect();
    masks.sort_by(|a, b| b.area().cmp(&a.area()).then(first_pixel(a).cmp(&first_pixel(b))));
    Ok(masks
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| InstanceAnnotation::new(report.frame_index, i as u32, PSEUDO_CLASS_ID, m.clone()))
        .collect())
}

/// Bind pseudo annotations to their video. The result is tagged
/// [`GroundTruthKind::Pseudo`], which every downstream report carries.
pub fn pseudo_ground_truth_video(
    sequence: VideoSequence,
    annotations: Vec<InstanceAnnotation>,
) -> Result<AnnotatedVideo, AutosegError> {
    let mut by_frame: BTreeMap<usize, Vec<InstanceAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_frame.entry(a.frame_index).or_default().push(a);
    }
    let names = BTreeMap::from([(PSEUDO_CLASS_ID, PSEUDO_CLASS_NAME.to_string())]);
    Ok(AnnotatedVideo::new(sequence, by_frame, names)?.with_ground_truth_kind(GroundTruthKind::Pseudo))
}

const OVERLAY_COLORS: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Frame with candidates blended at 50% and their seed points in white.
pub fn render_overlay(image: &RgbImage, candidates: &[AutoMask]) -> RgbImage {
    let mut out = image.clone();
    for (i, c) in candidates.iter().enumerate() {
        let col = OVERLAY_COLORS[i % OVERLAY_COLORS.len()];
        for (x, y) in c.mask.foreground() {
            let p = out.get_pixel_mut(x, y);
            for (v, c) in p.0.iter_mut().zip(col) {
                *v = ((u16::from(*v) + u16::from(c)) / 2) as u8;
            }
        }
    }
    for c in candidates {
        for &(x, y) in &c.points {
            out.put_pixel(x, y, Rgb([255, 255, 255]));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub cell: usize,
    pub config_key: String,
    pub config: AutoSegConfig,
    pub image: Option<String>,
    pub stats: Option<CellStats>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalleryIndex {
    pub video_id: String,
    pub frame_index: usize,
    pub generator: String,
    /// What each statistic stands in for during manual review.
    pub criteria: BTreeMap<String, String>,
    pub entries: Vec<GalleryEntry>,
}

fn gallery_err(path: &Path, e: impl ToString) -> AutosegError {
    AutosegError::Gallery {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Write one overlay PNG per successful cell plus `index.json`.
pub fn write_gallery(
    report: &SweepReport,
    image: &RgbImage,
    dir: &Path,
) -> Result<GalleryIndex, AutosegError> {
    std::fs::create_dir_all(dir).map_err(|e| gallery_err(dir, e))?;
    let mut entries = Vec::new();
    for cell in &report.cells {
        let mut entry = GalleryEntry {
            cell: cell.index,
            config_key: cell.config.key(),
            config: cell.config.clone(),
            image: None,
            stats: None,
            failure: None,
        };
        match &cell.outcome {
            CellOutcome::Ok { stats, candidates } => {
                let name = format!("cell_{:03}.png", cell.index);
                let path = dir.join(&name);
                render_overlay(image, candidates)
                    .save(&path)
                    .map_err(|e| gallery_err(&path, e))?;
                entry.image = Some(name);
                entry.stats = Some(stats.clone());
            }
            CellOutcome::Failed { message } => entry.failure = Some(message.clone()),
        }
        entries.push(entry);
    }
    let criteria = BTreeMap::from([
        ("coverage_fraction".to_string(), "mask completeness".to_string()),
        ("mean_boundary_area_ratio".to_string(), "boundary accuracy".to_string()),
        (
            "max_pairwise_iou".to_string(),
            "separation of close or overlapping objects".to_string(),
        ),
    ]);
    let index = GalleryIndex {
        video_id: report.video_id.clone(),
        frame_index: report.frame_index,
        generator: report.generator.clone(),
        criteria,
        entries,
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).map_err(|e| gallery_err(&path, e))?;
    std::fs::write(&path, text).map_err(|e| gallery_err(&path, e))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BBox, BinaryMask};
    use crate::session::SessionError;

    struct Fixed(Vec<AutoMask>);

    impl AutoMaskGenerator for Fixed {
        fn identity(&self) -> String {
            "fixed".into()
        }
        fn generate(&mut self, _: &RgbImage, c: &AutoSegConfig) -> Result<Vec<AutoMask>, SessionError> {
            if c.points_per_side == 99 {
                return Err(SessionError::Runtime("boom".into()));
            }
            Ok(self.0.clone())
        }
    }

    fn cand(x0: u32, x1: u32) -> AutoMask {
        AutoMask {
            mask: BinaryMask::rect(10, 4, BBox { x_min: x0, y_min: 0, x_max: x1, y_max: 3 }),
            points: vec![(x0, 0)],
            predicted_quality: 1.0,
            stability_score: 1.0,
        }
    }

    #[test]
    fn sweep_isolates_failures_and_ids_follow_area() {
        let img = RgbImage::new(10, 4);
        let mut g = Fixed(vec![cand(0, 0), cand(2, 5), cand(7, 8)]);
        let bad = AutoSegConfig {
            points_per_side: 99,
            ..AutoSegConfig::default()
        };
        let grid = [AutoSegConfig::default(), bad, AutoSegConfig::default()];
        let r = sweep("v", 0, &img, &grid, &mut g).unwrap();
        assert_eq!(r.cells.len(), 3);
        assert!(matches!(r.cells[1].outcome, CellOutcome::Failed { .. }));
        assert_eq!(r.cells[0].outcome, r.cells[2].outcome);
        assert!(matches!(
            select_pseudo_ground_truth(&r, 1),
            Err(AutosegError::FailedCell { .. })
        ));
        let anns = select_pseudo_ground_truth(&r, 0).unwrap();
        let areas: Vec<u64> = anns.iter().map(|a| a.mask.area()).collect();
        assert_eq!(areas, vec![16, 8, 4]);
        assert_eq!(anns.iter().map(|a| a.object_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(matches!(sweep("v", 0, &img, &[], &mut g), Err(AutosegError::EmptyGrid)));
    }

    #[test]
    fn empty_selection_is_an_error() {
        let img = RgbImage::new(10, 4);
        let r = sweep("v", 0, &img, &[AutoSegConfig::default()], &mut Fixed(vec![])).unwrap();
        assert!(matches!(select_pseudo_ground_truth(&r, 0), Err(AutosegError::NoCandidates(0))));
    }

    #[test]
    fn stats() {
        let s = cell_stats(&[cand(0, 4), cand(3, 7)], 10, 4);
        assert_eq!(s.candidate_count, 2);
        assert!((s.coverage_fraction - 0.8).abs() < 1e-12);
        assert!((s.max_pairwise_iou - 8.0 / 32.0).abs() < 1e-12);
    }
}

//! Automatic mask generation: the configuration knobs, the candidate type, and
//! a deterministic reference generator that works on raw pixels.

use std::collections::VecDeque;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::mask::BinaryMask;
use crate::session::SessionError;

/// Knobs of grid-prompted automatic mask generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoSegConfig {
    pub points_per_side: u32,
    pub mask_quality_threshold: f64,
    pub stability_score_threshold: f64,
    pub stability_score_offset: f64,
    pub nms_threshold: f64,
    pub min_mask_region_area: u64,
    pub crop_layers: u32,
    pub mask_refinement: bool,
}

impl Default for AutoSegConfig {
    fn default() -> Self {
        Self {
            points_per_side: 32,
            mask_quality_threshold: 0.88,
            stability_score_threshold: 0.95,
            stability_score_offset: 1.0,
            nms_threshold: 0.7,
            min_mask_region_area: 0,
            crop_layers: 0,
            mask_refinement: false,
        }
    }
}

impl AutoSegConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.points_per_side == 0 {
            return Err("points_per_side must be at least 1".into());
        }
        for (name, v) in [
            ("mask_quality_threshold", self.mask_quality_threshold),
            ("stability_score_threshold", self.stability_score_threshold),
            ("nms_threshold", self.nms_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !self.stability_score_offset.is_finite() || self.stability_score_offset < 0.0 {
            return Err("stability_score_offset must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Compact human-readable identifier used as a sweep cell id.
    pub fn key(&self) -> String {
        format!(
            "pps{}-q{}-s{}-o{}-nms{}-min{}-crop{}{}",
            self.points_per_side,
            self.mask_quality_threshold,
            self.stability_score_threshold,
            self.stability_score_offset,
            self.nms_threshold,
            self.min_mask_region_area,
            self.crop_layers,
            if self.mask_refinement { "-refine" } else { "" }
        )
    }
}

/// One generated candidate and the grid points that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoMask {
    pub mask: BinaryMask,
    pub points: Vec<(u32, u32)>,
    pub predicted_quality: f64,
    pub stability_score: f64,
}

pub trait AutoMaskGenerator {
    fn identity(&self) -> String;

    /// Candidates for one frame. Zero candidates is a valid answer.
    fn generate(
        &mut self,
        image: &RgbImage,
        config: &AutoSegConfig,
    ) -> Result<Vec<AutoMask>, SessionError>;
}

/// Grid-seeded tolerance flood fill.
///
/// Each grid point grows a 4-connected region of pixels whose color lies
/// within `tolerance` (max channel difference) of the seed color. Quality is
/// the region's color homogeneity; stability is the area ratio between floods
/// at `tolerance ∓ offset·levels_per_offset`. Filtering then mirrors the usual
/// pipeline: score thresholds, optional hole filling, NMS, and removal of
/// islands smaller than the minimum area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorRegionGenerator {
    pub tolerance: u8,
    pub levels_per_offset: f64,
}

impl Default for ColorRegionGenerator {
    fn default() -> Self {
        Self {
            tolerance: 12,
            levels_per_offset: 4.0,
        }
    }
}

#[derive(Clone, Copy)]
struct Crop {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

fn color_distance(a: &image::Rgb<u8>, b: &image::Rgb<u8>) -> u8 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(p, q)| p.abs_diff(*q))
        .max()
        .unwrap_or(0)
}

fn flood(image: &RgbImage, crop: Crop, seed: (u32, u32), tolerance: i32) -> BinaryMask {
    let (w, h) = image.dimensions();
    let mut mask = BinaryMask::empty(w, h);
    if tolerance < 0 {
        return mask;
    }
    let seed_color = *image.get_pixel(seed.0, seed.1);
    let mut queue = VecDeque::from([seed]);
    mask.set(seed.0, seed.1, true);
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx < crop.x0 || nx >= crop.x1 || ny < crop.y0 || ny >= crop.y1 || mask.get(nx, ny) {
                continue;
            }
            if i32::from(color_distance(image.get_pixel(nx, ny), &seed_color)) <= tolerance {
                mask.set(nx, ny, true);
                queue.push_back((nx, ny));
            }
        }
    }
    mask
}

/// Foreground plus every background component that does not touch the frame edge.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let bg = mask.complement();
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    for region in bg.regions() {
        let touches_edge = region
            .iter()
            .any(|&(x, y)| x == 0 || y == 0 || x + 1 == w || y + 1 == h);
        if !touches_edge {
            for (x, y) in region {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Drop connected components smaller than `min_area`.
pub fn remove_small_islands(mask: &BinaryMask, min_area: u64) -> BinaryMask {
    if min_area <= 1 {
        return mask.clone();
    }
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    for region in mask.regions() {
        if region.len() as u64 >= min_area {
            for (x, y) in region {
                out.set(x, y, true);
            }
        }
    }
    out
}

fn crops(w: u32, h: u32, layers: u32) -> Vec<(Crop, bool)> {
    let mut out = Vec::new();
    for layer in 0..=layers {
        let n = 1u32 << layer.min(8);
        for j in 0..n {
            for i in 0..n {
                let c = Crop {
                    x0: w * i / n,
                    y0: h * j / n,
                    x1: w * (i + 1) / n,
                    y1: h * (j + 1) / n,
                };
                if c.x1 > c.x0 && c.y1 > c.y0 {
                    out.push((c, layer > 0));
                }
            }
        }
    }
    out
}

fn touches_inner_edge(mask: &BinaryMask, crop: Crop, w: u32, h: u32) -> bool {
    mask.foreground().any(|(x, y)| {
        (x == crop.x0 && crop.x0 > 0)
            || (y == crop.y0 && crop.y0 > 0)
            || (x + 1 == crop.x1 && crop.x1 < w)
            || (y + 1 == crop.y1 && crop.y1 < h)
    })
}

impl ColorRegionGenerator {
    fn quality(&self, image: &RgbImage, mask: &BinaryMask, seed: (u32, u32)) -> f64 {
        let seed_color = image.get_pixel(seed.0, seed.1);
        let (sum, n) = mask.foreground().fold((0u64, 0u64), |(s, n), (x, y)| {
            (s + u64::from(color_distance(image.get_pixel(x, y), seed_color)), n + 1)
        });
        if n == 0 {
            return 0.0;
        }
        1.0 - (sum as f64 / n as f64) / (f64::from(self.tolerance) + 1.0)
    }
}

impl AutoMaskGenerator for ColorRegionGenerator {
    fn identity(&self) -> String {
        format!("color-region(tol={},lpo={})", self.tolerance, self.levels_per_offset)
    }

    fn generate(
        &mut self,
        image: &RgbImage,
        config: &AutoSegConfig,
    ) -> Result<Vec<AutoMask>, SessionError> {
        config.validate().map_err(SessionError::Runtime)?;
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Ok(Vec::new());
        }
        let tol = i32::from(self.tolerance);
        let delta = (config.stability_score_offset * self.levels_per_offset).round() as i32;
        let n = config.points_per_side;

        let mut candidates: Vec<(AutoMask, image::Rgb<u8>)> = Vec::new();
        for (crop, inner) in crops(w, h, config.crop_layers) {
            let (cw, ch) = (crop.x1 - crop.x0, crop.y1 - crop.y0);
            for j in 0..n {
                for i in 0..n {
                    // cell centres of an n x n grid over the crop
                    let x = crop.x0 + ((2 * i + 1) * cw / (2 * n)).min(cw - 1);
                    let y = crop.y0 + ((2 * j + 1) * ch / (2 * n)).min(ch - 1);
                    let color = *image.get_pixel(x, y);
                    // A seed of identical color inside an earlier region grows the same region.
                    if let Some((c, _)) = candidates
                        .iter_mut()
                        .find(|(c, col)| *col == color && c.mask.get(x, y))
                    {
                        if !c.points.contains(&(x, y)) {
                            c.points.push((x, y));
                        }
                        continue;
                    }
                    let mask = flood(image, crop, (x, y), tol);
                    if inner && touches_inner_edge(&mask, crop, w, h) {
                        continue;
                    }
                    let tight = flood(image, crop, (x, y), tol - delta).area();
                    let loose = flood(image, crop, (x, y), tol + delta).area();
                    let stability = if loose == 0 { 0.0 } else { tight as f64 / loose as f64 };
                    let quality = self.quality(image, &mask, (x, y));
                    candidates.push((
                        AutoMask {
                            mask,
                            points: vec![(x, y)],
                            predicted_quality: quality,
                            stability_score: stability,
                        },
                        color,
                    ));
                }
            }
        }

        let mut kept: Vec<AutoMask> = candidates
            .into_iter()
            .map(|(c, _)| c)
            .filter(|c| {
                c.predicted_quality >= config.mask_quality_threshold
                    && c.stability_score >= config.stability_score_threshold
            })
            .map(|mut c| {
                if config.mask_refinement {
                    c.mask = fill_holes(&c.mask);
                }
                c
            })
            .collect();

        // Stable sort keeps generation order among equal scores.
        kept.sort_by(|a, b| {
            b.predicted_quality
                .total_cmp(&a.predicted_quality)
                .then(b.mask.area().cmp(&a.mask.area()))
        });
        let mut survivors: Vec<AutoMask> = Vec::new();
        for c in kept {
            let duplicate = survivors.iter_mut().find(|s| {
                s.mask.iou(&c.mask).unwrap_or(0.0) > config.nms_threshold
            });
            match duplicate {
                Some(s) if s.mask == c.mask => s.points.extend(c.points),
                Some(_) => {}
                None => survivors.push(c),
            }
        }
        Ok(survivors
            .into_iter()
            .filter_map(|mut c| {
                c.mask = remove_small_islands(&c.mask, config.min_mask_region_area);
                (c.mask.area() > 0).then_some(c)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> RgbImage {
        RgbImage::from_fn(48, 32, |x, y| {
            if (4..14).contains(&x) && (4..12).contains(&y) {
                image::Rgb([220, 200, 40])
            } else if (30..44).contains(&x) && (16..28).contains(&y) {
                image::Rgb([40, 160, 220])
            } else if (20..22).contains(&x) && (2..4).contains(&y) {
                image::Rgb([250, 250, 250])
            } else {
                image::Rgb([120, 50, 50])
            }
        })
    }

    #[test]
    fn blank_frame_yields_at_most_background() {
        let img = RgbImage::from_pixel(20, 20, image::Rgb([90, 90, 90]));
        let out = ColorRegionGenerator::default()
            .generate(&img, &AutoSegConfig::default())
            .unwrap();
        assert!(out.len() <= 1);
    }

    #[test]
    fn finds_flat_objects() {
        let cfg = AutoSegConfig {
            points_per_side: 16,
            ..AutoSegConfig::default()
        };
        let out = ColorRegionGenerator::default().generate(&scene(), &cfg).unwrap();
        let areas: Vec<u64> = out.iter().map(|c| c.mask.area()).collect();
        assert!(areas.contains(&80), "{areas:?}");
        assert!(areas.contains(&168), "{areas:?}");
        for c in &out {
            assert!(c.points.iter().all(|&(x, y)| c.mask.get(x, y)));
        }
    }

    #[test]
    fn min_area_filters_monotonically() {
        let mut g = ColorRegionGenerator::default();
        let mut last = usize::MAX;
        for min in [0, 10, 100, 200, 2000] {
            let cfg = AutoSegConfig {
                points_per_side: 16,
                min_mask_region_area: min,
                ..AutoSegConfig::default()
            };
            let n = g.generate(&scene(), &cfg).unwrap().len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn hole_filling() {
        let ring = BinaryMask::from_fn(5, 5, |x, y| x == 1 || x == 3 || y == 1 || y == 3)
            .intersection(&BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y)))
            .unwrap();
        assert_eq!(fill_holes(&ring).area(), 9);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = AutoSegConfig {
            nms_threshold: 1.5,
            ..AutoSegConfig::default()
        };
        assert!(ColorRegionGenerator::default().generate(&scene(), &cfg).is_err());
    }
}

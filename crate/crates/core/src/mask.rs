//! Binary masks and the geometry every other module is built on.
//!
//! A [`BinaryMask`] stores a row-major bitmap. The run-length form ([`Rle`])
//! follows the COCO convention: column-major scan, alternating counts that
//! begin with a (possibly zero-length) background run. Both the uncompressed
//! count list and the compact LEB128-like string used by `pycocotools` are
//! supported, as is the `pycocotools` polygon rasterizer.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("run-length counts sum to {got}, expected {expected} ({width}x{height})")]
    RunLengthMismatch {
        width: u32,
        height: u32,
        expected: u64,
        got: u64,
    },
    #[error("bitmap has {got} cells, expected {expected}")]
    BitmapLength { expected: usize, got: usize },
    #[error("invalid compressed RLE string: {0}")]
    BadRleString(String),
}

/// Inclusive, tight, axis-aligned pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

/// Column-major run-length encoding, starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn foreground_area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    fn check(&self) -> Result<(), MaskError> {
        let expected = self.width as u64 * self.height as u64;
        let got: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if got != expected {
            return Err(MaskError::RunLengthMismatch {
                width: self.width,
                height: self.height,
                expected,
                got,
            });
        }
        Ok(())
    }

    /// Compact `pycocotools` string form (delta-coded, 6-bit chunks offset by 48).
    pub fn to_coco_string(&self) -> String {
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut chunk = (x & 0x1f) as u8;
                x >>= 5;
                let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    chunk |= 0x20;
                }
                out.push((chunk + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    pub fn from_coco_string(s: &str, width: u32, height: u32) -> Result<Self, MaskError> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0usize;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                if p >= bytes.len() {
                    return Err(MaskError::BadRleString("truncated run".into()));
                }
                let c = bytes[p] as i64 - 48;
                if !(0..64).contains(&c) {
                    return Err(MaskError::BadRleString(format!(
                        "byte {:?} at offset {p}",
                        bytes[p] as char
                    )));
                }
                if k >= 12 {
                    return Err(MaskError::BadRleString("run too long".into()));
                }
                x |= (c & 0x1f) << (5 * k);
                let more = c & 0x20 != 0;
                p += 1;
                k += 1;
                if !more {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let run = u32::try_from(x)
                .map_err(|_| MaskError::BadRleString(format!("run value {x} out of range")))?;
            counts.push(run);
        }
        let rle = Rle {
            width,
            height,
            counts,
        };
        rle.check()?;
        Ok(rle)
    }
}

/// A rectangular binary pixel grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, area={})",
            self.width,
            self.height,
            self.area()
        )
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Row-major bitmap.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BitmapLength {
                expected,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: &[(u32, u32)]) -> Self {
        let mut m = Self::empty(width, height);
        for &(x, y) in pixels {
            m.set(x, y, true);
        }
        m
    }

    pub fn rect(width: u32, height: u32, bbox: BBox) -> Self {
        Self::from_fn(width, height, |x, y| bbox.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Foreground pixels in row-major scan order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut out: Option<BBox> = None;
        for (x, y) in self.foreground() {
            out = Some(match out {
                None => BBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => BBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
        out
    }

    fn check_dims(&self, other: &Self) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self, MaskError> {
        self.check_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersection_area(&self, other: &Self) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count() as u64)
    }

    /// Intersection over union; two empty masks score 1.0.
    pub fn iou(&self, other: &Self) -> Result<f64, MaskError> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn to_rle(&self) -> Rle {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = self.bits[y * w + x];
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    pub fn from_rle(rle: &Rle) -> Result<Self, MaskError> {
        rle.check()?;
        let (w, h) = (rle.width as usize, rle.height as usize);
        let mut bits = vec![false; w * h];
        let mut idx = 0usize;
        let mut value = false;
        for &c in &rle.counts {
            if value {
                for k in idx..idx + c as usize {
                    let (x, y) = (k / h, k % h);
                    bits[y * w + x] = true;
                }
            }
            idx += c as usize;
            value = !value;
        }
        Ok(Self {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }

    /// Rasterize one or more polygons (flat `[x0, y0, x1, y1, ...]` lists) and union them.
    pub fn from_polygons(polygons: &[Vec<f64>], width: u32, height: u32) -> Self {
        let mut out = Self::empty(width, height);
        for poly in polygons {
            let rle = polygon_to_rle(poly, width, height);
            // polygon_to_rle always produces counts summing to w*h
            let m = Self::from_rle(&rle).unwrap_or_else(|_| Self::empty(width, height));
            for (o, b) in out.bits.iter_mut().zip(m.bits) {
                *o |= b;
            }
        }
        out
    }

    /// 4-connected foreground regions, each as its pixel list. Regions are ordered
    /// by their first pixel in row-major scan order; pixels within a region are
    /// in row-major order too.
    pub fn regions(&self) -> Vec<Vec<(u32, u32)>> {
        let (labels, count) = self.label_components();
        let mut regions = vec![Vec::new(); count];
        let w = self.width;
        for (i, &l) in labels.iter().enumerate() {
            if l > 0 {
                regions[l as usize - 1].push(((i as u32) % w, (i as u32) / w));
            }
        }
        regions
    }

    pub fn region_masks(&self) -> Vec<BinaryMask> {
        self.regions()
            .iter()
            .map(|px| Self::from_pixels(self.width, self.height, px))
            .collect()
    }

    /// Row-major label image (0 = background, 1.. = component in scan order)
    /// and the number of components.
    pub fn label_components(&self) -> (Vec<u32>, usize) {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut labels = vec![0u32; w * h];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if !self.bits[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if self.bits[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
        }
        (labels, next as usize)
    }

    /// Erosion with a (2r+1)x(2r+1) square structuring element. Pixels outside
    /// the frame count as background.
    pub fn erode(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        // Separable: a pixel survives iff every pixel in its row window and then
        // column window is foreground.
        let horiz = Self::from_fn(self.width, self.height, |x, y| {
            (-r..=r).all(|d| self.get_signed(x as i64 + d, y as i64))
        });
        Self::from_fn(self.width, self.height, |x, y| {
            (-r..=r).all(|d| horiz.get_signed(x as i64, y as i64 + d))
        })
    }

    /// Shift by (dx, dy); pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get_signed(x as i64 - dx, y as i64 - dy)
        })
    }

    /// Number of foreground pixels with at least one 4-neighbour outside the mask
    /// (frame edge counts as outside).
    pub fn boundary_length(&self) -> u64 {
        self.foreground()
            .filter(|&(x, y)| {
                let (x, y) = (x as i64, y as i64);
                !self.get_signed(x - 1, y)
                    || !self.get_signed(x + 1, y)
                    || !self.get_signed(x, y - 1)
                    || !self.get_signed(x, y + 1)
            })
            .count() as u64
    }

    /// Nearest foreground pixel by Euclidean distance, ties broken by scan order.
    pub fn nearest_foreground(&self, x: i64, y: i64) -> Option<(u32, u32)> {
        self.foreground().min_by_key(|&(fx, fy)| {
            let (ddx, ddy) = (fx as i64 - x, fy as i64 - y);
            ddx * ddx + ddy * ddy
        })
    }
}

/// Serialized form mirrors a COCO segmentation: `{"size": [h, w], "counts": [...]}`.
#[derive(Serialize, Deserialize)]
struct RleDoc {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rle = self.to_rle();
        RleDoc {
            size: [rle.height, rle.width],
            counts: rle.counts,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = RleDoc::deserialize(deserializer)?;
        let rle = Rle {
            width: doc.size[1],
            height: doc.size[0],
            counts: doc.counts,
        };
        BinaryMask::from_rle(&rle).map_err(serde::de::Error::custom)
    }
}

/// Port of `rleFrPoly` from the COCO mask API: 5x upsampled edge walk, y-boundary
/// extraction, then differential run encoding.
pub fn polygon_to_rle(xy: &[f64], width: u32, height: u32) -> Rle {
    let (h, w) = (height as i64, width as i64);
    let k = xy.len() / 2;
    if k < 3 || h == 0 || w == 0 {
        return Rle {
            width,
            height,
            counts: vec![height * width],
        };
    }
    let scale = 5.0f64;
    let mut xs: Vec<i64> = (0..k).map(|j| (scale * xy[2 * j] + 0.5) as i64).collect();
    let mut ys: Vec<i64> = (0..k).map(|j| (scale * xy[2 * j + 1] + 0.5) as i64).collect();
    xs.push(xs[0]);
    ys.push(ys[0]);

    let mut u: Vec<i64> = Vec::new();
    let mut v: Vec<i64> = Vec::new();
    for j in 0..k {
        let (mut x0, mut x1, mut y0, mut y1) = (xs[j], xs[j + 1], ys[j], ys[j + 1]);
        let dx = (x1 - x0).abs();
        let dy = (y0 - y1).abs();
        let flip = (dx >= dy && x0 > x1) || (dx < dy && y0 > y1);
        if flip {
            std::mem::swap(&mut x0, &mut x1);
            std::mem::swap(&mut y0, &mut y1);
        }
        if dx >= dy {
            let s = if dx == 0 { 0.0 } else { (y1 - y0) as f64 / dx as f64 };
            for d in 0..=dx {
                let t = if flip { dx - d } else { d };
                u.push(t + x0);
                v.push((y0 as f64 + s * t as f64 + 0.5) as i64);
            }
        } else {
            let s = (x1 - x0) as f64 / dy as f64;
            for d in 0..=dy {
                let t = if flip { dy - d } else { d };
                v.push(t + y0);
                u.push((x0 as f64 + s * t as f64 + 0.5) as i64);
            }
        }
    }

    let mut bx: Vec<i64> = Vec::new();
    let mut by: Vec<i64> = Vec::new();
    for j in 1..u.len() {
        if u[j] == u[j - 1] {
            continue;
        }
        let xd = if u[j] < u[j - 1] { u[j] } else { u[j] - 1 } as f64;
        let xd = (xd + 0.5) / scale - 0.5;
        if xd.floor() != xd || xd < 0.0 || xd > (w - 1) as f64 {
            continue;
        }
        let yd = if v[j] < v[j - 1] { v[j] } else { v[j - 1] } as f64;
        let yd = ((yd + 0.5) / scale - 0.5).clamp(0.0, h as f64).ceil();
        bx.push(xd as i64);
        by.push(yd as i64);
    }

    let mut a: Vec<i64> = bx.iter().zip(&by).map(|(&x, &y)| x * h + y).collect();
    a.push(h * w);
    a.sort_unstable();
    let mut prev = 0i64;
    for val in a.iter_mut() {
        let t = *val;
        *val -= prev;
        prev = t;
    }
    let mut counts: Vec<i64> = Vec::with_capacity(a.len());
    let mut j = 0usize;
    counts.push(a[j]);
    j += 1;
    while j < a.len() {
        if a[j] > 0 {
            counts.push(a[j]);
            j += 1;
        } else {
            j += 1;
            if j < a.len() {
                *counts.last_mut().expect("non-empty") += a[j];
                j += 1;
            }
        }
    }
    Rle {
        width,
        height,
        counts: counts.into_iter().map(|c| c as u32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_hand_written_runs() {
        // 4x4, 5 background, 3 foreground, 8 background (column-major)
        let rle = Rle {
            width: 4,
            height: 4,
            counts: vec![5, 3, 8],
        };
        let m = BinaryMask::from_rle(&rle).unwrap();
        assert_eq!(m.area(), 3);
        // column-major indices 5,6,7 -> column 1, rows 1..=3
        assert!(m.get(1, 1) && m.get(1, 2) && m.get(1, 3));
        assert_eq!(m.to_rle(), rle);
    }

    #[test]
    fn rle_sum_mismatch_rejected() {
        let rle = Rle {
            width: 2,
            height: 2,
            counts: vec![1, 1],
        };
        assert!(matches!(
            BinaryMask::from_rle(&rle),
            Err(MaskError::RunLengthMismatch { .. })
        ));
    }

    #[test]
    fn leading_foreground_gets_zero_background_run() {
        let m = BinaryMask::full(2, 2);
        assert_eq!(m.to_rle().counts, vec![0, 4]);
    }

    #[test]
    fn coco_string_known_value() {
        // pycocotools encodes counts [0, 4] on a 2x2 as "04"
        let rle = BinaryMask::full(2, 2).to_rle();
        assert_eq!(rle.to_coco_string(), "04");
        let back = Rle::from_coco_string("04", 2, 2).unwrap();
        assert_eq!(back, rle);
    }

    #[test]
    fn coco_string_rejects_garbage() {
        assert!(Rle::from_coco_string("\u{1}", 2, 2).is_err());
    }

    #[test]
    fn polygon_square_rasterizes_like_pycocotools() {
        // pycocotools frPyObjects([[1,1, 3,1, 3,3, 1,3]], 5, 5) covers x,y in {1,2}
        let m = BinaryMask::from_polygons(&[vec![1.0, 1.0, 3.0, 1.0, 3.0, 3.0, 1.0, 3.0]], 5, 5);
        let expected = BinaryMask::from_fn(5, 5, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
        assert_eq!(m, expected);
    }

    #[test]
    fn components_split_on_diagonal_contact() {
        let m = BinaryMask::from_pixels(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(m.regions().len(), 2);
    }

    #[test]
    fn erosion_of_square() {
        let m = BinaryMask::rect(
            10,
            10,
            BBox {
                x_min: 2,
                y_min: 2,
                x_max: 6,
                y_max: 6,
            },
        );
        let e = m.erode(1);
        assert_eq!(
            e.bbox().unwrap(),
            BBox {
                x_min: 3,
                y_min: 3,
                x_max: 5,
                y_max: 5
            }
        );
        assert!(m.erode(3).is_empty());
    }

    #[test]
    fn translate_clips() {
        let m = BinaryMask::from_pixels(4, 4, &[(3, 0), (0, 0)]);
        let t = m.translate(1, 0);
        assert_eq!(t.foreground().collect::<Vec<_>>(), vec![(1, 0)]);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..=64, 1u32..=64).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rle_round_trip(m in arb_mask()) {
            let rle = m.to_rle();
            prop_assert_eq!(rle.counts.iter().map(|&c| c as u64).sum::<u64>(), m.len() as u64);
            prop_assert_eq!(rle.foreground_area(), m.area());
            prop_assert_eq!(BinaryMask::from_rle(&rle).unwrap(), m.clone());
            let s = rle.to_coco_string();
            prop_assert_eq!(Rle::from_coco_string(&s, m.width(), m.height()).unwrap(), rle);
        }

        #[test]
        fn bbox_is_tight(m in arb_mask()) {
            if let Some(b) = m.bbox() {
                prop_assert!(m.foreground().all(|(x, y)| b.contains(x, y)));
                prop_assert!(m.foreground().any(|(x, _)| x == b.x_min));
                prop_assert!(m.foreground().any(|(x, _)| x == b.x_max));
                prop_assert!(m.foreground().any(|(_, y)| y == b.y_min));
                prop_assert!(m.foreground().any(|(_, y)| y == b.y_max));
            } else {
                prop_assert!(m.is_empty());
            }
        }
    }
}

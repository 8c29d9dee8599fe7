//! Access to frame pixels, for consumers that need more than annotations.

use std::path::PathBuf;

use image::RgbImage;

use super::{DatasetError, VideoSequence};

pub trait FrameSource: Send + Sync {
    fn frame_rgb(&self, video: &VideoSequence, index: usize) -> Result<RgbImage, DatasetError>;

    /// Filesystem path behind a frame locator, for out-of-process readers.
    fn locate(&self, _locator: &str) -> Option<PathBuf> {
        None
    }
}

/// Frames stored as image files; locators are resolved against `root`.
#[derive(Debug, Clone)]
pub struct ImageFiles {
    pub root: PathBuf,
}

impl FrameSource for ImageFiles {
    fn locate(&self, locator: &str) -> Option<PathBuf> {
        Some(self.root.join(locator))
    }

    fn frame_rgb(&self, video: &VideoSequence, index: usize) -> Result<RgbImage, DatasetError> {
        let frame = video.frames().get(index).ok_or_else(|| {
            DatasetError::InvalidSequence(format!("{}: no frame {index}", video.video_id()))
        })?;
        let path = self.root.join(&frame.image_locator);
        let img = image::open(&path).map_err(|e| DatasetError::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if (img.width(), img.height()) != (frame.width, frame.height) {
            return Err(DatasetError::Image {
                path,
                message: format!(
                    "image is {}x{}, annotation says {}x{}",
                    img.width(),
                    img.height(),
                    frame.width,
                    frame.height
                ),
            });
        }
        Ok(img.to_rgb8())
    }
}

/// Rec. 601 luma scaled to [0, 1], row-major.
pub fn luma(image: &RgbImage) -> Vec<f32> {
    image
        .pixels()
        .map(|p| (0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2])) / 255.0)
        .collect()
}

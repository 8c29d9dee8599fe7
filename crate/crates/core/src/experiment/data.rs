//! Turning a [`DatasetSpec`] into videos plus a pixel source.

use std::path::Path;
use std::sync::Arc;

use super::config::{AdapterSpec, DatasetSpec};
use super::synthetic::{synthetic_videos, SyntheticFrames};
use super::ExperimentError;
use crate::dataset::{
    load_coco_file, load_label_image, load_palette, pixel_mask_video, sample_annotated_video, split_train_test,
    AnnotatedVideo, DatasetError, FrameRef, FrameSource, ImageFiles, SplitSpec, VideoSequence,
};

pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub videos: Vec<AnnotatedVideo>,
    pub frames: Arc<dyn FrameSource>,
}

impl std::fmt::Debug for LoadedDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedDataset")
            .field("name", &self.spec.name)
            .field("videos", &self.videos.len())
            .finish_non_exhaustive()
    }
}

fn dataset_err(name: &str, e: impl ToString) -> ExperimentError {
    ExperimentError::Dataset {
        dataset: name.to_string(),
        message: e.to_string(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    out.sort();
    Ok(out)
}

fn load_pixel_videos(root: &Path, palette: &Path, fps: f64) -> Result<Vec<AnnotatedVideo>, DatasetError> {
    let palette = load_palette(palette)?;
    let mut videos = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.join("labels").is_dir()) {
        let video_id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let label_files: Vec<_> = sorted_entries(&dir.join("labels"))?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        let mut labels = Vec::new();
        let mut frames = Vec::new();
        for (i, path) in label_files.iter().enumerate() {
            let label = load_label_image(path)?;
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            frames.push(FrameRef {
                index: i,
                source_index: i,
                image_locator: format!("{video_id}/images/{name}"),
                width: label.width,
                height: label.height,
            });
            labels.push(Some(label));
        }
        let seq = VideoSequence::new(&video_id, frames, fps, fps)?;
        videos.push(pixel_mask_video(seq, &labels, &palette)?);
    }
    Ok(videos)
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<LoadedDataset, ExperimentError> {
    let err = |e: DatasetError| dataset_err(&spec.name, e);
    let (mut videos, frames): (Vec<AnnotatedVideo>, Arc<dyn FrameSource>) = match &spec.adapter {
        AdapterSpec::Synthetic(s) => (synthetic_videos(s).map_err(err)?, Arc::new(SyntheticFrames)),
        AdapterSpec::Coco {
            annotations,
            image_root,
        } => {
            let ds = load_coco_file(annotations, image_root).map_err(err)?;
            if ds.grouping_inferred {
                log::warn!("{}: no video grouping in the document, treating it as one video", spec.name);
            }
            (
                ds.videos,
                Arc::new(ImageFiles {
                    root: image_root.clone(),
                }),
            )
        }
        AdapterSpec::Pixel { root, palette, fps } => (
            load_pixel_videos(root, palette, *fps).map_err(err)?,
            Arc::new(ImageFiles { root: root.clone() }),
        ),
    };
    if let Some(fps) = spec.sample_fps {
        videos = videos
            .iter()
            .map(|v| sample_annotated_video(v, fps))
            .collect::<Result<_, _>>()
            .map_err(err)?;
    }
    if videos.is_empty() {
        return Err(dataset_err(&spec.name, "no videos"));
    }
    Ok(LoadedDataset {
        spec: spec.clone(),
        videos,
        frames,
    })
}

impl LoadedDataset {
    /// Train and test sides: an explicit seeded split when given, else the
    /// official test list, else the dataset's own split.
    pub fn split(&self, seeded: Option<&SplitSpec>) -> Result<(Vec<AnnotatedVideo>, Vec<AnnotatedVideo>), ExperimentError> {
        if let (None, Some(test_ids)) = (seeded, &self.spec.test_videos) {
            if let Some(id) = test_ids.iter().find(|id| !self.videos.iter().any(|v| v.video_id() == *id)) {
                return Err(dataset_err(&self.spec.name, format!("test video {id:?} not in dataset")));
            }
            let (test, train) = self
                .videos
                .iter()
                .cloned()
                .partition(|v| test_ids.iter().any(|id| id == v.video_id()));
            return Ok((train, test));
        }
        let spec = seeded
            .or(self.spec.split.as_ref())
            .ok_or_else(|| dataset_err(&self.spec.name, "no official test videos and no split given"))?;
        let s = split_train_test(&self.videos, spec).map_err(|e| dataset_err(&self.spec.name, e))?;
        Ok((s.train, s.test))
    }

    /// Videos that runs are scored on: the test side when a split is
    /// declared, otherwise everything.
    pub fn evaluation_videos(&self) -> Result<Vec<AnnotatedVideo>, ExperimentError> {
        if self.spec.test_videos.is_some() || self.spec.split.is_some() {
            Ok(self.split(None)?.1)
        } else {
            Ok(self.videos.clone())
        }
    }

    /// `video` with locators rewritten to full paths where the frame source
    /// knows them, so an external runtime can open the files.
    pub fn located(&self, video: &VideoSequence) -> VideoSequence {
        let frames = video
            .frames()
            .iter()
            .map(|f| FrameRef {
                image_locator: self
                    .frames
                    .locate(&f.image_locator)
                    .map_or_else(|| f.image_locator.clone(), |p| p.display().to_string()),
                ..f.clone()
            })
            .collect();
        VideoSequence::new(video.video_id(), frames, video.source_fps(), video.sampled_fps())
            .expect("same frames as a valid sequence")
    }

    /// Luma of every frame of `video`.
    pub fn lumas(&self, video: &VideoSequence) -> Result<Vec<Vec<f32>>, ExperimentError> {
        (0..video.len())
            .map(|i| {
                self.frames
                    .frame_rgb(video, i)
                    .map(|img| crate::dataset::luma(&img))
                    .map_err(|e| dataset_err(&self.spec.name, e))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_locators_become_paths() {
        let seq = VideoSequence::blank("v", 2, 4, 4);
        let spec: DatasetSpec = toml::from_str("name = \"d\"\nadapter = { kind = \"synthetic\" }").unwrap();
        let mut data = load_dataset(&spec).unwrap();
        assert_eq!(data.located(&seq), seq);
        data.frames = Arc::new(ImageFiles { root: "/data".into() });
        let located = data.located(&seq);
        assert_eq!(located.frames()[1].image_locator, Path::new("/data").join(&seq.frames()[1].image_locator).display().to_string());
        assert_eq!(located.len(), 2);
    }
}

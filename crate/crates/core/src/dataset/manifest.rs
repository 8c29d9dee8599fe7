//! Normalized frame manifest: one JSON line per frame, for reproducibility.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotatedVideo, InstanceAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub image_locator: String,
    pub annotation_digest: String,
}

/// SHA-256 over the frame's (object id, class id, RLE counts) in object order.
/// An unannotated frame hashes the empty list.
pub fn annotation_digest(annotations: &[InstanceAnnotation]) -> String {
    let mut hasher = Sha256::new();
    for a in annotations {
        let rle = a.mask.to_rle();
        hasher.update(a.object_id.to_le_bytes());
        hasher.update(a.class_id.to_le_bytes());
        hasher.update(rle.width.to_le_bytes());
        hasher.update(rle.height.to_le_bytes());
        hasher.update((rle.counts.len() as u64).to_le_bytes());
        for c in &rle.counts {
            hasher.update(c.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

pub fn manifest_records(videos: &[AnnotatedVideo]) -> Vec<ManifestRecord> {
    videos
        .iter()
        .flat_map(|v| {
            v.sequence().frames().iter().map(move |f| ManifestRecord {
                video_id: v.video_id().to_string(),
                frame_index: f.index,
                image_locator: f.image_locator.clone(),
                annotation_digest: annotation_digest(v.frame_annotations(f.index)),
            })
        })
        .collect()
}

pub fn write_manifest<W: Write>(videos: &[AnnotatedVideo], mut out: W) -> std::io::Result<()> {
    for rec in manifest_records(videos) {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

//! Loading annotations from a COCO document and from palette-coded label
//! images, then sampling and splitting the videos.
//!
//! ```text
//! cargo run --example ingest
//! ```

use std::path::Path;

use serde_json::json;
use surgseg::dataset::{
    load_coco_annotations, parse_palette, pixel_masks_to_instances, sample_annotated_video, split_train_test,
    to_coco_document, LabelImage, SplitSpec, SplitUnit,
};

fn coco_document() -> String {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for v in 0..4 {
        for f in 0..6u32 {
            let id = v * 100 + f + 1;
            images.push(json!({
                "id": id, "file_name": format!("video{v}/{f:04}.png"), "width": 32, "height": 24,
                "video_id": format!("video{v}"), "frame_index": f
            }));
            let x = f64::from(4 + 2 * f);
            annotations.push(json!({
                "id": id, "image_id": id, "category_id": 1, "object_id": 1,
                "segmentation": [[x, 4.0, x + 8.0, 4.0, x + 8.0, 12.0, x, 12.0]]
            }));
        }
    }
    json!({
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "grasper"}],
        "videos": (0..4).map(|v| json!({"id": format!("video{v}"), "fps": 30.0})).collect::<Vec<_>>()
    })
    .to_string()
}

fn main() -> anyhow::Result<()> {
    let root = Path::new("frames");
    let dataset = load_coco_annotations(&coco_document(), root)?;
    for v in &dataset.videos {
        println!(
            "{}: {} frames, {} annotated, classes {:?}",
            v.video_id(),
            v.sequence().len(),
            v.annotated_frames().len(),
            v.class_names()
        );
    }

    let sampled = sample_annotated_video(&dataset.videos[0], 10.0)?;
    let kept: Vec<usize> = sampled.sequence().frames().iter().map(|f| f.source_index).collect();
    println!("sampled to 10 fps keeps source frames {kept:?}");

    let split = split_train_test(
        &dataset.videos,
        &SplitSpec {
            train_fraction: 0.75,
            seed: 3,
            unit: SplitUnit::Video,
        },
    )?;
    let ids = |vs: &[surgseg::dataset::AnnotatedVideo]| vs.iter().map(|v| v.video_id().to_string()).collect::<Vec<_>>();
    println!("train {:?} test {:?}", ids(&split.train), ids(&split.test));

    let doc = to_coco_document(&dataset.videos, root);
    println!("re-exported {} annotations", doc["annotations"].as_array().map_or(0, Vec::len));

    // Pixel labels: each connected component of a class becomes one instance.
    let palette = parse_palette("0 = background\n1 = 1 instrument\n2 = 2 tissue\n")?;
    let values: Vec<u16> = (0..16 * 8)
        .map(|i| {
            let (x, y) = (i % 16, i / 16);
            match (x, y) {
                (1..=3, 1..=3) | (10..=12, 1..=3) => 1,
                (_, 6..) => 2,
                _ => 0,
            }
        })
        .collect();
    let instances = pixel_masks_to_instances(&LabelImage::from_gray(16, 8, &values), &palette)?;
    for a in &instances {
        println!("object {} class {} area {} bbox {:?}", a.object_id, a.class_id, a.mask.area(), a.bbox);
    }
    Ok(())
}

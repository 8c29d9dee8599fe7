//! Sweeping the automatic mask generator over a small parameter grid and
//! writing an overlay gallery.
//!
//! ```text
//! cargo run --example autoseg -- [output-dir]
//! ```

use std::path::PathBuf;

use surgseg::autoseg::{sweep, write_gallery, AutoSegConfig, CellOutcome, ColorRegionGenerator};
use surgseg::dataset::FrameSource;
use surgseg::experiment::{synthetic_video, SyntheticFrames, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("surgseg-autoseg"), PathBuf::from);
    let video = synthetic_video(&SyntheticSpec::default())?;
    let image = SyntheticFrames.frame_rgb(video.sequence(), 0)?;
    let grid: Vec<AutoSegConfig> = [8, 16, 32]
        .into_iter()
        .flat_map(|points_per_side| {
            [0, 200].map(|min_mask_region_area| AutoSegConfig {
                points_per_side,
                min_mask_region_area,
                ..AutoSegConfig::default()
            })
        })
        .collect();
    let report = sweep(video.video_id(), 0, &image, &grid, &mut ColorRegionGenerator::default())?;
    for cell in &report.cells {
        match &cell.outcome {
            CellOutcome::Ok { stats, .. } => println!(
                "{}: {} masks, coverage {:.3}, max pairwise iou {:.3}",
                cell.config.key(),
                stats.candidate_count,
                stats.coverage_fraction,
                stats.max_pairwise_iou
            ),
            CellOutcome::Failed { message } => println!("{}: failed: {message}", cell.config.key()),
        }
    }
    write_gallery(&report, &image, &out)?;
    println!("gallery written to {}", out.display());
    Ok(())
}

//! Per-class IoU, Dice and MAE for a prediction against ground truth.
//!
//! ```text
//! cargo run --example metrics
//! ```

use std::sync::Arc;

use surgseg::experiment::{synthetic_video, SyntheticSpec};
use surgseg::mask::{BBox, BinaryMask};
use surgseg::metrics::{confusion_counts, dice, evaluate, iou, mae, write_metrics_csv, AggregationOrder};
use surgseg::mock::{DriftModel, MockSession};
use surgseg::prompt::PromptStrategy;
use surgseg::propagation::{run_sequence, ReinitPolicy};

fn main() -> anyhow::Result<()> {
    let rect = |x_min, x_max| {
        BinaryMask::rect(
            20,
            10,
            BBox {
                x_min,
                y_min: 2,
                x_max,
                y_max: 7,
            },
        )
    };
    let (pred, gt) = (rect(3, 12), rect(5, 14));
    let c = confusion_counts(&pred, &gt)?;
    println!("{c:?}");
    println!("iou {:.4} dice {:.4} mae {:.4}", iou(c), dice(c), mae(&pred, &gt)?);

    let video = synthetic_video(&SyntheticSpec::default())?;
    let mut session = MockSession::new(Arc::new(video.clone()), DriftModel::translation(0.5, 0.5))?;
    let result = run_sequence(&video, &PromptStrategy::bbox(), &ReinitPolicy::every(30), &mut session)?;
    for order in [AggregationOrder::PerClassOverVideo, AggregationOrder::PerFrameThenClass] {
        let report = evaluate(&result, &video, order, true)?;
        println!("{order:?}: mIoU {:.4} mDice {:.4} mAP {:?}", report.miou, report.mdice, report.map_score);
        write_metrics_csv(&report, std::io::stdout().lock())?;
    }
    Ok(())
}

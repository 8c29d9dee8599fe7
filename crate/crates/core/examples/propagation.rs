//! Propagating prompts through a video with the drifting mock segmenter, and
//! how periodic re-initialization limits the drift.
//!
//! ```text
//! cargo run --example propagation
//! ```

use std::sync::Arc;

use surgseg::experiment::{synthetic_video, SyntheticSpec};
use surgseg::metrics::{evaluate, AggregationOrder};
use surgseg::mock::{DriftModel, MockSession};
use surgseg::prompt::PromptStrategy;
use surgseg::propagation::{run_sequence, ReinitPolicy};

fn main() -> anyhow::Result<()> {
    let video = synthetic_video(&SyntheticSpec {
        frames: 120,
        ..SyntheticSpec::default()
    })?;
    let drift = DriftModel::translation(1.0, 0.0);
    for strategy in [PromptStrategy::one_point_center(), PromptStrategy::bbox(), PromptStrategy::mask()] {
        for policy in ReinitPolicy::standard_set() {
            let mut session = MockSession::new(Arc::new(video.clone()), drift)?;
            let result = run_sequence(&video, &strategy, &policy, &mut session)?;
            let report = evaluate(&result, &video, AggregationOrder::default(), false)?;
            let events: Vec<usize> = result.provenance.reinit_events.iter().map(|e| e.frame_index).collect();
            println!(
                "{:<16} {:<10} mIoU {:.4}  reinit at {:?}",
                strategy.name(),
                policy.table_suffix(),
                report.miou,
                events
            );
        }
    }
    Ok(())
}

//! Driving a segmenter over the line protocol. An in-process server backed by
//! the mock stands in for the external model runtime.
//!
//! ```text
//! cargo run --example bridge
//! ```

use std::thread;

use surgseg::bridge::server::{serve, MockFactory};
use surgseg::bridge::{BridgeConfig, BridgeSession};
use surgseg::experiment::{synthetic_video, SyntheticSpec};
use surgseg::metrics::{evaluate, AggregationOrder};
use surgseg::mock::DriftModel;
use surgseg::prompt::PromptStrategy;
use surgseg::propagation::{run_sequence, ReinitPolicy};
use surgseg::session::SegmenterSession;

fn main() -> anyhow::Result<()> {
    let video = synthetic_video(&SyntheticSpec {
        frames: 60,
        ..SyntheticSpec::default()
    })?;
    let (server_in, client_out) = std::io::pipe()?;
    let (client_in, server_out) = std::io::pipe()?;
    let served = video.clone();
    let server = thread::spawn(move || {
        let mut factory = MockFactory::new([served], DriftModel::translation(1.0, 0.0));
        serve(server_in, server_out, &mut factory)
    });

    let config = BridgeConfig::new("unused", "mock");
    let mut session = BridgeSession::connect(Box::new(client_in), Box::new(client_out), video.sequence(), &config)?;
    println!("connected to {}", session.identity());
    let result = run_sequence(&video, &PromptStrategy::mask(), &ReinitPolicy::every(30), &mut session)?;
    let report = evaluate(&result, &video, AggregationOrder::default(), false)?;
    println!("mIoU over the wire {:.4}", report.miou);
    // Dropping the session sends the close request.
    drop(session);
    server.join().expect("server thread")?;
    Ok(())
}

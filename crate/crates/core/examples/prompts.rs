//! The five prompting strategies on the first frame of the synthetic video.
//!
//! ```text
//! cargo run --example prompts
//! ```

use surgseg::experiment::{synthetic_video, SyntheticSpec};
use surgseg::prompt::{build_prompt_set, Prompt, PromptStrategy};

fn main() -> anyhow::Result<()> {
    let video = synthetic_video(&SyntheticSpec::default())?;
    for a in video.frame_annotations(0) {
        println!("object {} class {} bbox {:?} area {}", a.object_id, a.class_id, a.bbox, a.mask.area());
    }
    for strategy in PromptStrategy::standard_set() {
        let strategy = strategy.with_seed(11);
        println!("{strategy}:");
        for p in build_prompt_set(&video, 0, &strategy)? {
            match p {
                Prompt::Point(p) => println!("  object {} point ({}, {}) {:?}", p.object_id, p.x, p.y, p.label),
                Prompt::Box(b) => println!("  object {} box {:?}-{:?}", b.object_id, b.top_left, b.bottom_right),
                Prompt::Mask(m) => println!("  object {} mask of area {}", m.object_id, m.mask.area()),
            }
        }
    }
    Ok(())
}

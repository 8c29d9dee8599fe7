//! Fine-tuning the built-in toy model on sparse frames of the training videos
//! and scoring it on the held-out one.
//!
//! ```text
//! cargo run --example finetune -- [output-dir]
//! ```

use std::path::PathBuf;

use surgseg::experiment::{run_finetune, ExperimentConfig};

const CONFIG: &str = include_str!("configs/finetune.toml");

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("surgseg-finetune"), PathBuf::from);
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let outcome = run_finetune(&config, &out)?;
    println!("trainable parameters: {}", outcome.training.freeze.trainable_parameters());
    for (epoch, loss) in outcome.training.epoch_losses.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.5}");
    }
    for cell in &outcome.bundle.cells {
        let miou = cell.summary.as_ref().map(|s| s.miou);
        println!("{}: mIoU {miou:?}", cell.descriptor.key());
    }
    println!("checkpoint at {}", outcome.training.checkpoint.display());
    Ok(())
}

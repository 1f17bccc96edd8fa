//! Contrastive pretraining on a synthetic world: watch both losses fall,
//! then save and reload the best-on-train checkpoint.
//!
//! ```bash
//! cargo run --release --example pretrain_alignment
//! ```

use aether::align::{pretrain, AlignmentConfig, AlignmentModel};
use aether::synth::{generate, SynthConfig};

fn main() -> aether::Result<()> {
    let world = generate(&SynthConfig {
        grid_size: 64,
        n_pois: 800,
        n_regions: 20,
        k: 4,
        noise_sigma: 0.5,
        seed: 3,
        d_t: 64,
        n_luc_samples: 100,
        ..Default::default()
    })?;

    let cfg = AlignmentConfig {
        epochs: 12,
        batch_size: 256,
        seed: 3,
        ..Default::default()
    };
    let outcome = pretrain(&world.field, &world.pois, &world.text, &cfg)?;

    println!("epoch  l_ae      l_ap      l_total   best");
    for row in &outcome.log {
        println!(
            "{:>5}  {:<8.5}  {:<8.5}  {:<8.5}  {}",
            row.epoch, row.l_ae, row.l_ap, row.l_total, row.is_best
        );
    }
    println!(
        "best epoch {} (cross-modal loss {:.5}), {} POIs dropped",
        outcome.best_epoch, outcome.state.best_lap, outcome.dropped_pois
    );

    let dir = std::path::Path::new("target/examples-out/pretrain_alignment");
    std::fs::create_dir_all(dir).expect("create output dir");
    let path = dir.join("checkpoint.aeth");
    outcome.model.save_checkpoint(&path)?;
    let restored = AlignmentModel::load_checkpoint(&path)?;
    println!(
        "checkpoint {} ({} -> {} head, base radius {} m)",
        path.display(),
        restored.head.input_dim(),
        restored.head.output_dim(),
        restored.r_b
    );
    Ok(())
}

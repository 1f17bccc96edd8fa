//! Generate a synthetic city bundle and inspect its ground truth.
//!
//! ```bash
//! cargo run --release --example synth_world
//! ```

use aether::synth::{generate, oracle_best_possible, write_bundle, SynthConfig};
use aether::tasks::{SplitSpec, TaskHeadConfig};

fn main() -> aether::Result<()> {
    let cfg = SynthConfig {
        grid_size: 64,
        n_pois: 600,
        n_regions: 40,
        k: 4,
        noise_sigma: 0.5,
        seed: 42,
        d_t: 64,
        n_luc_samples: 500,
        region_radius: 100.0,
        ..Default::default()
    };
    let world = generate(&cfg)?;

    println!(
        "world: {}x{} cells, {} channels, {} POIs, {} regions, {} land-use samples",
        world.field.width,
        world.field.height,
        world.field.channels,
        world.pois.len(),
        world.regions.len(),
        world.luc.len()
    );
    println!("first POI: {:?}", world.pois[0]);
    println!(
        "its description: {}",
        aether::poi::render_description(&world.pois[0])
    );

    let out = std::path::Path::new("target/examples-out/synth_world");
    let manifest = write_bundle(&world, out)?;
    println!("bundle written, manifest at {}", manifest.display());

    // Reference lines: what a probe on the true latent function achieves.
    let head_cfg = TaskHeadConfig {
        hidden: 0,
        max_epochs: 200,
        ..Default::default()
    };
    let refs = oracle_best_possible(&world, &head_cfg, &SplitSpec::default(), &[0])?;
    println!(
        "self-reference: land-use F1 {:.3}, distribution KL {:.2e}",
        refs.luc_self_f1, refs.sdm_self_kl
    );
    println!(
        "latent-probe reference: land-use F1 {:.3}, distribution KL {:.4}",
        refs.latent_probe_f1, refs.latent_probe_kl
    );
    Ok(())
}

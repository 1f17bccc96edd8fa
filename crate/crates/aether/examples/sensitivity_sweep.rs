//! One-factor sensitivity sweep over the loss weight, rerunning
//! pretraining and both downstream tasks per setting. The buffer and
//! training-fraction axes work the same way; swap the axis below.
//!
//! ```bash
//! cargo run --release --example sensitivity_sweep
//! ```

use aether::align::AlignmentConfig;
use aether::synth::{generate, SynthConfig};
use aether::tasks::{
    sweep, write_sweep_csv, SplitSpec, SweepAxis, SweepInputs, TaskHeadConfig,
};

fn main() -> aether::Result<()> {
    let world = generate(&SynthConfig {
        grid_size: 48,
        n_pois: 400,
        n_regions: 40,
        k: 3,
        noise_sigma: 0.6,
        seed: 1,
        d_t: 48,
        n_luc_samples: 300,
        region_radius: 70.0,
        ..Default::default()
    })?;

    let inputs = SweepInputs {
        field: &world.field,
        pois: &world.pois,
        text: &world.text,
        luc: &world.luc,
        num_classes: world.cfg.k,
        luc_radius: 50.0,
        regions: &world.regions,
        targets: &world.targets,
        base: AlignmentConfig {
            epochs: 5,
            batch_size: 128,
            seed: 1,
            ..Default::default()
        },
        head_cfg: TaskHeadConfig::default(),
        split: SplitSpec::default(),
        seeds: &[0],
    };

    let rows = sweep(SweepAxis::Lambda, &inputs);
    println!("{:<8} {:<10} {:>8} {:>9}  status", "axis", "setting", "luc_f1", "sdm_kl");
    for r in &rows {
        println!(
            "{:<8} {:<10} {:>8.4} {:>9.5}  {}",
            r.axis, r.setting, r.luc_f1, r.sdm_kl, r.status
        );
    }

    let dir = std::path::Path::new("target/examples-out/sensitivity_sweep");
    std::fs::create_dir_all(dir).expect("create output dir");
    let out = dir.join("sweep_lambda.csv");
    write_sweep_csv(&rows, &out)?;
    println!("sweep written to {}", out.display());
    Ok(())
}

//! Train and evaluate both downstream heads on aligned and raw embeddings,
//! reporting macro P/R/F1 for land-use classification and KL/L1/Chebyshev
//! for distribution mapping, mean and std over seeds.
//!
//! ```bash
//! cargo run --release --example evaluate_tasks
//! ```

use aether::align::{pretrain, AlignmentConfig};
use aether::pipeline::embed_for_eval;
use aether::synth::{generate, SynthConfig};
use aether::tasks::{train_luc, train_sdm, EvalReport, SplitSpec, TaskHeadConfig};

fn main() -> aether::Result<()> {
    let world = generate(&SynthConfig {
        grid_size: 64,
        n_pois: 800,
        n_regions: 60,
        k: 4,
        noise_sigma: 0.8,
        seed: 9,
        d_t: 64,
        n_luc_samples: 600,
        region_radius: 80.0,
        ..Default::default()
    })?;
    let cfg = AlignmentConfig {
        epochs: 15,
        batch_size: 256,
        seed: 9,
        ..Default::default()
    };
    let model = pretrain(&world.field, &world.pois, &world.text, &cfg)?.model;

    let points: Vec<(f64, f64)> = world.luc.iter().map(|s| (s.x, s.y)).collect();
    let (luc_aligned, luc_raw, sdm_aligned, sdm_raw) =
        embed_for_eval(&model, &world.field, &points, 50.0, &world.regions)?;

    let split = SplitSpec::default();
    let head_cfg = TaskHeadConfig::default();
    let seeds = [0u64, 1, 2];

    let print_report = |name: &str, report: &EvalReport| {
        print!("{name:<22}");
        for m in &report.metrics {
            print!("  {} {:.4} +/- {:.4}", m.name, m.mean, m.std);
        }
        println!();
    };

    for (name, rows) in [("land-use aligned", &luc_aligned), ("land-use raw", &luc_raw)] {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (e, s) in rows.iter().zip(&world.luc) {
            if let Some(e) = e {
                x.push(e.vector.clone());
                y.push(s.label);
            }
        }
        let (_, report) = train_luc(&x, &y, world.cfg.k, &split, &head_cfg, &seeds)?;
        print_report(name, &report);
    }

    for (name, rows) in [
        ("distribution aligned", &sdm_aligned),
        ("distribution raw", &sdm_raw),
    ] {
        let mut x = Vec::new();
        let mut q = Vec::new();
        for (e, t) in rows.iter().zip(&world.targets) {
            if let Some(e) = e {
                x.push(e.vector.clone());
                q.push(t.clone());
            }
        }
        let (_, report) = train_sdm(&x, &q, &split, &head_cfg, &seeds)?;
        print_report(name, &report);
    }
    Ok(())
}

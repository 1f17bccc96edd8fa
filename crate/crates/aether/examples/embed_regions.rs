//! Apply a trained head across the field: per-pixel embeddings, point
//! embeddings, and region-level means (aligned and raw baselines).
//!
//! ```bash
//! cargo run --release --example embed_regions
//! ```

use aether::align::{pretrain, AlignmentConfig};
use aether::infer::{
    embed_cells, embed_points, region_embed, region_embed_raw, write_embeddings_csv, PixelView,
};
use aether::synth::{generate, SynthConfig};

fn main() -> aether::Result<()> {
    let world = generate(&SynthConfig {
        grid_size: 64,
        n_pois: 500,
        n_regions: 15,
        k: 4,
        noise_sigma: 0.5,
        seed: 5,
        d_t: 64,
        n_luc_samples: 100,
        region_radius: 80.0,
        ..Default::default()
    })?;
    let cfg = AlignmentConfig {
        epochs: 6,
        batch_size: 256,
        seed: 5,
        ..Default::default()
    };
    let model = pretrain(&world.field, &world.pois, &world.text, &cfg)?.model;

    // A few pixel embeddings: unit norm by construction.
    let cells = vec![(10, 10), (32, 32), (50, 20)];
    let pixel = embed_cells(
        &model.head,
        &world.field,
        &cells,
        PixelView::Buffered { radius: model.r_b },
    )?;
    for ((row, col), z) in cells.iter().zip(&pixel) {
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("pixel ({row:>2}, {col:>2}): {}-dim, norm {norm:.6}", z.len());
    }

    // Point embeddings around the first few POIs.
    let points: Vec<(f64, f64)> = world.pois.iter().take(3).map(|p| (p.x, p.y)).collect();
    let at_points = embed_points(Some(&model.head), &world.field, &points, 50.0)?;
    println!(
        "embedded {} of {} POI points",
        at_points.iter().filter(|e| e.is_some()).count(),
        points.len()
    );

    // Region means: aligned vs raw field baseline.
    let aligned = region_embed(
        &model.head,
        &world.field,
        &world.regions,
        PixelView::Buffered { radius: model.r_b },
    )?;
    let raw = region_embed_raw(&world.field, &world.regions)?;
    for (a, r) in aligned.iter().zip(&raw).take(5) {
        let (a, r) = (a.as_ref().unwrap(), r.as_ref().unwrap());
        let norm: f64 = a.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "region {:>2}: {:>3} member pixels, aligned dim {} (norm {norm:.3} <= 1), raw dim {}",
            a.region_id,
            a.pixel_count,
            a.vector.len(),
            r.vector.len()
        );
    }

    let dir = std::path::Path::new("target/examples-out/embed_regions");
    std::fs::create_dir_all(dir).expect("create output dir");
    let rows: Vec<_> = aligned.into_iter().flatten().collect();
    let out = dir.join("regions_aligned.csv");
    write_embeddings_csv(&rows, &out)?;
    println!("region embeddings written to {}", out.display());
    Ok(())
}

//! Circular-buffer mean pooling over an embedding field: single queries,
//! batches, and the empty-buffer condition.
//!
//! ```bash
//! cargo run --release --example pool_buffers
//! ```

use aether::fieldgrid::{
    buffer_members, pool_buffer, pool_buffer_batch, read_field, write_field, BufferQuery,
};
use aether::synth::{generate, SynthConfig};

fn main() -> aether::Result<()> {
    let world = generate(&SynthConfig {
        grid_size: 64,
        n_pois: 100,
        n_regions: 10,
        k: 3,
        seed: 7,
        d_t: 32,
        n_luc_samples: 50,
        ..Default::default()
    })?;

    // Round-trip the field through its binary format.
    let dir = std::path::Path::new("target/examples-out/pool_buffers");
    std::fs::create_dir_all(dir).expect("create output dir");
    let path = dir.join("field.aef");
    write_field(&world.field, &path)?;
    let field = read_field(&path)?;
    println!(
        "field: {}x{}x{} at {} m/cell, origin ({}, {})",
        field.width, field.height, field.channels, field.cell_size, field.origin_x, field.origin_y
    );

    // Pool around the center at growing radii: support grows monotonically.
    let (cx, cy) = field.cell_center(32, 32);
    for radius in [5.0, 25.0, 50.0, 100.0] {
        let q = BufferQuery::new(cx, cy, radius)?;
        let pooled = pool_buffer(&field, &q)?;
        println!(
            "radius {radius:>5} m: {:>4} cells, mean of channel 0 = {:+.4}",
            pooled.pixel_count, pooled.values[0]
        );
        assert_eq!(buffer_members(&field, &q).len(), pooled.pixel_count);
    }

    // Batched pooling preserves order and marks empty buffers.
    let queries = vec![
        BufferQuery::new(cx, cy, 30.0)?,
        BufferQuery::new(cx + 1.0e6, cy, 30.0)?, // far off the raster
        BufferQuery::new(cx - 100.0, cy + 50.0, 30.0)?,
    ];
    let batch = pool_buffer_batch(&field, &queries)?;
    for (i, entry) in batch.iter().enumerate() {
        match entry {
            Some(p) => println!("query {i}: {} contributing cells", p.pixel_count),
            None => println!("query {i}: empty buffer (off raster), dropped"),
        }
    }
    Ok(())
}

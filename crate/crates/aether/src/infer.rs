//! Inference with a frozen head: per-pixel embeddings and region-level
//! aggregation.
//!
//! Each pixel's base-view embedding pools a radius-`r_b` buffer centered on
//! that pixel and applies the head, mirroring training-time statistics; the
//! raw per-pixel alternative is available through [`PixelView::Raw`]. A
//! region embedding is the plain arithmetic mean of its member pixels'
//! base-view embeddings, not re-normalized.
//!
//! Regions come either as centroid buffers (`region_id,cx,cy,radius` CSV)
//! or as an explicit mask raster (single-channel AEF1 whose values are
//! region ids, NaN = unassigned).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fieldgrid::{buffer_members, pool_buffer, BufferQuery, EmbeddingField};
use crate::nn::{pairwise_sum, AeProjectionHead, HeadCache};

/// Cells per parallel work unit when embedding pixels. Tiling is an
/// iteration strategy only; results are independent of the tile size.
const TILE_CELLS: usize = 256 * 256;

/// How a pixel's base-view vector is formed before the head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelView {
    /// Mean-pool a circular buffer centered on the pixel (the default;
    /// matches what the head saw during training).
    Buffered { radius: f64 },
    /// Use the pixel's raw channel vector.
    Raw,
}

/// A named spatial unit: either a centroid buffer or an explicit pixel set.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub region_id: u64,
    pub rule: RegionRule,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionRule {
    Buffer {
        centroid_x: f64,
        centroid_y: f64,
        radius: f64,
    },
    Mask {
        cells: Vec<(usize, usize)>,
    },
}

/// Mean base-view embedding over a region's member pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEmbedding {
    pub region_id: u64,
    pub vector: Vec<f64>,
    pub pixel_count: usize,
}

fn pixel_input(
    field: &EmbeddingField,
    row: usize,
    col: usize,
    view: PixelView,
) -> Result<Vec<f64>> {
    match view {
        PixelView::Raw => Ok(field.cell(row, col).iter().map(|&v| f64::from(v)).collect()),
        PixelView::Buffered { radius } => {
            let (cx, cy) = field.cell_center(row, col);
            let q = BufferQuery::new(cx, cy, radius)?;
            Ok(pool_buffer(field, &q)?.values)
        }
    }
}

/// Embeds a list of cells with the frozen head; output order matches input.
/// Cells must be in bounds and non-nodata, so a buffered view always has at
/// least the cell itself to pool.
pub fn embed_cells(
    head: &AeProjectionHead,
    field: &EmbeddingField,
    cells: &[(usize, usize)],
    view: PixelView,
) -> Result<Vec<Vec<f64>>> {
    for &(row, col) in cells {
        if row >= field.height || col >= field.width {
            return Err(Error::Region(format!(
                "cell ({row}, {col}) out of bounds for {}x{} field",
                field.height, field.width
            )));
        }
        if field.is_nodata(row, col) {
            return Err(Error::Region(format!("cell ({row}, {col}) is nodata")));
        }
    }
    cells
        .par_chunks(TILE_CELLS)
        .map(|tile| {
            let mut cache = HeadCache::default();
            let mut out = Vec::with_capacity(tile.len());
            for &(row, col) in tile {
                let a = pixel_input(field, row, col, view)?;
                head.forward_cached(&a, &mut cache)?;
                out.push(cache.z.clone());
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()
        .map(|tiles| tiles.into_iter().flatten().collect())
}

/// One embedding per query point: pool a single buffer there, then apply
/// the head if given (raw pooled values otherwise). `None` marks points
/// whose buffer is empty; ids are input indices.
pub fn embed_points(
    head: Option<&AeProjectionHead>,
    field: &EmbeddingField,
    points: &[(f64, f64)],
    radius: f64,
) -> Result<Vec<Option<RegionEmbedding>>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let q = BufferQuery::new(x, y, radius)?;
            let pooled = match pool_buffer(field, &q) {
                Ok(p) => p,
                Err(Error::EmptyBuffer { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let vector = match head {
                Some(h) => h.forward(&pooled.values)?,
                None => pooled.values,
            };
            Ok(Some(RegionEmbedding {
                region_id: i as u64,
                vector,
                pixel_count: pooled.pixel_count,
            }))
        })
        .collect()
}

fn region_cells(field: &EmbeddingField, region: &RegionSpec) -> Result<Vec<(usize, usize)>> {
    match &region.rule {
        RegionRule::Buffer {
            centroid_x,
            centroid_y,
            radius,
        } => {
            let q = BufferQuery::new(*centroid_x, *centroid_y, *radius)?;
            Ok(buffer_members(field, &q))
        }
        RegionRule::Mask { cells } => {
            if cells.is_empty() {
                return Err(Error::Region(format!(
                    "region {} has an empty member list",
                    region.region_id
                )));
            }
            for &(row, col) in cells {
                if row >= field.height || col >= field.width {
                    return Err(Error::Region(format!(
                        "region {}: cell ({row}, {col}) out of bounds",
                        region.region_id
                    )));
                }
            }
            Ok(cells
                .iter()
                .copied()
                .filter(|&(row, col)| !field.is_nodata(row, col))
                .collect())
        }
    }
}

/// Per-channel mean over member embeddings with pairwise summation, so the
/// result is insensitive to member order at the 1e-12 level.
fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut column = vec![0.0; rows.len()];
    (0..d)
        .map(|c| {
            for (i, row) in rows.iter().enumerate() {
                column[i] = row[c];
            }
            pairwise_sum(&column) / n
        })
        .collect()
}

/// Mean base-view embedding for every region. Regions with zero member
/// cells are reported and come back as `None`; the run continues.
pub fn region_embed(
    head: &AeProjectionHead,
    field: &EmbeddingField,
    regions: &[RegionSpec],
    view: PixelView,
) -> Result<Vec<Option<RegionEmbedding>>> {
    regions
        .iter()
        .map(|region| {
            let cells = region_cells(field, region)?;
            if cells.is_empty() {
                log::warn!("region {} has no member cells", region.region_id);
                return Ok(None);
            }
            let embeddings = embed_cells(head, field, &cells, view)?;
            Ok(Some(RegionEmbedding {
                region_id: region.region_id,
                vector: mean_rows(&embeddings),
                pixel_count: cells.len(),
            }))
        })
        .collect()
}

/// Raw-field baseline: the mean channel vector over each region's member
/// cells, with no head. For buffer-rule regions this equals a single pooled
/// buffer at the centroid.
pub fn region_embed_raw(
    field: &EmbeddingField,
    regions: &[RegionSpec],
) -> Result<Vec<Option<RegionEmbedding>>> {
    regions
        .iter()
        .map(|region| match &region.rule {
            RegionRule::Buffer {
                centroid_x,
                centroid_y,
                radius,
            } => {
                let q = BufferQuery::new(*centroid_x, *centroid_y, *radius)?;
                match pool_buffer(field, &q) {
                    Ok(p) => Ok(Some(RegionEmbedding {
                        region_id: region.region_id,
                        vector: p.values,
                        pixel_count: p.pixel_count,
                    })),
                    Err(Error::EmptyBuffer { .. }) => {
                        log::warn!("region {} has no member cells", region.region_id);
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            }
            RegionRule::Mask { .. } => {
                let cells = region_cells(field, region)?;
                if cells.is_empty() {
                    log::warn!("region {} has no member cells", region.region_id);
                    return Ok(None);
                }
                let rows: Vec<Vec<f64>> = cells
                    .iter()
                    .map(|&(row, col)| {
                        field.cell(row, col).iter().map(|&v| f64::from(v)).collect()
                    })
                    .collect();
                Ok(Some(RegionEmbedding {
                    region_id: region.region_id,
                    vector: mean_rows(&rows),
                    pixel_count: cells.len(),
                }))
            }
        })
        .collect()
}

/// Reads buffer-rule regions from a `region_id,cx,cy,radius` CSV.
pub fn load_regions_csv(path: &Path) -> Result<Vec<RegionSpec>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .clone();
    for col in ["region_id", "cx", "cy", "radius"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("missing column `{col}`"),
            });
        }
    }
    let pos = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (i_id, i_cx, i_cy, i_r) = (pos("region_id"), pos("cx"), pos("cy"), pos("radius"));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |i: usize, what: &str| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("line {line}: unparseable {what}"),
                })
        };
        let region_id: u64 =
            record
                .get(i_id)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("line {line}: unparseable region_id"),
                })?;
        let radius = parse(i_r, "radius")?;
        if !(radius > 0.0) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {line}: radius must be positive"),
            });
        }
        out.push(RegionSpec {
            region_id,
            rule: RegionRule::Buffer {
                centroid_x: parse(i_cx, "cx")?,
                centroid_y: parse(i_cy, "cy")?,
                radius,
            },
        });
    }
    Ok(out)
}

/// Writes buffer-rule regions as `region_id,cx,cy,radius`.
pub fn write_regions_csv(regions: &[RegionSpec], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "region_id,cx,cy,radius").map_err(|e| Error::io(path, e))?;
    for r in regions {
        match &r.rule {
            RegionRule::Buffer {
                centroid_x,
                centroid_y,
                radius,
            } => writeln!(w, "{},{},{},{}", r.region_id, centroid_x, centroid_y, radius)
                .map_err(|e| Error::io(path, e))?,
            RegionRule::Mask { .. } => {
                return Err(Error::Region(format!(
                    "region {} uses a mask rule; write it as a mask raster instead",
                    r.region_id
                )))
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Derives mask-rule regions from a single-channel AEF1 raster whose values
/// are region ids (NaN = unassigned). Ids must be non-negative integers.
pub fn regions_from_mask(mask: &EmbeddingField) -> Result<Vec<RegionSpec>> {
    if mask.channels != 1 {
        return Err(Error::Region(format!(
            "mask raster must have one channel, got {}",
            mask.channels
        )));
    }
    let mut by_id: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for row in 0..mask.height {
        for col in 0..mask.width {
            if mask.is_nodata(row, col) {
                continue;
            }
            let v = f64::from(mask.cell(row, col)[0]);
            if v < 0.0 || (v - v.round()).abs() > 1e-6 {
                return Err(Error::Region(format!(
                    "mask value {v} at ({row}, {col}) is not a non-negative integer id"
                )));
            }
            by_id.entry(v.round() as u64).or_default().push((row, col));
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(region_id, cells)| RegionSpec {
            region_id,
            rule: RegionRule::Mask { cells },
        })
        .collect())
}

/// Writes region embeddings as `region_id,pixel_count,e0..e{d-1}`.
pub fn write_embeddings_csv(embeddings: &[RegionEmbedding], path: &Path) -> Result<()> {
    let d = embeddings.first().map_or(0, |e| e.vector.len());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("region_id,pixel_count");
    for i in 0..d {
        header.push_str(&format!(",e{i}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for e in embeddings {
        if e.vector.len() != d {
            return Err(Error::Region(format!(
                "region {} has dimension {}, expected {d}",
                e.region_id,
                e.vector.len()
            )));
        }
        let mut line = format!("{},{}", e.region_id, e.pixel_count);
        for v in &e.vector {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(|e2| Error::io(path, e2))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads embeddings written by [`write_embeddings_csv`].
pub fn read_embeddings_csv(path: &Path) -> Result<Vec<RegionEmbedding>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        reason: "empty file".into(),
    })?;
    let d = header.split(',').count().saturating_sub(2);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != d + 2 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected {} fields", i + 2, d + 2),
            });
        }
        let bad = |what: &str| Error::Csv {
            path: path.to_path_buf(),
            reason: format!("line {}: unparseable {what}", i + 2),
        };
        out.push(RegionEmbedding {
            region_id: parts[0].parse().map_err(|_| bad("region_id"))?,
            pixel_count: parts[1].parse().map_err(|_| bad("pixel_count"))?,
            vector: parts[2..]
                .iter()
                .map(|s| s.parse().map_err(|_| bad("value")))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn test_field(side: usize, channels: usize, seed: u64) -> EmbeddingField {
        let mut r = rng::stream(seed, "infer-field");
        let data = (0..side * side * channels)
            .map(|_| r.random::<f32>() * 2.0 - 1.0)
            .collect();
        EmbeddingField::new(side, side, channels, 0.0, 0.0, 10.0, 27700, data).unwrap()
    }

    fn small_head(input: usize, seed: u64) -> AeProjectionHead {
        AeProjectionHead::init(input, 16, 8, seed)
    }

    #[test]
    fn constant_field_embeds_identically_everywhere_interior() {
        let channels = 4;
        let data: Vec<f32> = (0..8 * 8 * channels).map(|i| (i % channels) as f32).collect();
        let field = EmbeddingField::new(8, 8, channels, 0.0, 0.0, 10.0, 0, data).unwrap();
        let head = small_head(channels, 1);
        let cells = vec![(3, 3), (4, 4), (3, 4)];
        let out = embed_cells(&head, &field, &cells, PixelView::Buffered { radius: 15.0 }).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0], out[2]);
    }

    #[test]
    fn tiny_buffer_equals_raw_pixel_path() {
        let field = test_field(6, 3, 2);
        let head = small_head(3, 2);
        let cells = vec![(2, 3)];
        let buffered =
            embed_cells(&head, &field, &cells, PixelView::Buffered { radius: 4.0 }).unwrap();
        let raw = embed_cells(&head, &field, &cells, PixelView::Raw).unwrap();
        assert_eq!(buffered, raw);
    }

    #[test]
    fn batch_embedding_matches_sequential_oracle() {
        let field = test_field(16, 4, 3);
        let head = small_head(4, 3);
        let cells: Vec<(usize, usize)> = (0..16)
            .flat_map(|r| (0..16).map(move |c| (r, c)))
            .collect();
        let view = PixelView::Buffered { radius: 25.0 };
        let batch = embed_cells(&head, &field, &cells, view).unwrap();
        let mut cache = HeadCache::default();
        for (i, &(row, col)) in cells.iter().enumerate() {
            let a = pixel_input(&field, row, col, view).unwrap();
            head.forward_cached(&a, &mut cache).unwrap();
            assert_eq!(batch[i], cache.z, "cell ({row}, {col})");
        }
    }

    #[test]
    fn region_mean_of_one_and_two_cells() {
        let field = test_field(8, 3, 4);
        let head = small_head(3, 4);
        let view = PixelView::Raw;
        let one = RegionSpec {
            region_id: 1,
            rule: RegionRule::Mask { cells: vec![(2, 2)] },
        };
        let two = RegionSpec {
            region_id: 2,
            rule: RegionRule::Mask {
                cells: vec![(2, 2), (5, 5)],
            },
        };
        let out = region_embed(&head, &field, &[one, two], view).unwrap();
        let single = embed_cells(&head, &field, &[(2, 2)], view).unwrap();
        let pair = embed_cells(&head, &field, &[(2, 2), (5, 5)], view).unwrap();
        let got1 = out[0].as_ref().unwrap();
        assert_eq!(got1.vector, single[0]);
        assert_eq!(got1.pixel_count, 1);
        let got2 = out[1].as_ref().unwrap();
        for i in 0..got2.vector.len() {
            let want = (pair[0][i] + pair[1][i]) / 2.0;
            assert!((got2.vector[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn buffer_region_membership_matches_brute_force() {
        let field = test_field(40, 2, 5);
        let head = small_head(2, 5);
        let region = RegionSpec {
            region_id: 7,
            rule: RegionRule::Buffer {
                centroid_x: 195.0,
                centroid_y: -200.0,
                radius: 300.0,
            },
        };
        let mut expect = Vec::new();
        for row in 0..40 {
            for col in 0..40 {
                let dx = col as f64 * 10.0 - 195.0;
                let dy = -(row as f64) * 10.0 + 200.0;
                if dx * dx + dy * dy <= 300.0 * 300.0 {
                    expect.push((row, col));
                }
            }
        }
        let cells = region_cells(&field, &region).unwrap();
        assert_eq!(cells, expect);
        let out = region_embed(&head, &field, &[region], PixelView::Raw).unwrap();
        assert_eq!(out[0].as_ref().unwrap().pixel_count, expect.len());
    }

    #[test]
    fn region_norm_bounded_by_one() {
        let field = test_field(20, 3, 6);
        let head = small_head(3, 6);
        let region = RegionSpec {
            region_id: 1,
            rule: RegionRule::Buffer {
                centroid_x: 100.0,
                centroid_y: -100.0,
                radius: 80.0,
            },
        };
        let out = region_embed(&head, &field, &[region], PixelView::Buffered { radius: 25.0 })
            .unwrap();
        let v = &out[0].as_ref().unwrap().vector;
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-9, "norm {norm}");
    }

    #[test]
    fn member_order_does_not_change_the_mean_beyond_1e12() {
        let field = test_field(10, 3, 7);
        let head = small_head(3, 7);
        let cells: Vec<(usize, usize)> = (0..10).map(|i| (i, (i * 3) % 10)).collect();
        let mut reversed = cells.clone();
        reversed.reverse();
        let a = region_embed(
            &head,
            &field,
            &[RegionSpec {
                region_id: 1,
                rule: RegionRule::Mask { cells },
            }],
            PixelView::Raw,
        )
        .unwrap();
        let b = region_embed(
            &head,
            &field,
            &[RegionSpec {
                region_id: 1,
                rule: RegionRule::Mask { cells: reversed },
            }],
            PixelView::Raw,
        )
        .unwrap();
        for (x, y) in a[0]
            .as_ref()
            .unwrap()
            .vector
            .iter()
            .zip(&b[0].as_ref().unwrap().vector)
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn split_and_recombine_reproduces_the_mean() {
        let field = test_field(12, 2, 8);
        let head = small_head(2, 8);
        let all: Vec<(usize, usize)> = (0..12).map(|i| (i, i)).collect();
        let (left, right) = all.split_at(5);
        let view = PixelView::Raw;
        let whole = region_embed(
            &head,
            &field,
            &[RegionSpec {
                region_id: 0,
                rule: RegionRule::Mask { cells: all.clone() },
            }],
            view,
        )
        .unwrap();
        let halves = region_embed(
            &head,
            &field,
            &[
                RegionSpec {
                    region_id: 1,
                    rule: RegionRule::Mask { cells: left.to_vec() },
                },
                RegionSpec {
                    region_id: 2,
                    rule: RegionRule::Mask {
                        cells: right.to_vec(),
                    },
                },
            ],
            view,
        )
        .unwrap();
        let w = whole[0].as_ref().unwrap();
        let a = halves[0].as_ref().unwrap();
        let b = halves[1].as_ref().unwrap();
        let n = (a.pixel_count + b.pixel_count) as f64;
        for i in 0..w.vector.len() {
            let recombined =
                (a.pixel_count as f64 * a.vector[i] + b.pixel_count as f64 * b.vector[i]) / n;
            assert!((w.vector[i] - recombined).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_region_is_reported_not_fatal() {
        let field = test_field(8, 2, 9);
        let head = small_head(2, 9);
        let regions = vec![
            RegionSpec {
                region_id: 1,
                rule: RegionRule::Buffer {
                    centroid_x: 1e7,
                    centroid_y: 1e7,
                    radius: 50.0,
                },
            },
            RegionSpec {
                region_id: 2,
                rule: RegionRule::Buffer {
                    centroid_x: 30.0,
                    centroid_y: -30.0,
                    radius: 25.0,
                },
            },
        ];
        let out = region_embed(&head, &field, &regions, PixelView::Raw).unwrap();
        assert!(out[0].is_none());
        assert!(out[1].is_some());
    }

    #[test]
    fn regions_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.csv");
        let regions = vec![
            RegionSpec {
                region_id: 5,
                rule: RegionRule::Buffer {
                    centroid_x: 12.5,
                    centroid_y: -40.0,
                    radius: 300.0,
                },
            },
            RegionSpec {
                region_id: 9,
                rule: RegionRule::Buffer {
                    centroid_x: 80.0,
                    centroid_y: -10.0,
                    radius: 150.0,
                },
            },
        ];
        write_regions_csv(&regions, &path).unwrap();
        assert_eq!(load_regions_csv(&path).unwrap(), regions);
    }

    #[test]
    fn mask_raster_groups_cells_by_id() {
        let data = vec![
            1.0,
            1.0,
            f32::NAN,
            2.0, // row 0
            1.0,
            2.0,
            2.0,
            f32::NAN, // row 1
        ];
        let mask = EmbeddingField::new(4, 2, 1, 0.0, 0.0, 10.0, 0, data).unwrap();
        let regions = regions_from_mask(&mask).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].region_id, 1);
        assert_eq!(
            regions[0].rule,
            RegionRule::Mask {
                cells: vec![(0, 0), (0, 1), (1, 0)]
            }
        );
        assert_eq!(regions[1].region_id, 2);
        assert_eq!(
            regions[1].rule,
            RegionRule::Mask {
                cells: vec![(0, 3), (1, 1), (1, 2)]
            }
        );
    }

    #[test]
    fn non_integral_mask_value_is_rejected() {
        let mask = EmbeddingField::new(2, 1, 1, 0.0, 0.0, 10.0, 0, vec![1.5, 2.0]).unwrap();
        assert!(regions_from_mask(&mask).is_err());
    }

    #[test]
    fn embeddings_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        let rows = vec![
            RegionEmbedding {
                region_id: 1,
                vector: vec![0.25, -1.5, 3.0],
                pixel_count: 7,
            },
            RegionEmbedding {
                region_id: 2,
                vector: vec![0.0, 0.125, -2.0],
                pixel_count: 1,
            },
        ];
        write_embeddings_csv(&rows, &path).unwrap();
        assert_eq!(read_embeddings_csv(&path).unwrap(), rows);
    }

    #[test]
    fn point_embeddings_mark_empty_buffers() {
        let field = test_field(8, 3, 10);
        let head = small_head(3, 10);
        let points = vec![(30.0, -30.0), (1e8, 1e8)];
        let out = embed_points(Some(&head), &field, &points, 50.0).unwrap();
        assert!(out[0].is_some());
        assert!(out[1].is_none());
        let raw = embed_points(None, &field, &points, 50.0).unwrap();
        assert_eq!(raw[0].as_ref().unwrap().vector.len(), 3);
    }
}

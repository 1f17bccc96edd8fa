//! Georeferenced multi-channel embedding rasters and circular-buffer mean
//! pooling.
//!
//! Conventions: the origin is the center of the top-left cell, y decreases
//! southward (row index increases southward), and a cell is nodata iff all
//! of its channel values are NaN. A cell contributes to a buffer iff its
//! center lies within the closed disk around the query point.
//!
//! On-disk format AEF1, little-endian: magic `AEF1`, version u32 = 1,
//! width u32, height u32, channels u32, origin_x f64, origin_y f64,
//! cell_size f64, crs_code i32, reserved i32 = 0, then width*height*channels
//! f32 values in [row][col][channel] order, row 0 northernmost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"AEF1";
pub const FIELD_VERSION: u32 = 1;
/// Header bytes before the f32 payload.
pub const FIELD_HEADER_LEN: usize = 52;
/// Canonical quiet NaN bit pattern written for nodata values.
pub const CANONICAL_NAN_BITS: u32 = 0x7FC0_0000;

/// Dense georeferenced raster with one f32 vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub crs_code: i32,
    data: Vec<f32>,
}

impl EmbeddingField {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        crs_code: i32,
        data: Vec<f32>,
    ) -> Result<Self> {
        let field = EmbeddingField {
            width,
            height,
            channels,
            origin_x,
            origin_y,
            cell_size,
            crs_code,
            data,
        };
        field.validate()?;
        Ok(field)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::InvalidField(format!(
                "dimensions must be >= 1, got {}x{}x{}",
                self.width, self.height, self.channels
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidField(format!(
                "cell_size must be positive and finite, got {}",
                self.cell_size
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidField("origin must be finite".into()));
        }
        let expect = self.width * self.height * self.channels;
        if self.data.len() != expect {
            return Err(Error::InvalidField(format!(
                "data length {} does not match {}x{}x{} = {}",
                self.data.len(),
                self.width,
                self.height,
                self.channels,
                expect
            )));
        }
        // Nodata is all-NaN per cell; a mix of NaN and finite values in one
        // cell indicates corruption.
        for (i, cell) in self.data.chunks_exact(self.channels).enumerate() {
            let nans = cell.iter().filter(|v| v.is_nan()).count();
            if nans != 0 && nans != self.channels {
                let row = i / self.width;
                let col = i % self.width;
                return Err(Error::InvalidField(format!(
                    "cell ({row}, {col}) mixes NaN and finite channel values"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// Relies on the all-or-none NaN invariant established at construction.
    #[inline]
    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.data[(row * self.width + col) * self.channels].is_nan()
    }

    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.cell_size,
            self.origin_y - row as f64 * self.cell_size,
        )
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Circular buffer query in map units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferQuery {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl BufferQuery {
    pub fn new(center_x: f64, center_y: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidConfig {
                field: "radius".into(),
                reason: format!("must be positive and finite, got {radius}"),
            });
        }
        Ok(BufferQuery {
            center_x,
            center_y,
            radius,
        })
    }
}

/// Per-channel mean over the contributing cells of one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Vec<f64>,
    pub pixel_count: usize,
}

/// Visits contributing cells (non-nodata, center within the closed disk) in
/// row-major order. Both the pooled mean and the member listing go through
/// here, so they can never disagree.
fn for_each_member(
    field: &EmbeddingField,
    query: &BufferQuery,
    mut visit: impl FnMut(usize, usize, &[f32]),
) {
    let s = field.cell_size;
    let r2 = query.radius * query.radius;
    // Bounding box widened by one cell so float rounding at the rim can only
    // add candidates, never drop true members.
    let col_lo = ((query.center_x - query.radius - field.origin_x) / s).floor() as i64 - 1;
    let col_hi = ((query.center_x + query.radius - field.origin_x) / s).ceil() as i64 + 1;
    let row_lo = ((field.origin_y - query.center_y - query.radius) / s).floor() as i64 - 1;
    let row_hi = ((field.origin_y - query.center_y + query.radius) / s).ceil() as i64 + 1;
    let col_lo = col_lo.clamp(0, field.width as i64 - 1) as usize;
    let col_hi = col_hi.clamp(0, field.width as i64 - 1) as usize;
    let row_lo = row_lo.clamp(0, field.height as i64 - 1) as usize;
    let row_hi = row_hi.clamp(0, field.height as i64 - 1) as usize;

    for row in row_lo..=row_hi {
        let dy = (field.origin_y - query.center_y) - row as f64 * s;
        for col in col_lo..=col_hi {
            let dx = (field.origin_x - query.center_x) + col as f64 * s;
            if dx * dx + dy * dy <= r2 && !field.is_nodata(row, col) {
                visit(row, col, field.cell(row, col));
            }
        }
    }
}

/// Contributing cells of a buffer in row-major order.
pub fn buffer_members(field: &EmbeddingField, query: &BufferQuery) -> Vec<(usize, usize)> {
    let mut members = Vec::new();
    for_each_member(field, query, |row, col, _| members.push((row, col)));
    members
}

/// Per-channel arithmetic mean over the buffer's contributing cells,
/// accumulated at 64-bit. An entirely empty buffer (outside the raster or
/// all nodata) is a distinct error so callers can drop the query point.
pub fn pool_buffer(field: &EmbeddingField, query: &BufferQuery) -> Result<PooledVector> {
    if !(query.radius > 0.0) || !query.radius.is_finite() {
        return Err(Error::InvalidConfig {
            field: "radius".into(),
            reason: format!("must be positive and finite, got {}", query.radius),
        });
    }
    let mut sums = vec![0.0f64; field.channels];
    let mut count = 0usize;
    for_each_member(field, query, |_, _, cell| {
        for (s, v) in sums.iter_mut().zip(cell) {
            *s += f64::from(*v);
        }
        count += 1;
    });
    if count == 0 {
        return Err(Error::EmptyBuffer {
            center_x: query.center_x,
            center_y: query.center_y,
            radius: query.radius,
        });
    }
    let inv = 1.0 / count as f64;
    for s in sums.iter_mut() {
        *s *= inv;
    }
    Ok(PooledVector {
        values: sums,
        pixel_count: count,
    })
}

/// Pools every query; element `i` equals `pool_buffer(field, queries[i])`,
/// with `None` marking an empty buffer. Runs in parallel but the output
/// order and values are identical to a sequential loop.
pub fn pool_buffer_batch(
    field: &EmbeddingField,
    queries: &[BufferQuery],
) -> Result<Vec<Option<PooledVector>>> {
    queries
        .par_iter()
        .map(|q| match pool_buffer(field, q) {
            Ok(p) => Ok(Some(p)),
            Err(Error::EmptyBuffer { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

pub fn write_field(field: &EmbeddingField, path: &Path) -> Result<()> {
    field.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(FIELD_MAGIC)?;
    emit(&FIELD_VERSION.to_le_bytes())?;
    emit(&(field.width as u32).to_le_bytes())?;
    emit(&(field.height as u32).to_le_bytes())?;
    emit(&(field.channels as u32).to_le_bytes())?;
    emit(&field.origin_x.to_le_bytes())?;
    emit(&field.origin_y.to_le_bytes())?;
    emit(&field.cell_size.to_le_bytes())?;
    emit(&field.crs_code.to_le_bytes())?;
    emit(&0i32.to_le_bytes())?;
    for v in &field.data {
        let bits = if v.is_nan() {
            CANONICAL_NAN_BITS
        } else {
            v.to_bits()
        };
        emit(&bits.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<EmbeddingField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_bytes(&mut r, &mut magic, path)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::BadMagic {
            format: "AEF1",
            path: path.to_path_buf(),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != FIELD_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "AEF1",
            version,
            path: path.to_path_buf(),
        });
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let channels = read_u32(&mut r, path)? as usize;
    let origin_x = read_f64(&mut r, path)?;
    let origin_y = read_f64(&mut r, path)?;
    let cell_size = read_f64(&mut r, path)?;
    let crs_code = read_i32(&mut r, path)?;
    let _reserved = read_i32(&mut r, path)?;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("dimensions overflow: {width}x{height}x{channels}"),
        })?;
    let expected = FIELD_HEADER_LEN as u64 + 4 * count as u64;
    if len < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            got: len,
        });
    }

    let mut payload = vec![0u8; 4 * count];
    read_bytes(&mut r, &mut payload, path)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    EmbeddingField::new(
        width, height, channels, origin_x, origin_y, cell_size, crs_code, data,
    )
}

fn read_bytes(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected: buf.len() as u64,
                got: 0,
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32(r: &mut impl Read, path: &Path) -> Result<i32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, path)?;
    Ok(i32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, path)?;
    Ok(f64::from_le_bytes(b))
}

//! One-factor sensitivity sweeps: loss weight, buffer radii, and training
//! fraction. Each setting reruns pretraining and both downstream tasks with
//! fixed seeds and lands in one CSV row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::align::{pretrain, AlignmentConfig};
use crate::error::{Error, Result};
use crate::fieldgrid::EmbeddingField;
use crate::infer::{embed_points, region_embed, PixelView, RegionSpec};
use crate::poi::{PoiRecord, TextEmbedding};
use crate::rng;

use super::train::{
    train_luc, train_sdm, DistributionTarget, LucSample, SplitSpec, TaskHeadConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Buffers,
    Fraction,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "buffers" => Ok(SweepAxis::Buffers),
            "fraction" => Ok(SweepAxis::Fraction),
            other => Err(Error::InvalidConfig {
                field: "axis".into(),
                reason: format!("unknown axis `{other}` (expected lambda, buffers, or fraction)"),
            }),
        }
    }
}

/// Loss-weight grid 0.0, 0.1, ..., 0.9.
pub fn lambda_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 * 0.1).collect()
}

/// The six (r_b, r_a) pairs of the buffer-radius study, r_a > r_b.
pub fn buffer_grid() -> Vec<(f64, f64)> {
    vec![
        (25.0, 50.0),
        (25.0, 75.0),
        (25.0, 100.0),
        (50.0, 75.0),
        (50.0, 100.0),
        (50.0, 125.0),
    ]
}

/// Training-fraction grid 0.1, 0.2, ..., 1.0.
pub fn fraction_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.1).collect()
}

/// Nested POI subsets: prefixes of one seeded permutation, so the 10%
/// subset is contained in the 20% subset and so on. Sizes are rounded and
/// floored at one.
pub fn nested_subsets(n: usize, seed: u64) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = rng::stream(seed, "fraction-subsets");
    order.shuffle(&mut stream);
    fraction_grid()
        .into_iter()
        .map(|frac| {
            let take = ((n as f64 * frac).round() as usize).clamp(1, n);
            let mut idx = order[..take].to_vec();
            idx.sort_unstable();
            (frac, idx)
        })
        .collect()
}

/// Everything one sweep needs: the world, the base configuration, and the
/// evaluation protocol.
pub struct SweepInputs<'a> {
    pub field: &'a EmbeddingField,
    pub pois: &'a [PoiRecord],
    pub text: &'a [TextEmbedding],
    pub luc: &'a [LucSample],
    pub num_classes: usize,
    pub luc_radius: f64,
    pub regions: &'a [RegionSpec],
    pub targets: &'a [DistributionTarget],
    pub base: AlignmentConfig,
    pub head_cfg: TaskHeadConfig,
    pub split: SplitSpec,
    pub seeds: &'a [u64],
}

/// One sweep result row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub setting: String,
    pub luc_f1: f64,
    pub sdm_kl: f64,
    pub status: String,
}

/// Runs the named axis, one row per setting. A failed setting is recorded
/// with NaN metrics and an error status; the sweep continues.
pub fn sweep(axis: SweepAxis, inputs: &SweepInputs<'_>) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    let run = |cfg: AlignmentConfig, subset: Option<&[usize]>| -> Result<(f64, f64)> {
        run_setting(inputs, cfg, subset)
    };
    match axis {
        SweepAxis::Lambda => {
            for lambda in lambda_grid() {
                let cfg = AlignmentConfig {
                    lambda,
                    ..inputs.base.clone()
                };
                rows.push(row_from("lambda", format!("{lambda:.1}"), run(cfg, None)));
            }
        }
        SweepAxis::Buffers => {
            for (r_b, r_a) in buffer_grid() {
                let cfg = AlignmentConfig {
                    r_b,
                    r_a,
                    ..inputs.base.clone()
                };
                rows.push(row_from(
                    "buffers",
                    format!("rb={r_b:.0},ra={r_a:.0}"),
                    run(cfg, None),
                ));
            }
        }
        SweepAxis::Fraction => {
            for (frac, subset) in nested_subsets(inputs.pois.len(), inputs.base.seed) {
                rows.push(row_from(
                    "fraction",
                    format!("{frac:.1}"),
                    run(inputs.base.clone(), Some(&subset)),
                ));
            }
        }
    }
    rows
}

fn row_from(axis: &str, setting: String, result: Result<(f64, f64)>) -> SweepRow {
    match result {
        Ok((luc_f1, sdm_kl)) => SweepRow {
            axis: axis.into(),
            setting,
            luc_f1,
            sdm_kl,
            status: "ok".into(),
        },
        Err(e) => {
            log::warn!("sweep setting {setting} failed: {e}");
            SweepRow {
                axis: axis.into(),
                setting,
                luc_f1: f64::NAN,
                sdm_kl: f64::NAN,
                status: format!("error: {e}"),
            }
        }
    }
}

/// Pretrain with one setting, embed both task inputs, train both heads, and
/// return (mean LUC F1, mean SDM KL).
fn run_setting(
    inputs: &SweepInputs<'_>,
    cfg: AlignmentConfig,
    subset: Option<&[usize]>,
) -> Result<(f64, f64)> {
    let filtered: Vec<PoiRecord>;
    let pois: &[PoiRecord] = match subset {
        Some(idx) => {
            filtered = idx.iter().map(|&i| inputs.pois[i].clone()).collect();
            &filtered
        }
        None => inputs.pois,
    };
    let outcome = pretrain(inputs.field, pois, inputs.text, &cfg)?;
    let head = &outcome.model.head;

    // Land-use: one pooled buffer per sample point through the head.
    let points: Vec<(f64, f64)> = inputs.luc.iter().map(|s| (s.x, s.y)).collect();
    let embedded = embed_points(Some(head), inputs.field, &points, inputs.luc_radius)?;
    let mut x_luc = Vec::new();
    let mut y_luc = Vec::new();
    for (e, sample) in embedded.into_iter().zip(inputs.luc) {
        if let Some(e) = e {
            x_luc.push(e.vector);
            y_luc.push(sample.label);
        }
    }
    let (_, luc_report) = train_luc(
        &x_luc,
        &y_luc,
        inputs.num_classes,
        &inputs.split,
        &inputs.head_cfg,
        inputs.seeds,
    )?;

    // Distribution mapping: region means of per-pixel base views.
    let region_embeds = region_embed(
        head,
        inputs.field,
        inputs.regions,
        PixelView::Buffered { radius: cfg.r_b },
    )?;
    let mut x_sdm = Vec::new();
    let mut q_sdm = Vec::new();
    for (e, target) in region_embeds.into_iter().zip(inputs.targets) {
        if let Some(e) = e {
            if e.region_id != target.region_id {
                return Err(Error::Task(format!(
                    "region id mismatch: embedding {} vs target {}",
                    e.region_id, target.region_id
                )));
            }
            x_sdm.push(e.vector);
            q_sdm.push(target.clone());
        }
    }
    let (_, sdm_report) = train_sdm(&x_sdm, &q_sdm, &inputs.split, &inputs.head_cfg, inputs.seeds)?;

    Ok((
        luc_report.metric("f1").map(|m| m.mean).unwrap_or(f64::NAN),
        sdm_report.metric("kl").map(|m| m.mean).unwrap_or(f64::NAN),
    ))
}

/// Writes sweep rows as `axis,setting,luc_f1,sdm_kl,status`.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "axis,setting,luc_f1,sdm_kl,status").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.axis, r.setting, r.luc_f1, r.sdm_kl, r.status
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

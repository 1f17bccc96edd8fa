//! Command implementations behind the `aether` binary: synth, pretrain,
//! embed, eval, and sweep. Each command reads its inputs from the paths in
//! [`PipelineConfig`], writes its outputs under `out_dir`, and is
//! idempotent: identical inputs and seeds reproduce bit-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::align::{
    load_train_state, precompute_views, pretrain_views, read_training_log, save_train_state,
    text_matrix, AlignmentModel, EpochStats, PretrainOutcome,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fieldgrid::{read_field, EmbeddingField};
use crate::infer::{
    embed_points, load_regions_csv, read_embeddings_csv, region_embed, region_embed_raw,
    regions_from_mask, write_embeddings_csv, PixelView, RegionEmbedding, RegionSpec,
};
use crate::poi::{load_pois, load_text_embeddings};
use crate::synth::{generate, write_bundle};
use crate::tasks::{
    load_luc_csv, load_sdm_csv, sweep, train_luc, train_sdm, write_sweep_csv, DistributionTarget,
    EvalReport, SweepAxis, SweepInputs,
};

/// Which downstream task `cmd_eval` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Luc,
    Sdm,
}

impl std::str::FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luc" => Ok(EvalTask::Luc),
            "sdm" => Ok(EvalTask::Sdm),
            other => Err(Error::InvalidConfig {
                field: "task".into(),
                reason: format!("unknown task `{other}` (expected luc or sdm)"),
            }),
        }
    }
}

/// Generates the synthetic bundle into `out_dir/synth`. Returns the
/// manifest path.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<PathBuf> {
    let world = generate(&cfg.synth)?;
    let manifest = write_bundle(&world, &cfg.synth_dir())?;
    log::info!(
        "synthetic bundle: {} POIs, {} regions, {} land-use samples",
        world.pois.len(),
        world.regions.len(),
        world.luc.len()
    );
    Ok(manifest)
}

/// Outcome summary of a pretraining command.
#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub state: PathBuf,
    pub log: PathBuf,
    pub best_epoch: i64,
    pub best_l_ap: f64,
    pub dropped_pois: usize,
    pub epochs_run: usize,
}

/// Trains the alignment model and writes the best checkpoint, the full
/// training state, and the per-epoch log. `resume` continues from a saved
/// state file, reproducing the uninterrupted run exactly.
pub fn cmd_pretrain(cfg: &PipelineConfig, resume: Option<&Path>) -> Result<PretrainSummary> {
    cfg.alignment.validate()?;
    let field = read_field(&cfg.field_path())?;
    let pois = load_pois(&cfg.pois_path())?;
    let text = load_text_embeddings(&cfg.text_path(), &pois)?;

    let views = precompute_views(&field, &pois, cfg.alignment.r_b, cfg.alignment.r_a)?;
    if views.is_empty() {
        return Err(Error::Training(
            "all POIs dropped: every base or augmented buffer was empty".into(),
        ));
    }
    let text_mat = text_matrix(&pois, &views.kept, &text)?;

    let mut prior_log: Vec<EpochStats> = Vec::new();
    let state = match resume {
        Some(path) => {
            let state = load_train_state(path, &cfg.alignment)?;
            if cfg.train_log_path().exists() {
                prior_log = read_training_log(&cfg.train_log_path())?
                    .into_iter()
                    .filter(|row| row.epoch < state.next_epoch)
                    .collect();
            }
            Some(state)
        }
        None => None,
    };

    let PretrainOutcome {
        model,
        best_epoch,
        log,
        state,
        ..
    } = pretrain_views(&views, &text_mat, &cfg.alignment, state)?;

    std::fs::create_dir_all(cfg.pretrain_dir()).map_err(|e| Error::io(cfg.pretrain_dir(), e))?;
    model.save_checkpoint(&cfg.checkpoint_path())?;
    save_train_state(&state, &cfg.train_state_path())?;
    let epochs_run = log.len();
    prior_log.extend(log);
    crate::align::write_training_log(&prior_log, &cfg.train_log_path())?;

    log::info!(
        "pretraining done: best epoch {best_epoch}, cross-modal loss {:.6}",
        state.best_lap
    );
    Ok(PretrainSummary {
        checkpoint: cfg.checkpoint_path(),
        state: cfg.train_state_path(),
        log: cfg.train_log_path(),
        best_epoch,
        best_l_ap: state.best_lap,
        dropped_pois: views.dropped,
        epochs_run,
    })
}

fn load_regions(path: &Path) -> Result<Vec<RegionSpec>> {
    if path.extension().and_then(|e| e.to_str()) == Some("aef") {
        regions_from_mask(&read_field(path)?)
    } else {
        load_regions_csv(path)
    }
}

/// Output files of `cmd_embed`.
#[derive(Debug, Clone)]
pub struct EmbedSummary {
    pub luc_aligned: PathBuf,
    pub luc_raw: PathBuf,
    pub sdm_aligned: PathBuf,
    pub sdm_raw: PathBuf,
}

/// Embeds land-use sample points and regions, both through the trained head
/// and as raw pooled field baselines.
pub fn cmd_embed(cfg: &PipelineConfig) -> Result<EmbedSummary> {
    let checkpoint_path = cfg.checkpoint_path();
    if !checkpoint_path.exists() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint at {} (run pretrain first)",
            checkpoint_path.display()
        )));
    }
    let model = AlignmentModel::load_checkpoint(&checkpoint_path)?;
    let field = read_field(&cfg.field_path())?;
    if model.head.input_dim() != field.channels {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {} field channels, field has {}",
            model.head.input_dim(),
            field.channels
        )));
    }

    let dir = cfg.embed_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out = EmbedSummary {
        luc_aligned: dir.join("luc_aligned.csv"),
        luc_raw: dir.join("luc_raw.csv"),
        sdm_aligned: dir.join("sdm_aligned.csv"),
        sdm_raw: dir.join("sdm_raw.csv"),
    };

    // Land-use sample points: one pooled buffer per point.
    let samples = load_luc_csv(&cfg.luc_path())?;
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.x, s.y)).collect();
    let radius = cfg.eval.luc_radius;
    let aligned = embed_points(Some(&model.head), &field, &points, radius)?;
    let raw = embed_points(None, &field, &points, radius)?;
    write_embeddings_csv(&keep_some(aligned, "land-use point"), &out.luc_aligned)?;
    write_embeddings_csv(&keep_some(raw, "land-use point"), &out.luc_raw)?;

    // Regions: per-pixel base views averaged per region, using the base
    // radius the checkpoint was trained with; the raw baseline pools the
    // region buffer directly.
    let regions = load_regions(&cfg.regions_path())?;
    let aligned = region_embed(
        &model.head,
        &field,
        &regions,
        PixelView::Buffered { radius: model.r_b },
    )?;
    let raw = region_embed_raw(&field, &regions)?;
    write_embeddings_csv(&keep_some(aligned, "region"), &out.sdm_aligned)?;
    write_embeddings_csv(&keep_some(raw, "region"), &out.sdm_raw)?;
    Ok(out)
}

fn keep_some(rows: Vec<Option<RegionEmbedding>>, what: &str) -> Vec<RegionEmbedding> {
    let total = rows.len();
    let kept: Vec<RegionEmbedding> = rows.into_iter().flatten().collect();
    if kept.len() < total {
        log::warn!("{} of {total} {what}s had empty buffers", total - kept.len());
    }
    kept
}

/// Trains and evaluates one task over the configured seeds, writing a
/// report with one block per available embedding input (aligned and raw).
pub fn cmd_eval(cfg: &PipelineConfig, task: EvalTask) -> Result<PathBuf> {
    let dir = cfg.eval_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let split = cfg.split_spec();
    let seeds = &cfg.eval.seeds;

    let mut blocks: Vec<(String, EvalReport)> = Vec::new();
    match task {
        EvalTask::Luc => {
            let samples = load_luc_csv(&cfg.luc_path())?;
            let num_classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
            for (name, file) in [
                ("aligned", cfg.embed_dir().join("luc_aligned.csv")),
                ("raw", cfg.embed_dir().join("luc_raw.csv")),
            ] {
                if !file.exists() {
                    continue;
                }
                let rows = read_embeddings_csv(&file)?;
                let mut x = Vec::with_capacity(rows.len());
                let mut y = Vec::with_capacity(rows.len());
                for row in rows {
                    let idx = row.region_id as usize;
                    if idx >= samples.len() {
                        return Err(Error::Task(format!(
                            "embedding id {idx} has no matching land-use sample"
                        )));
                    }
                    x.push(row.vector);
                    y.push(samples[idx].label);
                }
                let (_, report) = train_luc(&x, &y, num_classes, &split, &cfg.task_head, seeds)?;
                blocks.push((name.to_string(), report));
            }
        }
        EvalTask::Sdm => {
            let targets = load_sdm_csv(&cfg.sdm_path())?;
            for (name, file) in [
                ("aligned", cfg.embed_dir().join("sdm_aligned.csv")),
                ("raw", cfg.embed_dir().join("sdm_raw.csv")),
            ] {
                if !file.exists() {
                    continue;
                }
                let rows = read_embeddings_csv(&file)?;
                let mut x = Vec::with_capacity(rows.len());
                let mut q: Vec<DistributionTarget> = Vec::with_capacity(rows.len());
                for row in rows {
                    let target = targets
                        .iter()
                        .find(|t| t.region_id == row.region_id)
                        .ok_or_else(|| {
                            Error::Task(format!(
                                "embedding region {} has no matching target",
                                row.region_id
                            ))
                        })?;
                    x.push(row.vector);
                    q.push(target.clone());
                }
                let (_, report) = train_sdm(&x, &q, &split, &cfg.task_head, seeds)?;
                blocks.push((name.to_string(), report));
            }
        }
    }
    if blocks.is_empty() {
        return Err(Error::Task(
            "no embedding files found (run embed first)".into(),
        ));
    }

    let out = dir.join(match task {
        EvalTask::Luc => "report_luc.csv",
        EvalTask::Sdm => "report_sdm.csv",
    });
    write_eval_report(&blocks, &out)?;
    Ok(out)
}

/// Writes report blocks as `input,metric,mean,std` rows.
pub fn write_eval_report(blocks: &[(String, EvalReport)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "input,metric,mean,std").map_err(|e| Error::io(path, e))?;
    for (name, report) in blocks {
        for m in &report.metrics {
            writeln!(w, "{},{},{},{}", name, m.name, m.mean, m.std)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a report written by [`write_eval_report`] into (input, metric,
/// mean, std) rows.
pub fn read_eval_report(path: &Path) -> Result<Vec<(String, String, f64, f64)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 4 fields", i + 1),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: bad float", i + 1),
            })
        };
        out.push((
            parts[0].to_string(),
            parts[1].to_string(),
            parse(parts[2])?,
            parse(parts[3])?,
        ));
    }
    Ok(out)
}

/// Runs the one-factor sweep on the named axis and writes its CSV.
pub fn cmd_sweep(cfg: &PipelineConfig, axis: SweepAxis) -> Result<PathBuf> {
    let field = read_field(&cfg.field_path())?;
    let pois = load_pois(&cfg.pois_path())?;
    let text = load_text_embeddings(&cfg.text_path(), &pois)?;
    let luc = load_luc_csv(&cfg.luc_path())?;
    let regions = load_regions(&cfg.regions_path())?;
    let targets = load_sdm_csv(&cfg.sdm_path())?;
    let num_classes = luc.iter().map(|s| s.label).max().unwrap_or(0) + 1;

    let mut base = cfg.alignment.clone();
    if cfg.sweep.epochs > 0 {
        base.epochs = cfg.sweep.epochs;
    }
    let inputs = SweepInputs {
        field: &field,
        pois: &pois,
        text: &text,
        luc: &luc,
        num_classes,
        luc_radius: cfg.eval.luc_radius,
        regions: &regions,
        targets: &targets,
        base,
        head_cfg: cfg.task_head,
        split: cfg.split_spec(),
        seeds: &cfg.sweep.seeds,
    };
    let rows = sweep(axis, &inputs);

    let dir = cfg.sweep_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out = dir.join(format!(
        "sweep_{}.csv",
        match axis {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Buffers => "buffers",
            SweepAxis::Fraction => "fraction",
        }
    ));
    write_sweep_csv(&rows, &out)?;
    Ok(out)
}

/// Convenience wrapper used by tests and examples: embed both tasks from an
/// in-memory model without touching checkpoint files.
pub fn embed_for_eval(
    model: &AlignmentModel,
    field: &EmbeddingField,
    luc_points: &[(f64, f64)],
    luc_radius: f64,
    regions: &[RegionSpec],
) -> Result<(
    Vec<Option<RegionEmbedding>>,
    Vec<Option<RegionEmbedding>>,
    Vec<Option<RegionEmbedding>>,
    Vec<Option<RegionEmbedding>>,
)> {
    let luc_aligned = embed_points(Some(&model.head), field, luc_points, luc_radius)?;
    let luc_raw = embed_points(None, field, luc_points, luc_radius)?;
    let sdm_aligned = region_embed(
        &model.head,
        field,
        regions,
        PixelView::Buffered { radius: model.r_b },
    )?;
    let sdm_raw = region_embed_raw(field, regions)?;
    Ok((luc_aligned, luc_raw, sdm_aligned, sdm_raw))
}

//! Contrastive alignment: the dual-scale symmetric InfoNCE objective and the
//! pretraining loop.
//!
//! Each POI contributes a triplet of unit vectors: a base-view field
//! embedding, a wider augmented-view embedding, and a projected text
//! embedding. Two losses act on a batch of N triplets:
//!
//! * intra-modal consistency between the base and augmented views,
//! * cross-modal alignment between the base view and the POI text,
//!
//! each a symmetric InfoNCE over in-batch negatives with both logsumexp
//! directions and a 1/(2N) factor, combined as
//! `lambda * L_intra + (1 - lambda) * L_cross`.
//!
//! Training uses AdamW; the checkpoint with the lowest epoch-mean
//! cross-modal loss on the training set is kept ("best-on-train"). Buffer
//! pooling is precomputed once before the first epoch since POIs are
//! static. Training state (64-bit parameters and optimizer moments) can be
//! saved and restored, so an interrupted run continues exactly where it
//! stopped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldgrid::{pool_buffer_batch, BufferQuery, EmbeddingField};
use crate::nn::{
    adamw_step, axpy, check_finite, dot, pairwise_sum, read_checkpoint, write_checkpoint,
    AdamWConfig, AdamWState, AeProjectionHead, HeadCache, HeadGrads, NamedTensor, PoiProjector,
    Tensor2D,
};
use crate::poi::{PoiRecord, TextEmbedding};
use crate::rng;

/// Rows processed per gradient-accumulation chunk. Fixed (not derived from
/// the thread count) so reductions are bit-identical for any parallelism.
const GRAD_CHUNK: usize = 64;

pub const STATE_MAGIC: &[u8; 4] = b"AES1";
pub const STATE_VERSION: u32 = 1;

/// Hyperparameters of one alignment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Weight of the intra-modal loss, in [0, 1).
    pub lambda: f64,
    pub tau_ae: f64,
    pub tau_poi: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Base buffer radius in meters.
    pub r_b: f64,
    /// Augmented buffer radius in meters; must exceed `r_b`.
    pub r_a: f64,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub optimizer: AdamWConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            lambda: 0.2,
            tau_ae: 0.07,
            tau_poi: 0.07,
            batch_size: 512,
            epochs: 100,
            seed: 0,
            r_b: 50.0,
            r_a: 100.0,
            hidden_dim: 256,
            out_dim: 128,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        if !(0.0..1.0).contains(&self.lambda) {
            return bad("lambda", format!("must be in [0, 1), got {}", self.lambda));
        }
        if !(self.tau_ae > 0.0) {
            return bad("tau_ae", format!("must be positive, got {}", self.tau_ae));
        }
        if !(self.tau_poi > 0.0) {
            return bad("tau_poi", format!("must be positive, got {}", self.tau_poi));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.r_b > 0.0) || !(self.r_a > self.r_b) {
            return bad(
                "r_a",
                format!(
                    "need r_a > r_b > 0, got r_b = {}, r_a = {}",
                    self.r_b, self.r_a
                ),
            );
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return bad("hidden_dim", "head dimensions must be at least 1".into());
        }
        Ok(())
    }
}

/// Trained alignment parameters plus the settings inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub head: AeProjectionHead,
    pub projector: PoiProjector,
    pub lambda: f64,
    pub tau_ae: f64,
    pub tau_poi: f64,
    pub r_b: f64,
    pub r_a: f64,
}

pub const PARAM_NAMES: [&str; 9] = [
    "w_in", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "gate_w", "gate_b", "w_out", "poi_w",
];
pub const PARAM_DECAY: [bool; 9] = [true, true, false, true, false, true, false, true, true];

impl AlignmentModel {
    pub fn init(cfg: &AlignmentConfig, input_dim: usize, text_dim: usize) -> Self {
        AlignmentModel {
            head: AeProjectionHead::init(input_dim, cfg.hidden_dim, cfg.out_dim, cfg.seed),
            projector: PoiProjector::init(text_dim, cfg.out_dim, cfg.seed),
            lambda: cfg.lambda,
            tau_ae: cfg.tau_ae,
            tau_poi: cfg.tau_poi,
            r_b: cfg.r_b,
            r_a: cfg.r_a,
        }
    }

    pub fn param_lens(&self) -> [usize; 9] {
        [
            self.head.w_in.data.len(),
            self.head.mlp_w1.data.len(),
            self.head.mlp_b1.len(),
            self.head.mlp_w2.data.len(),
            self.head.mlp_b2.len(),
            self.head.gate_w.data.len(),
            self.head.gate_b.len(),
            self.head.w_out.data.len(),
            self.projector.w.data.len(),
        ]
    }

    pub fn params(&self) -> [&[f64]; 9] {
        [
            &self.head.w_in.data,
            &self.head.mlp_w1.data,
            &self.head.mlp_b1,
            &self.head.mlp_w2.data,
            &self.head.mlp_b2,
            &self.head.gate_w.data,
            &self.head.gate_b,
            &self.head.w_out.data,
            &self.projector.w.data,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 9] {
        let AlignmentModel {
            head, projector, ..
        } = self;
        [
            head.w_in.data.as_mut_slice(),
            head.mlp_w1.data.as_mut_slice(),
            head.mlp_b1.as_mut_slice(),
            head.mlp_w2.data.as_mut_slice(),
            head.mlp_b2.as_mut_slice(),
            head.gate_w.data.as_mut_slice(),
            head.gate_b.as_mut_slice(),
            head.w_out.data.as_mut_slice(),
            projector.w.data.as_mut_slice(),
        ]
    }

    fn param_dims(&self) -> [Vec<u32>; 9] {
        let h = self.head.hidden_dim() as u32;
        let d = self.head.output_dim() as u32;
        [
            vec![h, self.head.input_dim() as u32],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![d, h],
            vec![d, self.projector.text_dim() as u32],
        ]
    }

    /// Checkpoint tensors: the nine canonical parameters at f32 plus a
    /// `meta` tensor carrying (lambda, tau_ae, tau_poi, r_b, r_a) so
    /// inference inherits the training radii.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let dims = self.param_dims();
        let mut out: Vec<NamedTensor> = PARAM_NAMES
            .iter()
            .zip(self.params())
            .zip(dims)
            .map(|((name, data), dims)| NamedTensor::from_f64(name, dims, data))
            .collect();
        out.push(NamedTensor::new(
            "meta",
            vec![5],
            vec![
                self.lambda as f32,
                self.tau_ae as f32,
                self.tau_poi as f32,
                self.r_b as f32,
                self.r_a as f32,
            ],
        ));
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let by_name: HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let get = |name: &str| -> Result<&NamedTensor> {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let mat = |name: &str| -> Result<Tensor2D> {
            let t = get(name)?;
            if t.dims.len() != 2 {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has rank {}, expected 2",
                    t.dims.len()
                )));
            }
            Tensor2D::from_vec(t.dims[0] as usize, t.dims[1] as usize, t.to_f64())
        };
        let vec1 = |name: &str| -> Result<Vec<f64>> {
            let t = get(name)?;
            if t.dims.len() != 1 {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has rank {}, expected 1",
                    t.dims.len()
                )));
            }
            Ok(t.to_f64())
        };
        let meta = vec1("meta")?;
        if meta.len() != 5 {
            return Err(Error::Checkpoint(format!(
                "meta tensor has {} entries, expected 5",
                meta.len()
            )));
        }
        let head = AeProjectionHead {
            w_in: mat("w_in")?,
            mlp_w1: mat("mlp_w1")?,
            mlp_b1: vec1("mlp_b1")?,
            mlp_w2: mat("mlp_w2")?,
            mlp_b2: vec1("mlp_b2")?,
            gate_w: mat("gate_w")?,
            gate_b: vec1("gate_b")?,
            w_out: mat("w_out")?,
        };
        let projector = PoiProjector { w: mat("poi_w")? };
        if projector.output_dim() != head.output_dim() {
            return Err(Error::Checkpoint(format!(
                "projector output {} does not match head output {}",
                projector.output_dim(),
                head.output_dim()
            )));
        }
        Ok(AlignmentModel {
            head,
            projector,
            lambda: meta[0],
            tau_ae: meta[1],
            tau_poi: meta[2],
            r_b: meta[3],
            r_a: meta[4],
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_tensors())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_tensors(&read_checkpoint(path)?)
    }
}

/// A batch of aligned unit-norm triplets, one row per POI.
#[derive(Debug, Clone)]
pub struct AlignmentBatch {
    pub z_base: Tensor2D,
    pub z_aug: Tensor2D,
    pub z_poi: Tensor2D,
}

impl AlignmentBatch {
    pub fn new(z_base: Tensor2D, z_aug: Tensor2D, z_poi: Tensor2D) -> Result<Self> {
        let n = z_base.rows;
        let d = z_base.cols;
        for (name, m) in [("z_aug", &z_aug), ("z_poi", &z_poi)] {
            if m.rows != n || m.cols != d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {n}x{d}",
                    m.rows, m.cols
                )));
            }
        }
        for (name, m) in [("z_base", &z_base), ("z_aug", &z_aug), ("z_poi", &z_poi)] {
            for r in 0..m.rows {
                let norm = dot(m.row(r), m.row(r)).sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(Error::Training(format!(
                        "{name} row {r} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(AlignmentBatch {
            z_base,
            z_aug,
            z_poi,
        })
    }

    pub fn len(&self) -> usize {
        self.z_base.rows
    }

    pub fn is_empty(&self) -> bool {
        self.z_base.rows == 0
    }
}

/// Symmetric InfoNCE between the rows of `left` and `right` with matching
/// rows as positives. Returns the loss and the gradients with respect to
/// both matrices. Logsumexp uses max subtraction; row and column sums use
/// pairwise summation.
fn symmetric_infonce(left: &Tensor2D, right: &Tensor2D, tau: f64) -> (f64, Tensor2D, Tensor2D) {
    let n = left.rows;
    let d = left.cols;
    debug_assert!(n >= 1);
    let inv_tau = 1.0 / tau;

    // Similarity logits s[i][j] = <left_i, right_j> / tau.
    let mut s = Tensor2D::zeros(n, n);
    s.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let li = left.row(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = dot(li, right.row(j)) * inv_tau;
        }
    });

    // Row statistics (left -> right direction).
    let row_stats: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = s.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            (m, pairwise_sum(&exps))
        })
        .collect();
    // Column statistics (right -> left direction).
    let col_stats: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut m = f64::NEG_INFINITY;
            for i in 0..n {
                m = m.max(s.get(i, j));
            }
            let exps: Vec<f64> = (0..n).map(|i| (s.get(i, j) - m).exp()).collect();
            (m, pairwise_sum(&exps))
        })
        .collect();

    let row_terms: Vec<f64> = (0..n)
        .map(|i| row_stats[i].0 + row_stats[i].1.ln() - s.get(i, i))
        .collect();
    let col_terms: Vec<f64> = (0..n)
        .map(|j| col_stats[j].0 + col_stats[j].1.ln() - s.get(j, j))
        .collect();
    let scale = 1.0 / (2.0 * n as f64);
    let loss = (pairwise_sum(&row_terms) + pairwise_sum(&col_terms)) * scale;

    // dL/ds[i][j] = (P_ij + Q_ij - 2 delta_ij) / (2N), where P is the row
    // softmax and Q the column softmax. Reuses the logit storage.
    s.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let (rm, rs) = row_stats[i];
        for (j, v) in row.iter_mut().enumerate() {
            let (cm, cs) = col_stats[j];
            let p = (*v - rm).exp() / rs;
            let q = (*v - cm).exp() / cs;
            let delta = if i == j { 2.0 } else { 0.0 };
            *v = (p + q - delta) * scale;
        }
    });

    // dL/dleft = ds . right / tau;  dL/dright = ds^T . left / tau.
    let mut d_left = Tensor2D::zeros(n, d);
    d_left
        .data
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out)| {
            let srow = s.row(i);
            for j in 0..n {
                axpy(srow[j] * inv_tau, right.row(j), out);
            }
        });
    let mut d_right = Tensor2D::zeros(n, d);
    d_right
        .data
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(j, out)| {
            for i in 0..n {
                axpy(s.get(i, j) * inv_tau, left.row(i), out);
            }
        });

    (loss, d_left, d_right)
}

/// Intra-modal consistency loss between the base and augmented views.
/// Returns (loss, d/d z_base, d/d z_aug).
pub fn loss_intra(batch: &AlignmentBatch, tau_ae: f64) -> Result<(f64, Tensor2D, Tensor2D)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    Ok(symmetric_infonce(&batch.z_base, &batch.z_aug, tau_ae))
}

/// Cross-modal alignment loss between the base view and the POI text.
/// Returns (loss, d/d z_base, d/d z_poi).
pub fn loss_cross(batch: &AlignmentBatch, tau_poi: f64) -> Result<(f64, Tensor2D, Tensor2D)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    Ok(symmetric_infonce(&batch.z_base, &batch.z_poi, tau_poi))
}

/// Both losses and their convex combination.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l_ae: f64,
    pub l_ap: f64,
    pub l_total: f64,
    pub d_base: Tensor2D,
    pub d_aug: Tensor2D,
    pub d_poi: Tensor2D,
}

/// Total loss `lambda * L_intra + (1 - lambda) * L_cross` with gradients for
/// all three embedding matrices.
pub fn loss_total(batch: &AlignmentBatch, cfg: &AlignmentConfig) -> Result<LossBreakdown> {
    let (l_ae, d_base_ae, mut d_aug) = loss_intra(batch, cfg.tau_ae)?;
    let (l_ap, d_base_ap, mut d_poi) = loss_cross(batch, cfg.tau_poi)?;
    let lambda = cfg.lambda;
    let l_total = lambda * l_ae + (1.0 - lambda) * l_ap;

    let mut d_base = d_base_ae;
    d_base.scale(lambda);
    axpy(1.0 - lambda, &d_base_ap.data, &mut d_base.data);
    d_aug.scale(lambda);
    d_poi.scale(1.0 - lambda);

    Ok(LossBreakdown {
        l_ae,
        l_ap,
        l_total,
        d_base,
        d_aug,
        d_poi,
    })
}

/// Pooled base/augmented views for the POIs that survived buffer filtering.
#[derive(Debug, Clone)]
pub struct PooledViews {
    /// Indices into the original POI slice, in input order.
    pub kept: Vec<usize>,
    pub base: Tensor2D,
    pub aug: Tensor2D,
    pub dropped: usize,
}

impl PooledViews {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Pools both views for every POI, dropping POIs whose base or augmented
/// buffer is empty. Pooling dominates cost otherwise, so callers should do
/// this once and reuse the result across epochs.
pub fn precompute_views(
    field: &EmbeddingField,
    pois: &[PoiRecord],
    r_b: f64,
    r_a: f64,
) -> Result<PooledViews> {
    let base_queries: Vec<BufferQuery> = pois
        .iter()
        .map(|p| BufferQuery::new(p.x, p.y, r_b))
        .collect::<Result<_>>()?;
    let aug_queries: Vec<BufferQuery> = pois
        .iter()
        .map(|p| BufferQuery::new(p.x, p.y, r_a))
        .collect::<Result<_>>()?;
    let base_pooled = pool_buffer_batch(field, &base_queries)?;
    let aug_pooled = pool_buffer_batch(field, &aug_queries)?;

    let channels = field.channels;
    let mut kept = Vec::with_capacity(pois.len());
    let mut base = Vec::new();
    let mut aug = Vec::new();
    for (i, (b, a)) in base_pooled.into_iter().zip(aug_pooled).enumerate() {
        if let (Some(b), Some(a)) = (b, a) {
            kept.push(i);
            base.extend_from_slice(&b.values);
            aug.extend_from_slice(&a.values);
        }
    }
    let dropped = pois.len() - kept.len();
    if dropped > 0 {
        log::info!(
            "dropped {dropped} of {} POIs with empty buffers",
            pois.len()
        );
    }
    let rows = kept.len();
    Ok(PooledViews {
        kept,
        base: Tensor2D::from_vec(rows, channels, base)?,
        aug: Tensor2D::from_vec(rows, channels, aug)?,
        dropped,
    })
}

/// Text vectors for the kept POIs as a 64-bit matrix, matched by id.
pub fn text_matrix(
    pois: &[PoiRecord],
    kept: &[usize],
    text: &[TextEmbedding],
) -> Result<Tensor2D> {
    let by_id: HashMap<u64, &TextEmbedding> = text.iter().map(|t| (t.poi_id, t)).collect();
    let dim = text
        .first()
        .map(|t| t.vector.len())
        .ok_or_else(|| Error::TextEmbedding("no text embeddings supplied".into()))?;
    let mut data = Vec::with_capacity(kept.len() * dim);
    for &i in kept {
        let poi = &pois[i];
        let t = by_id
            .get(&poi.id)
            .ok_or_else(|| Error::TextEmbedding(format!("no vector for poi id {}", poi.id)))?;
        if t.vector.len() != dim {
            return Err(Error::TextEmbedding(format!(
                "vector for poi id {} has dimension {}, expected {dim}",
                poi.id,
                t.vector.len()
            )));
        }
        data.extend(t.vector.iter().map(|&v| f64::from(v)));
    }
    Tensor2D::from_vec(kept.len(), dim, data)
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_ae: f64,
    pub l_ap: f64,
    pub l_total: f64,
    pub is_best: bool,
}

/// Complete resumable training snapshot: current parameters, optimizer
/// moments, and the best-on-train bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub next_epoch: usize,
    pub model: AlignmentModel,
    pub opt: AdamWState,
    pub best_model: AlignmentModel,
    pub best_lap: f64,
    pub best_epoch: i64,
}

impl TrainState {
    pub fn fresh(cfg: &AlignmentConfig, input_dim: usize, text_dim: usize) -> Self {
        let model = AlignmentModel::init(cfg, input_dim, text_dim);
        let opt = AdamWState::new(cfg.optimizer, &model.param_lens());
        TrainState {
            next_epoch: 0,
            best_model: model.clone(),
            model,
            opt,
            best_lap: f64::INFINITY,
            best_epoch: -1,
        }
    }
}

/// Result of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Best-on-train snapshot (initialization if no epoch ran).
    pub model: AlignmentModel,
    pub best_epoch: i64,
    /// Log rows for the epochs run by this call.
    pub log: Vec<EpochStats>,
    /// Final state, suitable for saving and resuming.
    pub state: TrainState,
    pub dropped_pois: usize,
}

/// Pools views, then trains for `cfg.epochs` epochs from scratch.
pub fn pretrain(
    field: &EmbeddingField,
    pois: &[PoiRecord],
    text: &[TextEmbedding],
    cfg: &AlignmentConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let views = precompute_views(field, pois, cfg.r_b, cfg.r_a)?;
    if views.is_empty() {
        return Err(Error::Training(
            "all POIs dropped: every base or augmented buffer was empty".into(),
        ));
    }
    let text_mat = text_matrix(pois, &views.kept, text)?;
    let mut outcome = pretrain_views(&views, &text_mat, cfg, None)?;
    outcome.dropped_pois = views.dropped;
    Ok(outcome)
}

/// Core training loop over precomputed views. Pass a saved [`TrainState`]
/// to resume; epochs run from `state.next_epoch` up to `cfg.epochs`.
pub fn pretrain_views(
    views: &PooledViews,
    text: &Tensor2D,
    cfg: &AlignmentConfig,
    resume: Option<TrainState>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let n = views.len();
    if n == 0 {
        return Err(Error::Training("no POIs to train on".into()));
    }
    if text.rows != n {
        return Err(Error::ShapeMismatch(format!(
            "{} text rows for {n} pooled views",
            text.rows
        )));
    }

    let mut state = match resume {
        Some(s) => s,
        None => TrainState::fresh(cfg, views.base.cols, text.cols),
    };
    if state.model.head.input_dim() != views.base.cols
        || state.model.projector.text_dim() != text.cols
    {
        return Err(Error::ShapeMismatch(format!(
            "state expects input {} / text {}, data has {} / {}",
            state.model.head.input_dim(),
            state.model.projector.text_dim(),
            views.base.cols,
            text.cols
        )));
    }

    let d = state.model.head.output_dim();
    let mut log = Vec::new();
    let mut base_caches: Vec<HeadCache> = Vec::new();
    let mut aug_caches: Vec<HeadCache> = Vec::new();

    for epoch in state.next_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, cfg.seed, epoch as u64);
        let batches = batch_ranges(n, cfg.batch_size);

        let mut sum_ae = 0.0;
        let mut sum_ap = 0.0;
        let mut sum_total = 0.0;
        for (batch_index, range) in batches.iter().enumerate() {
            let rows: Vec<usize> = order[range.clone()].to_vec();
            let bn = rows.len();
            grow_caches(&mut base_caches, bn);
            grow_caches(&mut aug_caches, bn);

            // Forward all three branches; each row is independent.
            let head = &state.model.head;
            base_caches[..bn]
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(r, cache)| head.forward_cached(views.base.row(rows[r]), cache))?;
            aug_caches[..bn]
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(r, cache)| head.forward_cached(views.aug.row(rows[r]), cache))?;

            let projector = &state.model.projector;
            let poi_fwd: Vec<(Vec<f64>, f64)> = rows
                .par_iter()
                .map(|&idx| {
                    let mut v = Vec::new();
                    let mut z = Vec::new();
                    let norm = projector.forward_cached(text.row(idx), &mut v, &mut z)?;
                    Ok((z, norm))
                })
                .collect::<Result<_>>()?;

            let mut z_base = Tensor2D::zeros(bn, d);
            let mut z_aug = Tensor2D::zeros(bn, d);
            let mut z_poi = Tensor2D::zeros(bn, d);
            for r in 0..bn {
                z_base.row_mut(r).copy_from_slice(&base_caches[r].z);
                z_aug.row_mut(r).copy_from_slice(&aug_caches[r].z);
                z_poi.row_mut(r).copy_from_slice(&poi_fwd[r].0);
            }

            let batch = AlignmentBatch::new(z_base, z_aug, z_poi)?;
            let losses = loss_total(&batch, cfg)?;
            if !losses.l_total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}"
                )));
            }
            sum_ae += losses.l_ae * bn as f64;
            sum_ap += losses.l_ap * bn as f64;
            sum_total += losses.l_total * bn as f64;

            // Backward in fixed-size chunks; fold in chunk order so the
            // reduction is independent of scheduling.
            let row_ids: Vec<usize> = (0..bn).collect();
            let chunk_grads: Vec<(HeadGrads, Tensor2D)> = row_ids
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut hg = HeadGrads::zeros_like(head);
                    let mut pw = Tensor2D::zeros(projector.output_dim(), projector.text_dim());
                    let mut scratch = Vec::new();
                    let mut bcache = HeadCache::default();
                    let mut acache = HeadCache::default();
                    for &r in chunk {
                        bcache.clone_from(&base_caches[r]);
                        head.backward(
                            views.base.row(rows[r]),
                            &mut bcache,
                            losses.d_base.row(r),
                            &mut hg,
                        );
                        acache.clone_from(&aug_caches[r]);
                        head.backward(
                            views.aug.row(rows[r]),
                            &mut acache,
                            losses.d_aug.row(r),
                            &mut hg,
                        );
                        let (z, norm) = &poi_fwd[r];
                        projector.backward(
                            text.row(rows[r]),
                            z,
                            *norm,
                            losses.d_poi.row(r),
                            &mut pw,
                            &mut scratch,
                            None,
                        );
                    }
                    (hg, pw)
                })
                .collect();
            let mut head_grads = HeadGrads::zeros_like(head);
            let mut poi_grad = Tensor2D::zeros(projector.output_dim(), projector.text_dim());
            for (hg, pw) in &chunk_grads {
                head_grads.add_assign(hg);
                axpy(1.0, &pw.data, &mut poi_grad.data);
            }

            let grads: [&[f64]; 9] = [
                &head_grads.w_in.data,
                &head_grads.mlp_w1.data,
                &head_grads.mlp_b1,
                &head_grads.mlp_w2.data,
                &head_grads.mlp_b2,
                &head_grads.gate_w.data,
                &head_grads.gate_b,
                &head_grads.w_out.data,
                &poi_grad.data,
            ];
            for (name, g) in PARAM_NAMES.iter().zip(grads) {
                check_finite(
                    &format!("gradient {name} at epoch {epoch}, batch {batch_index}"),
                    g,
                )?;
            }
            adamw_step(
                &mut state.opt,
                &mut state.model.params_mut(),
                &grads,
                &PARAM_DECAY,
            )?;
        }

        let inv = 1.0 / n as f64;
        let l_ae = sum_ae * inv;
        let l_ap = sum_ap * inv;
        let l_total = sum_total * inv;
        let is_best = l_ap < state.best_lap;
        if is_best {
            state.best_lap = l_ap;
            state.best_epoch = epoch as i64;
            state.best_model = state.model.clone();
        }
        log.push(EpochStats {
            epoch,
            l_ae,
            l_ap,
            l_total,
            is_best,
        });
        log::info!(
            "epoch {epoch}: l_ae={l_ae:.6} l_ap={l_ap:.6} l_total={l_total:.6} best={is_best}"
        );
        state.next_epoch = epoch + 1;
    }

    Ok(PretrainOutcome {
        model: state.best_model.clone(),
        best_epoch: state.best_epoch,
        log,
        state,
        dropped_pois: 0,
    })
}

fn grow_caches(caches: &mut Vec<HeadCache>, n: usize) {
    while caches.len() < n {
        caches.push(HeadCache::default());
    }
}

/// Deterministic Fisher-Yates keyed by (seed, epoch).
fn shuffle(order: &mut [usize], seed: u64, epoch: u64) {
    use rand::seq::SliceRandom;
    let mut stream = rng::stream_indexed(seed, "epoch-shuffle", epoch);
    order.shuffle(&mut stream);
}

/// Splits `n` items into batches of `batch_size`, keeping the final short
/// batch; a trailing batch of one is merged into the previous batch since a
/// single-row batch carries no contrastive signal.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push(start..end);
        start = end;
    }
    if out.len() > 1 && out.last().unwrap().len() == 1 {
        let last = out.pop().unwrap();
        let prev = out.pop().unwrap();
        out.push(prev.start..last.end);
    }
    out
}

/// Writes the per-epoch training log as `epoch,l_ae,l_ap,l_total,is_best`.
pub fn write_training_log(log: &[EpochStats], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,l_ae,l_ap,l_total,is_best").map_err(|e| Error::io(path, e))?;
    for row in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.epoch, row.l_ae, row.l_ap, row.l_total, row.is_best
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a training log written by [`write_training_log`].
pub fn read_training_log(path: &Path) -> Result<Vec<EpochStats>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 5 fields", i + 1),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: bad float `{s}`", i + 1),
            })
        };
        out.push(EpochStats {
            epoch: parts[0].parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: bad epoch", i + 1),
            })?,
            l_ae: parse(parts[1])?,
            l_ap: parse(parts[2])?,
            l_total: parse(parts[3])?,
            is_best: parts[4] == "true",
        });
    }
    Ok(out)
}

// Training-state file (AES1): f64 tensors so a resumed run continues
// bit-exactly where the interrupted one stopped.

pub fn save_train_state(state: &TrainState, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(STATE_MAGIC)?;
    emit(&STATE_VERSION.to_le_bytes())?;
    emit(&(state.next_epoch as u32).to_le_bytes())?;
    emit(&state.opt.step.to_le_bytes())?;
    emit(&state.best_epoch.to_le_bytes())?;
    emit(&state.best_lap.to_le_bytes())?;
    for v in [
        state.model.lambda,
        state.model.tau_ae,
        state.model.tau_poi,
        state.model.r_b,
        state.model.r_a,
    ] {
        emit(&v.to_le_bytes())?;
    }

    let dims = state.model.param_dims();
    let mut blocks: Vec<(String, Vec<u32>, &[f64])> = Vec::new();
    for ((name, data), dim) in PARAM_NAMES.iter().zip(state.model.params()).zip(&dims) {
        blocks.push((format!("p.{name}"), dim.clone(), data));
    }
    for ((name, data), dim) in PARAM_NAMES.iter().zip(state.best_model.params()).zip(&dims) {
        blocks.push((format!("b.{name}"), dim.clone(), data));
    }
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        blocks.push((format!("m.{name}"), dims[i].clone(), &state.opt.m[i]));
        blocks.push((format!("v.{name}"), dims[i].clone(), &state.opt.v[i]));
    }
    emit(&(blocks.len() as u32).to_le_bytes())?;
    for (name, dim, data) in blocks {
        let bytes = name.as_bytes();
        emit(&(bytes.len() as u16).to_le_bytes())?;
        emit(bytes)?;
        emit(&[dim.len() as u8])?;
        for d in &dim {
            emit(&d.to_le_bytes())?;
        }
        for v in data {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_train_state(path: &Path, cfg: &AlignmentConfig) -> Result<TrainState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_bytes(&mut r, &mut magic, path)?;
    if &magic != STATE_MAGIC {
        return Err(Error::BadMagic {
            format: "AES1",
            path: path.to_path_buf(),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != STATE_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "AES1",
            version,
            path: path.to_path_buf(),
        });
    }
    let next_epoch = read_u32(&mut r, path)? as usize;
    let step = read_u64(&mut r, path)?;
    let best_epoch = read_i64(&mut r, path)?;
    let best_lap = read_f64(&mut r, path)?;
    let lambda = read_f64(&mut r, path)?;
    let tau_ae = read_f64(&mut r, path)?;
    let tau_poi = read_f64(&mut r, path)?;
    let r_b = read_f64(&mut r, path)?;
    let r_a = read_f64(&mut r, path)?;

    let count = read_u32(&mut r, path)? as usize;
    let mut blocks: HashMap<String, (Vec<u32>, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = {
            let mut b = [0u8; 2];
            read_bytes(&mut r, &mut b, path)?;
            u16::from_le_bytes(b) as usize
        };
        let mut name_bytes = vec![0u8; name_len];
        read_bytes(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "tensor name is not valid UTF-8".into(),
        })?;
        let mut rank = [0u8; 1];
        read_bytes(&mut r, &mut rank, path)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut len = 1usize;
        for _ in 0..rank[0] {
            let d = read_u32(&mut r, path)?;
            len *= d as usize;
            dims.push(d);
        }
        let mut data = vec![0f64; len];
        for v in data.iter_mut() {
            *v = read_f64(&mut r, path)?;
        }
        blocks.insert(name, (dims, data));
    }

    let mut model_parts: [Option<(Vec<u32>, Vec<f64>)>; 9] = Default::default();
    let mut best_parts: [Option<(Vec<u32>, Vec<f64>)>; 9] = Default::default();
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        model_parts[i] = Some(blocks.remove(&format!("p.{name}")).ok_or_else(|| {
            Error::Checkpoint(format!("state missing tensor `p.{name}`"))
        })?);
        best_parts[i] = Some(blocks.remove(&format!("b.{name}")).ok_or_else(|| {
            Error::Checkpoint(format!("state missing tensor `b.{name}`"))
        })?);
    }
    fn mat(name: &str, block: (Vec<u32>, Vec<f64>)) -> Result<Tensor2D> {
        let (dims, data) = block;
        if dims.len() != 2 {
            return Err(Error::Checkpoint(format!("`{name}` must be rank 2")));
        }
        Tensor2D::from_vec(dims[0] as usize, dims[1] as usize, data)
    }
    let build = |parts: [Option<(Vec<u32>, Vec<f64>)>; 9]| -> Result<AlignmentModel> {
        let mut it = parts.into_iter().map(Option::unwrap);
        let w_in = mat("w_in", it.next().unwrap())?;
        let mlp_w1 = mat("mlp_w1", it.next().unwrap())?;
        let mlp_b1 = it.next().unwrap().1;
        let mlp_w2 = mat("mlp_w2", it.next().unwrap())?;
        let mlp_b2 = it.next().unwrap().1;
        let gate_w = mat("gate_w", it.next().unwrap())?;
        let gate_b = it.next().unwrap().1;
        let w_out = mat("w_out", it.next().unwrap())?;
        let poi_w = mat("poi_w", it.next().unwrap())?;
        Ok(AlignmentModel {
            head: AeProjectionHead {
                w_in,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
                gate_w,
                gate_b,
                w_out,
            },
            projector: PoiProjector { w: poi_w },
            lambda,
            tau_ae,
            tau_poi,
            r_b,
            r_a,
        })
    };
    let model = build(model_parts)?;
    let best_model = build(best_parts)?;

    let mut opt = AdamWState::new(cfg.optimizer, &model.param_lens());
    opt.step = step;
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        let (_, m) = blocks
            .remove(&format!("m.{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("state missing tensor `m.{name}`")))?;
        let (_, v) = blocks
            .remove(&format!("v.{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("state missing tensor `v.{name}`")))?;
        if m.len() != opt.m[i].len() || v.len() != opt.v[i].len() {
            return Err(Error::Checkpoint(format!(
                "moment buffers for `{name}` have the wrong length"
            )));
        }
        opt.m[i] = m;
        opt.v[i] = v;
    }

    Ok(TrainState {
        next_epoch,
        model,
        opt,
        best_model,
        best_lap,
        best_epoch,
    })
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

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read, path: &Path) -> Result<i64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, path)?;
    Ok(i64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, path)?;
    Ok(f64::from_le_bytes(b))
}

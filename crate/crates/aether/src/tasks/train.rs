//! Task-head training: 70/15/15 splits (stratified by class for
//! classification), full-batch Adam with early stopping on validation loss,
//! and multi-seed evaluation reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adamw_step, AdamWConfig, AdamWState};
use crate::rng;

use super::head::{BatchTargets, TaskHead, TaskMode};
use super::metrics::{distribution_metrics, macro_prf, softmax};

/// One land-use sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct LucSample {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

/// Normalized histogram target for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTarget {
    pub region_id: u64,
    pub q: Vec<f64>,
}

impl DistributionTarget {
    pub fn new(region_id: u64, q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Task(format!(
                "region {region_id}: histogram entries must be finite and non-negative"
            )));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Task(format!(
                "region {region_id}: histogram sums to {sum}, expected 1"
            )));
        }
        Ok(DistributionTarget { region_id, q })
    }
}

/// Train/validation/test fractions; test takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.15,
            stratified: false,
        }
    }
}

/// Task-head training hyperparameters (Adam, full-batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskHeadConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TaskHeadConfig {
    fn default() -> Self {
        TaskHeadConfig {
            hidden: 64,
            lr: 1e-3,
            max_epochs: 500,
            patience: 20,
        }
    }
}

/// Mean and standard deviation of one metric over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    fn from_values(name: &str, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary {
            name: name.to_string(),
            mean,
            std: var.sqrt(),
            per_seed: values,
        }
    }
}

/// Multi-seed evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: Vec<MetricSummary>,
    pub seeds: Vec<u64>,
    pub split: String,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Deterministic train/val/test indices. Stratified splits shuffle and cut
/// per class so every class lands in the training set when it has samples.
pub fn split_indices(
    n: usize,
    labels: Option<&[usize]>,
    spec: &SplitSpec,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut cut = |mut idx: Vec<usize>, stream_tag: &str| {
        let mut stream = rng::stream(seed, stream_tag);
        idx.shuffle(&mut stream);
        let n = idx.len();
        let n_train = ((n as f64 * spec.train).round() as usize).clamp(1.min(n), n);
        let n_val = ((n as f64 * spec.val).round() as usize).min(n - n_train);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    };
    match (spec.stratified, labels) {
        (true, Some(labels)) => {
            let max_label = labels.iter().copied().max().unwrap_or(0);
            for class in 0..=max_label {
                let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                if !idx.is_empty() {
                    cut(idx, &format!("split-class-{class}"));
                }
            }
        }
        _ => cut((0..n).collect(), "split"),
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    (train, val, test)
}

fn gather(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

/// Full-batch Adam with early stopping on validation loss. Returns the head
/// restored to its best-validation parameters.
fn fit_head(
    mut head: TaskHead,
    x_train: &[Vec<f64>],
    t_train: &BatchTargets<'_>,
    x_val: &[Vec<f64>],
    t_val: &BatchTargets<'_>,
    cfg: &TaskHeadConfig,
) -> Result<TaskHead> {
    let adam = AdamWConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamWState::new(adam, &head.param_lens());
    let decay = vec![false; head.param_lens().len()];
    let mut best = head.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    for _epoch in 0..cfg.max_epochs {
        let mut grads = head.zero_grads();
        let train_loss = head.batch_loss_grads(x_train, t_train, &mut grads)?;
        if !train_loss.is_finite() {
            return Err(Error::Task("non-finite training loss".into()));
        }
        let slices = grads.as_slices();
        adamw_step(&mut opt, &mut head.params_mut(), &slices, &decay)?;

        // Empty validation sets fall back to the training loss.
        let monitored = if x_val.is_empty() {
            train_loss
        } else {
            head.batch_loss(x_val, t_val)?
        };
        if monitored < best_val {
            best_val = monitored;
            best = head.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Trains and evaluates the land-use classifier over `seeds`, reporting
/// macro precision/recall/F1 on the held-out test split. The returned head
/// comes from the final seed.
pub fn train_luc(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    split: &SplitSpec,
    cfg: &TaskHeadConfig,
    seeds: &[u64],
) -> Result<(TaskHead, EvalReport)> {
    if embeddings.len() != labels.len() {
        return Err(Error::Task(format!(
            "{} embeddings for {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(Error::Task("no samples".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Task("at least one seed required".into()));
    }
    let input_dim = embeddings[0].len();
    let spec = SplitSpec {
        stratified: true,
        ..*split
    };

    let mut per_seed: [Vec<f64>; 3] = Default::default();
    let mut last_head = None;
    for &seed in seeds {
        let (tr, va, te) = split_indices(labels.len(), Some(labels), &spec, seed);
        let y_train: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
        let mut present: Vec<bool> = vec![false; num_classes];
        y_train.iter().for_each(|&y| present[y] = true);
        let train_classes = present.iter().filter(|&&p| p).count();
        if train_classes < 2 {
            return Err(Error::Task(format!(
                "training split has {train_classes} classes, need at least 2"
            )));
        }
        for c in 0..num_classes {
            if !present[c] && labels.iter().any(|&y| y == c) {
                log::warn!("class {c} is absent from the training split (seed {seed})");
            }
        }

        let x_train = gather(embeddings, &tr);
        let x_val = gather(embeddings, &va);
        let y_val: Vec<usize> = va.iter().map(|&i| labels[i]).collect();
        let head = TaskHead::init(
            input_dim,
            cfg.hidden,
            num_classes,
            TaskMode::Classification,
            seed,
        );
        let head = fit_head(
            head,
            &x_train,
            &BatchTargets::Classes(&y_train),
            &x_val,
            &BatchTargets::Classes(&y_val),
            cfg,
        )?;

        let (eval_idx, tag) = if te.is_empty() { (&va, "val") } else { (&te, "test") };
        if eval_idx.is_empty() {
            return Err(Error::Task("empty evaluation split".into()));
        }
        let _ = tag;
        let y_true: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();
        let mut y_pred = Vec::with_capacity(eval_idx.len());
        for &i in eval_idx.iter() {
            let logits = head.predict(&embeddings[i])?;
            let arg = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            y_pred.push(arg);
        }
        let (p, r, f1) = macro_prf(&y_true, &y_pred, num_classes);
        per_seed[0].push(p);
        per_seed[1].push(r);
        per_seed[2].push(f1);
        last_head = Some(head);
    }

    let [ps, rs, f1s] = per_seed;
    let report = EvalReport {
        metrics: vec![
            MetricSummary::from_values("precision", ps),
            MetricSummary::from_values("recall", rs),
            MetricSummary::from_values("f1", f1s),
        ],
        seeds: seeds.to_vec(),
        split: format!("{:.0}/{:.0}/{:.0} stratified", spec.train * 100.0, spec.val * 100.0, (1.0 - spec.train - spec.val) * 100.0),
    };
    Ok((last_head.unwrap(), report))
}

/// Trains and evaluates the distribution-mapping head over `seeds`,
/// reporting KL, L1, and Chebyshev averaged over test regions.
pub fn train_sdm(
    embeddings: &[Vec<f64>],
    targets: &[DistributionTarget],
    split: &SplitSpec,
    cfg: &TaskHeadConfig,
    seeds: &[u64],
) -> Result<(TaskHead, EvalReport)> {
    if embeddings.len() != targets.len() {
        return Err(Error::Task(format!(
            "{} embeddings for {} targets",
            embeddings.len(),
            targets.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(Error::Task("no regions".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Task("at least one seed required".into()));
    }
    let input_dim = embeddings[0].len();
    let bins = targets[0].q.len();
    for t in targets {
        if t.q.len() != bins {
            return Err(Error::Task(format!(
                "region {} has {} bins, expected {bins}",
                t.region_id,
                t.q.len()
            )));
        }
    }
    let spec = SplitSpec {
        stratified: false,
        ..*split
    };
    let q_all: Vec<Vec<f64>> = targets.iter().map(|t| t.q.clone()).collect();

    let mut per_seed: [Vec<f64>; 3] = Default::default();
    let mut last_head = None;
    for &seed in seeds {
        let (tr, va, te) = split_indices(targets.len(), None, &spec, seed);
        let x_train = gather(embeddings, &tr);
        let q_train = gather(&q_all, &tr);
        let x_val = gather(embeddings, &va);
        let q_val = gather(&q_all, &va);
        let head = TaskHead::init(input_dim, cfg.hidden, bins, TaskMode::Distribution, seed);
        let head = fit_head(
            head,
            &x_train,
            &BatchTargets::Distributions(&q_train),
            &x_val,
            &BatchTargets::Distributions(&q_val),
            cfg,
        )?;

        let eval_idx = if te.is_empty() { &va } else { &te };
        if eval_idx.is_empty() {
            return Err(Error::Task("empty evaluation split".into()));
        }
        let mut sums = (0.0, 0.0, 0.0);
        for &i in eval_idx.iter() {
            let p = softmax(&head.predict(&embeddings[i])?);
            let (kl, l1, cheb) = distribution_metrics(&p, &targets[i].q);
            sums.0 += kl;
            sums.1 += l1;
            sums.2 += cheb;
        }
        let n = eval_idx.len() as f64;
        per_seed[0].push(sums.0 / n);
        per_seed[1].push(sums.1 / n);
        per_seed[2].push(sums.2 / n);
        last_head = Some(head);
    }

    let [kls, l1s, chebs] = per_seed;
    let report = EvalReport {
        metrics: vec![
            MetricSummary::from_values("kl", kls),
            MetricSummary::from_values("l1", l1s),
            MetricSummary::from_values("chebyshev", chebs),
        ],
        seeds: seeds.to_vec(),
        split: format!(
            "{:.0}/{:.0}/{:.0} random",
            spec.train * 100.0,
            spec.val * 100.0,
            (1.0 - spec.train - spec.val) * 100.0
        ),
    };
    Ok((last_head.unwrap(), report))
}

/// Loads land-use samples from an `x,y,label` CSV.
pub fn load_luc_csv(path: &Path) -> Result<Vec<LucSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .clone();
    for col in ["x", "y", "label"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("missing column `{col}`"),
            });
        }
    }
    let pos = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ix, iy, il) = (pos("x"), pos("y"), pos("label"));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Csv {
            path: path.to_path_buf(),
            reason: format!("line {line}: unparseable {what}"),
        };
        out.push(LucSample {
            x: record.get(ix).unwrap_or("").trim().parse().map_err(|_| bad("x"))?,
            y: record.get(iy).unwrap_or("").trim().parse().map_err(|_| bad("y"))?,
            label: record
                .get(il)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad("label"))?,
        });
    }
    Ok(out)
}

pub fn write_luc_csv(samples: &[LucSample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "x,y,label").map_err(|e| Error::io(path, e))?;
    for s in samples {
        writeln!(w, "{},{},{}", s.x, s.y, s.label).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads distribution targets from a `region_id,q1..qB` CSV.
pub fn load_sdm_csv(path: &Path) -> Result<Vec<DistributionTarget>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        reason: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"region_id") || cols.len() < 2 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            reason: "expected header region_id,q1..qB".into(),
        });
    }
    let bins = cols.len() - 1;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != bins + 1 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected {} fields", i + 2, bins + 1),
            });
        }
        let bad = |what: &str| Error::Csv {
            path: path.to_path_buf(),
            reason: format!("line {}: unparseable {what}", i + 2),
        };
        let region_id: u64 = parts[0].trim().parse().map_err(|_| bad("region_id"))?;
        let q: Vec<f64> = parts[1..]
            .iter()
            .map(|s| s.trim().parse().map_err(|_| bad("bin value")))
            .collect::<Result<_>>()?;
        out.push(DistributionTarget::new(region_id, q)?);
    }
    Ok(out)
}

pub fn write_sdm_csv(targets: &[DistributionTarget], path: &Path) -> Result<()> {
    let bins = targets.first().map_or(0, |t| t.q.len());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("region_id");
    for i in 1..=bins {
        header.push_str(&format!(",q{i}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for t in targets {
        let mut line = t.region_id.to_string();
        for v in &t.q {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

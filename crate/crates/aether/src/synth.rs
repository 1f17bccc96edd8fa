//! Deterministic synthetic city with known latent structure.
//!
//! The generator lays down K latent functional archetypes as softmaxed
//! smoothed noise, mixes them linearly (plus per-cell noise) into a
//! 64-channel field, samples POIs whose categories follow the local latent
//! distribution, and derives land-use labels (argmax archetype) and
//! region-level distribution targets (softmax of a linear map of the
//! region's latent mean plus a category-histogram term that depends on the
//! realized POI draws, not on the field noise).
//!
//! Every artifact is a pure function of the config, keyed random streams
//! per purpose, so adding a new consumer never disturbs existing draws.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fieldgrid::{write_field, EmbeddingField};
use crate::infer::{write_regions_csv, RegionRule, RegionSpec};
use crate::nn::Tensor2D;
use crate::poi::{
    fallback_embed, render_description, write_pois, write_text_embeddings, PoiRecord,
    TextEmbedding,
};
use crate::rng;
use crate::tasks::{
    softmax, train_luc, train_sdm, write_luc_csv, write_sdm_csv, DistributionTarget, LucSample,
    SplitSpec, TaskHeadConfig,
};

/// Channels of the generated embedding field.
pub const FIELD_CHANNELS: usize = 64;

const LEVEL1_NAMES: [&str; 12] = [
    "residential",
    "retail",
    "industrial",
    "education",
    "healthcare",
    "recreation",
    "transport",
    "office",
    "hospitality",
    "civic",
    "logistics",
    "utilities",
];
const LEVEL2_VARIANTS: [&str; 3] = ["site", "hub", "point"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Cells per side; at least 32.
    pub grid_size: usize,
    pub n_pois: usize,
    pub n_regions: usize,
    /// Number of latent functional archetypes; at least 2.
    pub k: usize,
    /// Per-cell, per-channel field noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Text embedding width.
    pub d_t: usize,
    pub n_luc_samples: usize,
    /// Buffer radius of generated regions, meters.
    pub region_radius: f64,
    pub sdm_bins: usize,
    pub cell_size: f64,
    /// Sharpness of the archetype domains: standardized smoothed noise is
    /// scaled by this factor before the per-cell softmax.
    pub latent_contrast: f64,
    /// Use the hash-based fallback embedder for text instead of category
    /// prototypes, making the whole bundle reproducible from strings alone.
    pub hermetic_text: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_size: 128,
            n_pois: 2000,
            n_regions: 100,
            k: 6,
            noise_sigma: 0.5,
            seed: 0,
            d_t: 384,
            n_luc_samples: 1000,
            region_radius: 150.0,
            sdm_bins: 9,
            cell_size: 10.0,
            latent_contrast: 4.0,
            hermetic_text: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        if self.grid_size < 32 {
            return bad("grid_size", format!("must be >= 32, got {}", self.grid_size));
        }
        if self.k < 2 {
            return bad("k", format!("must be >= 2, got {}", self.k));
        }
        if self.noise_sigma < 0.0 {
            return bad(
                "noise_sigma",
                format!("must be >= 0, got {}", self.noise_sigma),
            );
        }
        if self.d_t < 8 {
            return bad("d_t", format!("must be >= 8, got {}", self.d_t));
        }
        if self.n_pois == 0 || self.n_regions == 0 || self.n_luc_samples == 0 {
            return bad("n_pois", "counts must be positive".into());
        }
        if !(self.region_radius > 0.0) || !(self.cell_size > 0.0) {
            return bad("region_radius", "radii and cell size must be positive".into());
        }
        if self.sdm_bins < 2 {
            return bad("sdm_bins", format!("must be >= 2, got {}", self.sdm_bins));
        }
        Ok(())
    }
}

/// A generated world plus its ground truth.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub cfg: SynthConfig,
    pub field: EmbeddingField,
    pub pois: Vec<PoiRecord>,
    pub text: Vec<TextEmbedding>,
    pub luc: Vec<LucSample>,
    pub regions: Vec<RegionSpec>,
    pub targets: Vec<DistributionTarget>,
    /// K-channel archetype distribution per cell.
    pub latent: EmbeddingField,
    /// 64 x K channel mixing matrix (unit-norm columns).
    pub mixing: Tensor2D,
}

fn level1_name(k: usize) -> String {
    LEVEL1_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("category {k}"))
}

fn level2_name(k: usize, variant: usize) -> String {
    format!("{} {}", level1_name(k), LEVEL2_VARIANTS[variant % 3])
}

/// Separable Gaussian blur with edge renormalization.
fn gaussian_blur(grid: &mut [f64], side: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let sigma = radius as f64 / 2.0;
    let kernel: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut tmp = vec![0.0; side * side];
    // horizontal
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            let mut weight = 0.0;
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(side - 1);
            for cc in lo..=hi {
                let w = kernel[cc.abs_diff(c)];
                acc += w * grid[r * side + cc];
                weight += w;
            }
            tmp[r * side + c] = acc / weight;
        }
    }
    // vertical
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            let mut weight = 0.0;
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(side - 1);
            for rr in lo..=hi {
                let w = kernel[rr.abs_diff(r)];
                acc += w * tmp[rr * side + c];
                weight += w;
            }
            grid[r * side + c] = acc / weight;
        }
    }
}

/// Generates the world. Deterministic: the same config gives bit-identical
/// output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let side = cfg.grid_size;
    let k = cfg.k;
    let cells = side * side;

    // Latent archetype raster: softmax over K smoothed, standardized,
    // contrast-boosted noise channels. The contrast factor keeps domains
    // crisp after blurring shrinks the noise amplitude.
    let contrast = cfg.latent_contrast;
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(k);
    for ch in 0..k {
        let mut stream = rng::stream_indexed(cfg.seed, "latent-noise", ch as u64);
        let mut grid: Vec<f64> = (0..cells).map(|_| stream.sample::<f64, _>(StandardNormal)).collect();
        gaussian_blur(&mut grid, side, side / 8);
        let mean = grid.iter().sum::<f64>() / cells as f64;
        let var = grid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cells as f64;
        let inv_std = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        grid.iter_mut()
            .for_each(|v| *v = (*v - mean) * inv_std * contrast);
        channels.push(grid);
    }
    let mut latent_data = vec![0f32; cells * k];
    let mut logits = vec![0.0; k];
    for cell in 0..cells {
        for ch in 0..k {
            logits[ch] = channels[ch][cell];
        }
        let probs = softmax(&logits);
        for ch in 0..k {
            latent_data[cell * k + ch] = probs[ch] as f32;
        }
    }
    let origin_y = (side as f64 - 1.0) * cfg.cell_size;
    let latent = EmbeddingField::new(side, side, k, 0.0, origin_y, cfg.cell_size, 27700, latent_data)?;

    // Mixing matrix with unit-norm columns.
    let mut mixing = Tensor2D::zeros(FIELD_CHANNELS, k);
    {
        let mut stream = rng::stream(cfg.seed, "mixing");
        for c in 0..k {
            let col: Vec<f64> = (0..FIELD_CHANNELS)
                .map(|_| stream.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (r, v) in col.iter().enumerate() {
                mixing.set(r, c, v / norm);
            }
        }
    }

    // Field = mixing . latent + noise, stored at f32.
    let mut field_data = vec![0f32; cells * FIELD_CHANNELS];
    {
        let mut noise = rng::stream(cfg.seed, "field-noise");
        for cell in 0..cells {
            let lat = &latent.data()[cell * k..(cell + 1) * k];
            for c in 0..FIELD_CHANNELS {
                let mut v = 0.0;
                for (ch, l) in lat.iter().enumerate() {
                    v += mixing.get(c, ch) * f64::from(*l);
                }
                if cfg.noise_sigma > 0.0 {
                    v += cfg.noise_sigma * noise.sample::<f64, _>(StandardNormal);
                } else {
                    // keep the stream position independent of sigma
                    let _: f64 = noise.sample(StandardNormal);
                }
                field_data[cell * FIELD_CHANNELS + c] = v as f32;
            }
        }
    }
    let field = EmbeddingField::new(
        side,
        side,
        FIELD_CHANNELS,
        0.0,
        origin_y,
        cfg.cell_size,
        27700,
        field_data,
    )?;

    // POIs: uniform cells, category level 1 drawn from the cell's latent
    // distribution, level 2 uniform, plus in-cell jitter.
    let mut pois = Vec::with_capacity(cfg.n_pois);
    {
        let mut stream = rng::stream(cfg.seed, "pois");
        for i in 0..cfg.n_pois {
            let row = stream.random_range(0..side);
            let col = stream.random_range(0..side);
            let (cx, cy) = field.cell_center(row, col);
            let jx = (stream.random::<f64>() - 0.5) * cfg.cell_size;
            let jy = (stream.random::<f64>() - 0.5) * cfg.cell_size;
            let lat = latent.cell(row, col);
            let u: f64 = stream.random();
            let mut acc = 0.0;
            let mut cat = k - 1;
            for (ch, l) in lat.iter().enumerate() {
                acc += f64::from(*l);
                if u < acc {
                    cat = ch;
                    break;
                }
            }
            let variant = stream.random_range(0..3usize);
            let l1 = level1_name(cat);
            let l2 = level2_name(cat, variant);
            pois.push(PoiRecord {
                id: (i + 1) as u64,
                x: cx + jx,
                y: cy + jy,
                name: format!("{l2} {}", i + 1),
                category_l1: l1,
                category_l2: l2,
            });
        }
    }

    // Text embeddings: noisy category prototypes, or the fallback embedder
    // in hermetic mode.
    let text = if cfg.hermetic_text {
        pois.iter()
            .map(|p| {
                Ok(TextEmbedding {
                    poi_id: p.id,
                    vector: fallback_embed(&render_description(p), cfg.d_t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut proto_stream = rng::stream(cfg.seed, "text-prototypes");
        let unit = |stream: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..cfg.d_t)
                .map(|_| stream.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        };
        let mut prototypes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
        for _ in 0..k {
            let base = unit(&mut proto_stream);
            let mut subs = Vec::with_capacity(3);
            for _ in 0..3 {
                let offset = unit(&mut proto_stream);
                let mixed: Vec<f64> = base
                    .iter()
                    .zip(&offset)
                    .map(|(b, o)| b + 0.5 * o)
                    .collect();
                let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
                subs.push(mixed.iter().map(|x| x / norm).collect());
            }
            prototypes.push(subs);
        }
        let mut noise = rng::stream(cfg.seed, "text-noise");
        pois.iter()
            .map(|p| {
                let cat = LEVEL1_NAMES
                    .iter()
                    .position(|n| *n == p.category_l1)
                    .unwrap_or_else(|| {
                        p.category_l1
                            .strip_prefix("category ")
                            .and_then(|s| s.parse().ok())
                            .unwrap_or(0)
                    });
                let variant = LEVEL2_VARIANTS
                    .iter()
                    .position(|v| p.category_l2.ends_with(v))
                    .unwrap_or(0);
                let proto = &prototypes[cat][variant];
                let vector: Vec<f32> = proto
                    .iter()
                    .map(|v| (v + 0.1 * noise.sample::<f64, _>(StandardNormal)) as f32)
                    .collect();
                TextEmbedding {
                    poi_id: p.id,
                    vector,
                }
            })
            .collect()
    };

    // Land-use samples at uniform cells, labeled with the argmax archetype.
    let mut luc = Vec::with_capacity(cfg.n_luc_samples);
    {
        let mut stream = rng::stream(cfg.seed, "luc-samples");
        for _ in 0..cfg.n_luc_samples {
            let row = stream.random_range(0..side);
            let col = stream.random_range(0..side);
            let lat = latent.cell(row, col);
            let label = lat
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let (x, y) = field.cell_center(row, col);
            luc.push(LucSample { x, y, label });
        }
    }

    // Regions: uniform centroids with a fixed radius.
    let mut regions = Vec::with_capacity(cfg.n_regions);
    {
        let mut stream = rng::stream(cfg.seed, "regions");
        for i in 0..cfg.n_regions {
            let row = stream.random_range(0..side);
            let col = stream.random_range(0..side);
            let (cx, cy) = field.cell_center(row, col);
            regions.push(RegionSpec {
                region_id: (i + 1) as u64,
                rule: RegionRule::Buffer {
                    centroid_x: cx,
                    centroid_y: cy,
                    radius: cfg.region_radius,
                },
            });
        }
    }

    // Distribution targets: softmax(A . latent_mean + 0.5 B . category_hist),
    // where the histogram reflects the realized POI draws near the centroid.
    // The second term carries signal that no function of the field can fully
    // predict, mirroring how socioeconomic structure exceeds physical form;
    // it is weighted above the directly visible latent term.
    let map_a_scale = 2.0;
    let map_b_scale = 6.0;
    let mut map_a = Tensor2D::zeros(cfg.sdm_bins, k);
    let mut map_b = Tensor2D::zeros(cfg.sdm_bins, k);
    {
        let mut stream = rng::stream(cfg.seed, "sdm-map");
        for (m, scale) in [(&mut map_a, map_a_scale), (&mut map_b, map_b_scale)] {
            for v in m.data.iter_mut() {
                *v = scale * stream.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let mut targets = Vec::with_capacity(cfg.n_regions);
    for region in &regions {
        let RegionRule::Buffer {
            centroid_x,
            centroid_y,
            radius,
        } = &region.rule
        else {
            unreachable!()
        };
        let query = crate::fieldgrid::BufferQuery::new(*centroid_x, *centroid_y, *radius)?;
        let members = crate::fieldgrid::buffer_members(&latent, &query);
        let mut latent_mean = vec![0.0f64; k];
        for &(row, col) in &members {
            for (acc, v) in latent_mean.iter_mut().zip(latent.cell(row, col)) {
                *acc += f64::from(*v);
            }
        }
        let denom = members.len().max(1) as f64;
        latent_mean.iter_mut().for_each(|v| *v /= denom);

        let mut hist = vec![0.0f64; k];
        let mut total = 0.0;
        let r2 = radius * radius;
        for p in &pois {
            let dx = p.x - centroid_x;
            let dy = p.y - centroid_y;
            if dx * dx + dy * dy <= r2 {
                let cat = LEVEL1_NAMES
                    .iter()
                    .position(|n| *n == p.category_l1)
                    .unwrap_or(0);
                hist[cat.min(k - 1)] += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            hist.iter_mut().for_each(|v| *v /= total);
        }

        let mut logits = vec![0.0; cfg.sdm_bins];
        for b in 0..cfg.sdm_bins {
            let mut v = 0.0;
            for ch in 0..k {
                v += map_a.get(b, ch) * latent_mean[ch] + 0.5 * map_b.get(b, ch) * hist[ch];
            }
            logits[b] = v;
        }
        targets.push(DistributionTarget::new(region.region_id, softmax(&logits))?);
    }

    Ok(SynthWorld {
        cfg: cfg.clone(),
        field,
        pois,
        text,
        luc,
        regions,
        targets,
        latent,
        mixing,
    })
}

/// Reference metrics: the trivial self-references plus linear probes from
/// the true latent features, used as upper reference lines in reports.
#[derive(Debug, Clone)]
pub struct ReferenceMetrics {
    pub luc_self_f1: f64,
    pub sdm_self_kl: f64,
    pub latent_probe_f1: f64,
    pub latent_probe_kl: f64,
}

pub fn oracle_best_possible(
    world: &SynthWorld,
    head_cfg: &TaskHeadConfig,
    split: &SplitSpec,
    seeds: &[u64],
) -> Result<ReferenceMetrics> {
    let labels: Vec<usize> = world.luc.iter().map(|s| s.label).collect();
    let (p, r, f1) = crate::tasks::macro_prf(&labels, &labels, world.cfg.k);
    debug_assert_eq!((p, r), (1.0, 1.0));
    let luc_self_f1 = f1;

    let sdm_self_kl = world
        .targets
        .iter()
        .map(|t| crate::tasks::distribution_metrics(&t.q, &t.q).0)
        .sum::<f64>()
        / world.targets.len() as f64;

    let (latent_probe_f1, latent_probe_kl) = latent_probe_scores(world, head_cfg, split, seeds)?;
    Ok(ReferenceMetrics {
        luc_self_f1,
        sdm_self_kl,
        latent_probe_f1,
        latent_probe_kl,
    })
}

/// Probes trained on the generator's own latent features.
pub fn latent_probe_scores(
    world: &SynthWorld,
    head_cfg: &TaskHeadConfig,
    split: &SplitSpec,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let side = world.cfg.grid_size;
    let k = world.cfg.k;
    let cell_of = |x: f64, y: f64| -> (usize, usize) {
        let col = ((x - world.latent.origin_x) / world.latent.cell_size).round() as i64;
        let row = ((world.latent.origin_y - y) / world.latent.cell_size).round() as i64;
        (
            row.clamp(0, side as i64 - 1) as usize,
            col.clamp(0, side as i64 - 1) as usize,
        )
    };
    let x_luc: Vec<Vec<f64>> = world
        .luc
        .iter()
        .map(|s| {
            let (row, col) = cell_of(s.x, s.y);
            world
                .latent
                .cell(row, col)
                .iter()
                .map(|&v| f64::from(v))
                .collect()
        })
        .collect();
    let y_luc: Vec<usize> = world.luc.iter().map(|s| s.label).collect();
    let (_, luc_report) = train_luc(&x_luc, &y_luc, k, split, head_cfg, seeds)?;

    let mut x_sdm = Vec::new();
    for region in &world.regions {
        let RegionRule::Buffer {
            centroid_x,
            centroid_y,
            radius,
        } = &region.rule
        else {
            continue;
        };
        let query = crate::fieldgrid::BufferQuery::new(*centroid_x, *centroid_y, *radius)?;
        let pooled = crate::fieldgrid::pool_buffer(&world.latent, &query)?;
        x_sdm.push(pooled.values);
    }
    let (_, sdm_report) = train_sdm(&x_sdm, &world.targets, split, head_cfg, seeds)?;

    Ok((
        luc_report.metric("f1").map(|m| m.mean).unwrap_or(0.0),
        sdm_report.metric("kl").map(|m| m.mean).unwrap_or(f64::NAN),
    ))
}

/// Relative file names inside a bundle directory.
pub const BUNDLE_FIELD: &str = "field.aef";
pub const BUNDLE_POIS: &str = "pois.csv";
pub const BUNDLE_TEXT: &str = "text.tev";
pub const BUNDLE_LUC: &str = "luc.csv";
pub const BUNDLE_SDM: &str = "sdm.csv";
pub const BUNDLE_REGIONS: &str = "regions.csv";
pub const BUNDLE_MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub config: SynthConfig,
    pub files: BTreeMap<String, String>,
}

/// Writes the dataset bundle plus a manifest with per-file SHA-256 hashes.
/// Returns the manifest path.
pub fn write_bundle(world: &SynthWorld, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_field(&world.field, &dir.join(BUNDLE_FIELD))?;
    write_pois(&world.pois, &dir.join(BUNDLE_POIS))?;
    write_text_embeddings(&world.text, &dir.join(BUNDLE_TEXT))?;
    write_luc_csv(&world.luc, &dir.join(BUNDLE_LUC))?;
    write_sdm_csv(&world.targets, &dir.join(BUNDLE_SDM))?;
    write_regions_csv(&world.regions, &dir.join(BUNDLE_REGIONS))?;

    let mut files = BTreeMap::new();
    for name in [
        BUNDLE_FIELD,
        BUNDLE_POIS,
        BUNDLE_TEXT,
        BUNDLE_LUC,
        BUNDLE_SDM,
        BUNDLE_REGIONS,
    ] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
    }
    let manifest = BundleManifest {
        config: world.cfg.clone(),
        files,
    };
    let manifest_path = dir.join(BUNDLE_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Poi(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<BundleManifest> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("manifest: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poi::{load_pois, load_text_embeddings};
    use crate::tasks::load_luc_csv;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            grid_size: 48,
            n_pois: 400,
            n_regions: 30,
            k: 3,
            noise_sigma: 0.05,
            seed: 7,
            d_t: 32,
            n_luc_samples: 400,
            region_radius: 80.0,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.field.data(), b.field.data());
        assert_eq!(a.pois, b.pois);
        assert_eq!(a.text, b.text);
        assert_eq!(a.luc, b.luc);
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn zero_noise_field_is_exactly_mixing_times_latent() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            k: 2,
            ..small_cfg()
        };
        let world = generate(&cfg).unwrap();
        for &(row, col) in &[(0usize, 0usize), (10, 20), (40, 5)] {
            let lat = world.latent.cell(row, col);
            let ae = world.field.cell(row, col);
            for c in 0..FIELD_CHANNELS {
                let mut v = 0.0;
                for ch in 0..cfg.k {
                    v += world.mixing.get(c, ch) * f64::from(lat[ch]);
                }
                assert_eq!(ae[c], v as f32, "channel {c} at ({row}, {col})");
            }
        }
        // Cells with identical latent therefore have identical vectors.
    }

    #[test]
    fn every_category_is_populated_at_scale() {
        let cfg = SynthConfig {
            n_pois: 50 * 3,
            ..small_cfg()
        };
        let world = generate(&cfg).unwrap();
        for k in 0..cfg.k {
            let name = level1_name(k);
            assert!(
                world.pois.iter().any(|p| p.category_l1 == name),
                "category {name} has no POIs"
            );
        }
    }

    #[test]
    fn poi_frequencies_track_latent_proportions() {
        // Chi-square sanity check; the p-value is reported, not asserted.
        let cfg = SynthConfig {
            n_pois: 3000,
            ..small_cfg()
        };
        let world = generate(&cfg).unwrap();
        let cells = cfg.grid_size * cfg.grid_size;
        let mut expected = vec![0.0f64; cfg.k];
        for cell in 0..cells {
            for ch in 0..cfg.k {
                expected[ch] += f64::from(world.latent.data()[cell * cfg.k + ch]);
            }
        }
        expected.iter_mut().for_each(|v| *v /= cells as f64);
        let mut observed = vec![0.0f64; cfg.k];
        for p in &world.pois {
            let cat = (0..cfg.k)
                .find(|&k| p.category_l1 == level1_name(k))
                .unwrap();
            observed[cat] += 1.0;
        }
        let n = cfg.n_pois as f64;
        let chi2: f64 = (0..cfg.k)
            .map(|k| {
                let e = expected[k] * n;
                let d = observed[k] - e;
                d * d / e
            })
            .sum();
        let dof = (cfg.k - 1) as f64;
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let dist = ChiSquared::new(dof).unwrap();
        let p_value = 1.0 - dist.cdf(chi2);
        println!("chi-square {chi2:.3} (dof {dof}), p-value {p_value:.4}");
        for k in 0..cfg.k {
            assert!(observed[k] > 0.0, "category {k} empty");
        }
    }

    #[test]
    fn raw_field_linear_probe_separates_land_use() {
        // The construction is linear, so a linear probe on the raw
        // 64-channel vectors must reach high accuracy at low noise.
        let cfg = SynthConfig {
            noise_sigma: 0.05,
            ..small_cfg()
        };
        let world = generate(&cfg).unwrap();
        let side = cfg.grid_size;
        let x: Vec<Vec<f64>> = world
            .luc
            .iter()
            .map(|s| {
                let col = ((s.x - world.field.origin_x) / world.field.cell_size).round() as usize;
                let row = ((world.field.origin_y - s.y) / world.field.cell_size).round() as usize;
                world
                    .field
                    .cell(row.min(side - 1), col.min(side - 1))
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect()
            })
            .collect();
        let y: Vec<usize> = world.luc.iter().map(|s| s.label).collect();
        let cfg_head = TaskHeadConfig {
            hidden: 0,
            max_epochs: 500,
            ..Default::default()
        };
        let (_, report) = train_luc(&x, &y, cfg.k, &SplitSpec::default(), &cfg_head, &[0]).unwrap();
        let f1 = report.metric("f1").unwrap().mean;
        assert!(f1 > 0.9, "linear probe F1 = {f1}");
    }

    #[test]
    fn self_reference_oracle_is_perfect() {
        let world = generate(&small_cfg()).unwrap();
        let head_cfg = TaskHeadConfig {
            hidden: 0,
            max_epochs: 60,
            ..Default::default()
        };
        let refs =
            oracle_best_possible(&world, &head_cfg, &SplitSpec::default(), &[0]).unwrap();
        assert_eq!(refs.luc_self_f1, 1.0);
        assert!(refs.sdm_self_kl < 1e-7);
    }

    #[test]
    fn bundle_roundtrips_through_module_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate(&SynthConfig {
            n_pois: 60,
            n_luc_samples: 50,
            n_regions: 8,
            ..small_cfg()
        })
        .unwrap();
        let manifest_path = write_bundle(&world, dir.path()).unwrap();
        let manifest = read_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.files.len(), 6);

        let field = crate::fieldgrid::read_field(&dir.path().join(BUNDLE_FIELD)).unwrap();
        assert_eq!(field.data(), world.field.data());
        let pois = load_pois(&dir.path().join(BUNDLE_POIS)).unwrap();
        assert_eq!(pois, world.pois);
        let text = load_text_embeddings(&dir.path().join(BUNDLE_TEXT), &pois).unwrap();
        assert_eq!(text, world.text);
        let luc = load_luc_csv(&dir.path().join(BUNDLE_LUC)).unwrap();
        assert_eq!(luc, world.luc);
        let sdm = crate::tasks::load_sdm_csv(&dir.path().join(BUNDLE_SDM)).unwrap();
        assert_eq!(sdm, world.targets);
        let regions = crate::infer::load_regions_csv(&dir.path().join(BUNDLE_REGIONS)).unwrap();
        assert_eq!(regions, world.regions);

        // Re-writing the bundle reproduces identical hashes.
        let manifest2 = read_manifest(&write_bundle(&world, dir.path()).unwrap()).unwrap();
        assert_eq!(manifest.files, manifest2.files);
    }
}

//! Pipeline configuration: a TOML file with one section per stage. Every
//! field has a default, so an empty file (or no file at all) runs the
//! canonical configuration end to end inside `out_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::AlignmentConfig;
use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::tasks::{SplitSpec, TaskHeadConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub field: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub luc: Option<PathBuf>,
    pub sdm: Option<PathBuf>,
    /// Region definitions: a `region_id,cx,cy,radius` CSV, or an `.aef`
    /// mask raster whose values are region ids.
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    /// Buffer radius for land-use sample points, meters.
    pub luc_radius: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![0, 1, 2, 3, 4],
            luc_radius: 50.0,
            train_frac: 0.70,
            val_frac: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    /// Pretraining epochs per sweep setting; 0 keeps `alignment.epochs`.
    pub epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seeds: vec![0],
            epochs: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub alignment: AlignmentConfig,
    pub task_head: TaskHeadConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            alignment: AlignmentConfig::default(),
            task_head: TaskHeadConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw).map_err(|e| Error::InvalidConfig {
            field: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.out_dir.join("synth")
    }

    pub fn pretrain_dir(&self) -> PathBuf {
        self.out_dir.join("pretrain")
    }

    pub fn embed_dir(&self) -> PathBuf {
        self.out_dir.join("embed")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.out_dir.join("sweep")
    }

    pub fn field_path(&self) -> PathBuf {
        self.paths
            .field
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_FIELD))
    }

    pub fn pois_path(&self) -> PathBuf {
        self.paths
            .pois
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_POIS))
    }

    pub fn text_path(&self) -> PathBuf {
        self.paths
            .text
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_TEXT))
    }

    pub fn luc_path(&self) -> PathBuf {
        self.paths
            .luc
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_LUC))
    }

    pub fn sdm_path(&self) -> PathBuf {
        self.paths
            .sdm
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_SDM))
    }

    pub fn regions_path(&self) -> PathBuf {
        self.paths
            .regions
            .clone()
            .unwrap_or_else(|| self.synth_dir().join(crate::synth::BUNDLE_REGIONS))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.pretrain_dir().join("checkpoint.aeth")
    }

    pub fn train_state_path(&self) -> PathBuf {
        self.pretrain_dir().join("state.aes")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.pretrain_dir().join("train_log.csv")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.eval.train_frac,
            val: self.eval.val_frac,
            stratified: false,
        }
    }

    /// Applies one global seed to the synth and alignment stages.
    pub fn override_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.alignment.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_canonical_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.alignment.lambda, 0.2);
        assert_eq!(cfg.alignment.tau_ae, 0.07);
        assert_eq!(cfg.alignment.tau_poi, 0.07);
        assert_eq!(cfg.alignment.batch_size, 512);
        assert_eq!(cfg.alignment.epochs, 100);
        assert_eq!(cfg.alignment.hidden_dim, 256);
        assert_eq!(cfg.alignment.out_dim, 128);
        assert_eq!(cfg.alignment.r_b, 50.0);
        assert_eq!(cfg.alignment.r_a, 100.0);
        assert_eq!(cfg.eval.luc_radius, 50.0);
        assert_eq!(cfg.eval.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.task_head.hidden, 64);
    }

    #[test]
    fn partial_sections_only_override_named_fields() {
        let cfg: PipelineConfig = toml::from_str(
            "out_dir = \"work\"\n[alignment]\nlambda = 0.4\nepochs = 7\n[synth]\ngrid_size = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("work"));
        assert_eq!(cfg.alignment.lambda, 0.4);
        assert_eq!(cfg.alignment.epochs, 7);
        assert_eq!(cfg.alignment.batch_size, 512);
        assert_eq!(cfg.synth.grid_size, 64);
        assert_eq!(cfg.synth.k, 6);
    }

    #[test]
    fn derived_paths_follow_out_dir_unless_overridden() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.field_path(), PathBuf::from("out/synth/field.aef"));
        cfg.paths.field = Some(PathBuf::from("/data/london.aef"));
        assert_eq!(cfg.field_path(), PathBuf::from("/data/london.aef"));
    }
}

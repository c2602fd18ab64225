use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineSpec;
use crate::classifier::{Architecture, TrainConfig};
use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::evaluation::MiaConfig;
use crate::metaunlearn::MetaTrainConfig;

/// Request sizes crossed by the robustness ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub sizes: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { sizes: vec![5, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    /// Seed of the dataset generator. Shared by every run seed.
    pub data_seed: u64,
    /// Train / validation / test identity fractions.
    pub split: [f64; 3],
    /// Identities per unlearning request.
    pub n_s: usize,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    /// Recipe for both the original model and the retrained reference. Its
    /// `seed` is replaced per run.
    pub train: TrainConfig,
    /// Its `seed` is replaced per run.
    pub metaloss: MetaTrainConfig,
    pub baselines: Vec<BaselineSpec>,
    pub mia: MiaConfig,
    pub analysis_bins: usize,
    pub ablation: AblationConfig,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            data_seed: 0,
            split: [0.8, 0.1, 0.1],
            n_s: 5,
            seeds: vec![0, 1, 2],
            hidden: vec![64, 32],
            train: TrainConfig::default(),
            metaloss: MetaTrainConfig::default(),
            baselines: vec![
                BaselineSpec::PretrainNoop,
                BaselineSpec::RetrainOracle,
                BaselineSpec::NegGradSupport { steps: 5, step_size: 0.05 },
            ],
            mia: MiaConfig::default(),
            analysis_bins: 5,
            ablation: AblationConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.n_s == 0 {
            return Err(Error::Config("n_s must be at least 1".into()));
        }
        self.generator.validate()?;
        if self.split.iter().any(|f| !f.is_finite() || *f <= 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!("split fractions {:?} must be positive and sum to 1", self.split)));
        }
        self.architecture()?;
        self.train.validate()?;
        self.metaloss.validate()?;
        for b in &self.baselines {
            b.validate()?;
        }
        self.mia.validate()?;
        if self.analysis_bins == 0 {
            return Err(Error::Config("analysis_bins must be at least 1".into()));
        }
        if self.ablation.sizes.contains(&0) {
            return Err(Error::Config("ablation sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(
            self.generator.feature_dim,
            self.hidden.clone(),
            self.generator.num_classes,
            self.generator.task_kind,
        )
    }

    /// SHA-256 of the canonical JSON form (sorted keys) without `out_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Independent per-stage seed derived from a run seed.
pub fn stage_seed(run_seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

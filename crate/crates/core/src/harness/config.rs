use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::geometry::{GaussianKernel, MapFrame};
use crate::metrics::AP_THRESHOLDS;
use crate::net::{NetConfig, TrainConfig};
use crate::scene::{Difficulty, ObserveConfig, GENERATOR_VERSION};
use crate::visibility::TTestKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub difficulty: Difficulty,
    pub train_count: usize,
    pub val_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            difficulty: Difficulty::Medium,
            train_count: 500,
            val_count: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Chamfer thresholds in metres.
    pub thresholds: Vec<f64>,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub ttest: TTestKind,
    /// Val scenes used by the validation hook during training; 0 = all.
    pub val_scenes: usize,
    /// Scenes whose probability and uncertainty maps are exported as PGM.
    pub pgm_scenes: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            thresholds: AP_THRESHOLDS.to_vec(),
            kernel_size: 5,
            kernel_sigma: 1.0,
            ttest: TTestKind::Paired,
            val_scenes: 50,
            pgm_scenes: 4,
        }
    }
}

impl MetricsConfig {
    pub fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.kernel_size, self.kernel_sigma)
    }
}

/// Everything a command needs. Serializes to TOML; the same shape is read
/// back from `--config` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub frame: MapFrame,
    pub observe: ObserveConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            frame: MapFrame::default(),
            observe: ObserveConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.sampler.validate(self.sampler.steps)?;
        self.metrics.kernel()?;
        if self.frame.grid_h != self.net.grid_h || self.frame.grid_w != self.net.grid_w {
            return Err(Error::Config(format!(
                "frame grid {}x{} differs from network grid {}x{}",
                self.frame.grid_h, self.frame.grid_w, self.net.grid_h, self.net.grid_w
            )));
        }
        if !(self.frame.x_max > self.frame.x_min && self.frame.y_max > self.frame.y_min) {
            return Err(Error::Config("empty map frame".into()));
        }
        if self.metrics.thresholds.is_empty() || self.metrics.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("AP thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Keys present in the file replace the corresponding values of `self`.
    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.overlay_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn overlay_str(&self, text: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Set one dotted key, e.g. `sampler.k`, from a TOML literal; bare words
    /// that are not valid TOML are taken as strings.
    pub fn set_key(&self, key: &str, literal: &str) -> Result<Self> {
        let value = match toml::from_str::<toml::Table>(&format!("v = {literal}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(literal.to_string()),
        };
        let mut over = value;
        for part in key.split('.').rev() {
            if part.is_empty() {
                return Err(Error::Config(format!("bad key {key:?}")));
            }
            let mut t = toml::Table::new();
            t.insert(part.to_string(), over);
            over = toml::Value::Table(t);
        }
        let mut base = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        base.try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))
    }

    /// SHA-256 of the canonical JSON form, with the output and data
    /// directories blanked so that a run moved elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.data.dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Reproduction record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    #[serde(default)]
    pub outputs: serde_json::Value,
}

impl RunMeta {
    pub fn new(command: &str, cfg: &RunConfig, outputs: serde_json::Value) -> Self {
        RunMeta {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            generator: GENERATOR_VERSION.to_string(),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            config: cfg.clone(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("run-{}.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

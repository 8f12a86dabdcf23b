//! Flat experiment configuration with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{MixupConfig, MixupMode};
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ssm::{AMode, DMode, MambaBlockConfig};
use crate::train::{LossKind, LrSchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_path: Option<PathBuf>,
    /// Defaults to the file stem of `dataset_path`.
    pub dataset_name: Option<String>,
    pub has_timestamp: bool,
    /// Required only when no dataset is given (e.g. for FLOP estimates).
    pub channels: Option<usize>,
    /// Explicit split ratios; chosen from the dataset name when unset.
    pub split_train: Option<f64>,
    pub split_val: Option<f64>,
    pub split_test: Option<f64>,

    pub look_back: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub gdd_expansion: f64,
    pub use_gdd: bool,
    pub d_state: usize,
    pub expand: usize,
    pub use_conv: bool,
    pub conv_kernel: usize,
    pub use_z_branch: bool,
    pub a_mode: AMode,
    pub d_mode: DMode,
    pub dt_rank: Option<usize>,

    pub mixup: MixupMode,
    pub sigma: f64,

    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let block = MambaBlockConfig::default();
        ExperimentConfig {
            dataset_path: None,
            dataset_name: None,
            has_timestamp: true,
            channels: None,
            split_train: None,
            split_val: None,
            split_test: None,
            look_back: 96,
            horizon: 96,
            patch_len: 16,
            stride: 8,
            d_model: block.d_model,
            num_blocks: 3,
            dropout: 0.0,
            gdd_expansion: 1.0,
            use_gdd: true,
            d_state: block.d_state,
            expand: block.expand,
            use_conv: block.use_conv,
            conv_kernel: block.conv_kernel,
            use_z_branch: block.use_z_branch,
            a_mode: block.a_mode,
            d_mode: block.d_mode,
            dt_rank: block.dt_rank,
            mixup: MixupMode::Channel,
            sigma: 1.0,
            lr: 5e-4,
            epochs: 10,
            patience: 3,
            batch_size: 32,
            loss: LossKind::L1,
            clip: 5.0,
            lr_schedule: LrSchedule::Constant,
            seed: 2020,
            output_dir: None,
        }
    }
}

fn config_error(what: impl std::fmt::Display) -> Error {
    Error::Config(what.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.message()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `key=value` override. The value is read as a TOML value
    /// and falls back to a plain string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| config_error(format!("override {spec:?} is not of the form key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).map_err(config_error)?;
        table.insert(key.to_string(), value);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_error(format!("override {key}: {}", e.message())))?;
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset_path
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let spec = match (self.split_train, self.split_val, self.split_test) {
            (None, None, None) => SplitSpec::for_dataset(&self.dataset_name()),
            (Some(train), Some(val), Some(test)) => SplitSpec { train, val, test },
            _ => return Err(config_error("split_train, split_val and split_test must be given together")),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn block_config(&self) -> MambaBlockConfig {
        MambaBlockConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            use_conv: self.use_conv,
            conv_kernel: self.conv_kernel,
            use_z_branch: self.use_z_branch,
            a_mode: self.a_mode,
            d_mode: self.d_mode,
            dt_rank: self.dt_rank,
        }
    }

    pub fn model_config(&self, channels: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            look_back: self.look_back,
            horizon: self.horizon,
            channels,
            patch_len: self.patch_len,
            stride: self.stride,
            num_blocks: self.num_blocks,
            dropout: self.dropout,
            gdd_expansion: self.gdd_expansion,
            use_gdd: self.use_gdd,
            block: self.block_config(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mixup_config(&self) -> MixupConfig {
        MixupConfig {
            mode: self.mixup,
            sigma: self.sigma,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_error(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_error("epochs and batch_size must be positive"));
        }
        if self.clip.is_nan() || self.clip < 0.0 {
            return Err(config_error(format!("clip must be ≥ 0, got {}", self.clip)));
        }
        Ok(TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            loss: self.loss,
            clip: (self.clip > 0.0).then_some(self.clip),
            schedule: self.lr_schedule,
            seed: self.seed,
        })
    }
}

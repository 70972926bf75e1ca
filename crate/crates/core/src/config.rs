//! Run configuration: TOML files layered over a named profile.
//!
//! Every key is optional. Unset keys take the profile's value, and command
//! line flags are applied last.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitRatios, SynthConfig};
use crate::ensemble::OlsOptions;
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::optim::{AdamConfig, LossConfig};
use crate::train::{Objective, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64x64 input, 4,000 images, 30 epochs.
    #[default]
    Desk,
    /// 128x128 input, 300 epochs.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::config(
                "profile",
                format!("unknown profile `{other}` (expected desk or full)"),
            )),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub total_count: usize,
    pub positive_fraction: f64,
    pub canvas_size_range: [usize; 2],
    pub noise_level: f64,
    /// Side of the square network input after resize and crop.
    pub input_side: usize,
    pub split: SplitRatios,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub conv_channels: Vec<usize>,
    pub fc_width: usize,
    pub dropout: Vec<f64>,
    pub pool_after: Vec<usize>,
    pub conv_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub ckpt_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub data: DataSection,
    pub network: NetworkSection,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub ensemble: OlsOptions,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

/// Command-line overrides, applied after the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub epochs: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub ckpt_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let spec = NetworkSpec::full_scale();
        let synth = SynthConfig::default();
        let (input_side, epochs) = match profile {
            Profile::Desk => (64, 30),
            Profile::Full => (spec.input_size[1], 300),
        };
        Self {
            profile,
            seed: 0,
            data: DataSection {
                total_count: synth.total_count,
                positive_fraction: synth.positive_fraction,
                canvas_size_range: synth.canvas_size_range,
                noise_level: synth.noise_level,
                input_side,
                split: SplitRatios::default(),
            },
            network: NetworkSection {
                conv_channels: spec.conv_channels,
                fc_width: spec.fc_width,
                dropout: spec.dropout_probs,
                pool_after: spec.pool_after,
                conv_stride: spec.conv_stride,
            },
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
            train: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
            ensemble: OlsOptions::default(),
            paths: Paths {
                data_dir: "data".into(),
                ckpt_dir: "checkpoints".into(),
                report_dir: "reports".into(),
            },
        }
    }

    /// Parses TOML text over the profile it names (or `profile` when given,
    /// which wins over the file).
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let overlay: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        let named = match overlay.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse::<Profile>()?),
            Some(_) => return Err(Error::config("profile", "must be a string")),
            None => None,
        };
        let chosen = profile.or(named).unwrap_or_default();
        let mut base =
            toml::Table::try_from(Self::profile(chosen)).map_err(|e| Error::config("config", e.to_string()))?;
        merge(&mut base, overlay);
        base.insert("profile".into(), toml::Value::String(chosen.to_string()));
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise the bare profile, then applies
    /// `overrides` and validates.
    pub fn resolve(path: Option<&Path>, profile: Option<Profile>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                Self::from_toml(&text, profile)?
            }
            None => Self::profile(profile.unwrap_or_default()),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threshold {
            self.ensemble.threshold = t;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(d) = &o.data_dir {
            self.paths.data_dir = d.clone();
        }
        if let Some(d) = &o.ckpt_dir {
            self.paths.ckpt_dir = d.clone();
        }
        if let Some(d) = &o.report_dir {
            self.paths.report_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.data.split.validate()?;
        if self.data.input_side < 2 {
            return Err(Error::config("data.input_side", "must be at least 2"));
        }
        self.network_spec()
            .validate()
            .map_err(|e| Error::config("network", e.to_string()))?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.train.validate()?;
        self.ensemble.validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            total_count: self.data.total_count,
            positive_fraction: self.data.positive_fraction,
            canvas_size_range: self.data.canvas_size_range,
            seed: self.seed,
            noise_level: self.data.noise_level,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_size: [3, self.data.input_side, self.data.input_side],
            conv_channels: self.network.conv_channels.clone(),
            fc_width: self.network.fc_width,
            dropout_probs: self.network.dropout.clone(),
            l2_fc1: self.loss.l2_coefficient,
            pool_after: self.network.pool_after.clone(),
            conv_stride: self.network.conv_stride,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            loss: self.loss,
            adam: self.optim,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved config, paths
    /// excluded so relocating outputs keeps the hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Self::profile(self.profile).paths;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fedopt::{AggConfig, ClientConfig};
use crate::model::{Architecture, ScenarioKind};
use crate::seed;

/// Environment variable that replaces `master_seed` when set.
pub const SEED_ENV: &str = "FEDPROXY_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub blocks: usize,
    pub width: usize,
    pub input_dim: usize,
    pub out_dim: usize,
    pub init_scale: f64,
    /// Defaults to a seed derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            blocks: 8,
            width: 16,
            input_dim: 6,
            out_dim: 1,
            init_scale: 0.5,
            seed: None,
        }
    }
}

impl BackboneSpec {
    pub fn arch(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim,
            width: self.width,
            out_dim: self.out_dim,
            blocks: self.blocks,
        }
    }
}

/// Public data and the pretraining budget of the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PublicSpec {
    pub samples: usize,
    pub bi_samples: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub batch_size: usize,
    pub seed: Option<u64>,
}

impl Default for PublicSpec {
    fn default() -> Self {
        Self {
            samples: 256,
            bi_samples: 128,
            pretrain_steps: 300,
            pretrain_lr: 0.05,
            batch_size: 32,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub clients: usize,
    pub noise_sd: f64,
    pub seed: Option<u64>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Heterogeneous,
            clients: 4,
            noise_sd: 0.05,
            seed: None,
        }
    }
}

/// Samples per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub train_samples: usize,
    pub eval_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            train_samples: 64,
            eval_samples: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub backbone: BackboneSpec,
    pub public: PublicSpec,
    pub scenario: ScenarioSpec,
    pub kappa: f64,
    pub rounds: usize,
    pub aggregation: AggConfig,
    pub client: ClientConfig,
    pub data: EvalSpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            backbone: BackboneSpec::default(),
            public: PublicSpec::default(),
            scenario: ScenarioSpec::default(),
            kappa: 0.5,
            rounds: 5,
            aggregation: AggConfig::default(),
            client: ClientConfig::default(),
            data: EvalSpec::default(),
            output_dir: None,
        }
    }
}

/// Seeds of every random component of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub backbone: u64,
    pub public: u64,
    pub scenario: u64,
    pub pretrain: u64,
    pub client_train: u64,
}

fn positive(v: usize, what: &str) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{what} must be ≥ 1")));
    }
    Ok(())
}

impl RunConfig {
    /// Parse TOML, or JSON when the path ends in `.json`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read, apply the seed override from the environment, validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::from_path(path)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.master_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned 64-bit integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        positive(b.blocks, "backbone.blocks")?;
        positive(b.width, "backbone.width")?;
        positive(b.input_dim, "backbone.input_dim")?;
        positive(b.out_dim, "backbone.out_dim")?;
        if b.input_dim > b.width {
            return Err(Error::Config("backbone.input_dim cannot exceed backbone.width".into()));
        }
        if !(b.init_scale >= 0.0 && b.init_scale.is_finite()) {
            return Err(Error::Config("backbone.init_scale must be finite and ≥ 0".into()));
        }
        let p = &self.public;
        positive(p.samples, "public.samples")?;
        positive(p.bi_samples, "public.bi_samples")?;
        positive(p.batch_size, "public.batch_size")?;
        if !(p.pretrain_lr > 0.0 && p.pretrain_lr.is_finite()) {
            return Err(Error::Config("public.pretrain_lr must be positive".into()));
        }
        positive(self.scenario.clients, "scenario.clients")?;
        if !(self.scenario.noise_sd >= 0.0 && self.scenario.noise_sd.is_finite()) {
            return Err(Error::Config("scenario.noise_sd must be finite and ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        if crate::compression::retained_count(b.blocks, self.kappa) == 0 {
            return Err(Error::Config("kappa retains no blocks".into()));
        }
        positive(self.rounds, "rounds")?;
        positive(self.data.train_samples, "data.train_samples")?;
        positive(self.data.eval_samples, "data.eval_samples")?;
        self.aggregation.validate().map_err(as_config)?;
        self.client.validate().map_err(as_config)?;
        Ok(())
    }

    pub fn seeds(&self) -> RunSeeds {
        let m = self.master_seed;
        let pick = |explicit: Option<u64>, tag| explicit.unwrap_or_else(|| seed::derive(m, &[tag]));
        RunSeeds {
            backbone: pick(self.backbone.seed, seed::tag::BACKBONE_INIT),
            public: pick(self.public.seed, seed::tag::PUBLIC_TASK),
            scenario: pick(self.scenario.seed, seed::tag::SCENARIO),
            pretrain: seed::derive(m, &[seed::tag::PRETRAIN]),
            client_train: seed::derive(m, &[seed::tag::CLIENT_TRAIN, self.client.seed]),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

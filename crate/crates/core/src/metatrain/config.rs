use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::AdamConfig;
use crate::transforms::TransformKind;
use crate::vision::ArchPreset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// Both environments see transformed copies of the same windows.
    #[default]
    Corresponding,
    /// Each environment samples from its own half of the dataset.
    NonCorresponding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// How the memory model's inputs are formed from encoder posteriors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LatentInput {
    #[default]
    Sampled,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub pred_iters: u64,
    pub recon_iters: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            pred_iters: 20,
            recon_iters: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub beta_p: f64,
    pub beta_r: f64,
    pub eta: f64,
    pub eta_mu: f64,
    pub eta_sigma: f64,
    pub kl_weight: f64,
    /// Nats per latent dimension below which the KL term is free.
    pub free_bits: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_p: 1.0,
            beta_r: 1.0,
            eta: 1.0,
            eta_mu: 1.0,
            eta_sigma: 0.1,
            kl_weight: 1e-3,
            free_bits: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub memory: AdamConfig,
    pub vision_o: AdamConfig,
    pub vision_i: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub batch: u64,
    pub noise: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 1,
            batch: 2,
            noise: 3,
            eval: 4,
        }
    }
}

/// Where training data comes from: an `MWD1` file, or generated in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            episodes: 200,
            steps: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluate after every this many cycles (and always after the last).
    pub every_cycles: u64,
    /// Held-out corresponding window pairs.
    pub windows: usize,
    /// Length of the held-out episodes the windows are cut from.
    pub episode_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every_cycles: 10,
            windows: 32,
            episode_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// The environment trained alongside the original one.
    pub variant: TransformKind,
    pub mode: PairingMode,
    pub arch: ArchPreset,
    pub precision: Precision,
    pub batch_size: usize,
    pub seq_len: usize,
    pub cycles: u64,
    pub teacher_forcing: bool,
    pub latent_input: LatentInput,
    /// Write a checkpoint every this many cycles (0 = only at the end).
    pub checkpoint_every: u64,
    pub schedule: Schedule,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub seeds: Seeds,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: TransformKind::Mirror,
            mode: PairingMode::Corresponding,
            arch: ArchPreset::Mini,
            precision: Precision::F32,
            batch_size: 16,
            seq_len: 25,
            cycles: 300,
            teacher_forcing: true,
            latent_input: LatentInput::Sampled,
            checkpoint_every: 10,
            schedule: Schedule::default(),
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            seeds: Seeds::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == TransformKind::Identity {
            return Err(Error::Config(
                "variant must be one of the transformed environments".into(),
            ));
        }
        let l = &self.loss;
        let weights = [
            ("loss.beta_p", l.beta_p),
            ("loss.beta_r", l.beta_r),
            ("loss.eta", l.eta),
            ("loss.eta_mu", l.eta_mu),
            ("loss.eta_sigma", l.eta_sigma),
            ("loss.kl_weight", l.kl_weight),
            ("loss.free_bits", l.free_bits),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [("batch_size", self.batch_size), ("seq_len", self.seq_len)] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.seq_len < 2 {
            return Err(Error::Config(
                "seq_len must be >= 2 to form a prediction".into(),
            ));
        }
        if self.eval.windows < 1 || self.eval.episode_steps < self.seq_len {
            return Err(Error::Config(
                "eval.windows must be >= 1 and eval.episode_steps >= seq_len".into(),
            ));
        }
        for (name, o) in [
            ("optim.memory", self.optim.memory),
            ("optim.vision_o", self.optim.vision_o),
            ("optim.vision_i", self.optim.vision_i),
        ] {
            if !(o.lr > 0.0
                && o.eps > 0.0
                && (0.0..1.0).contains(&o.beta1)
                && (0.0..1.0).contains(&o.beta2))
            {
                return Err(Error::Config(format!(
                    "{name}: invalid optimizer settings {o:?}"
                )));
            }
        }
        self.arch.ensure_available()
    }

    /// Sets every model's learning rate.
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.optim.memory.lr = lr;
        self.optim.vision_o.lr = lr;
        self.optim.vision_i.lr = lr;
        self
    }
}

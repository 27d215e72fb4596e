//! Run configuration: one TOML file drives every subcommand, with CLI
//! flags overriding individual fields. Each command writes the resolved
//! config back out as a manifest so any run can be reproduced from it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use diffsg_core::baselines::GdConfig;
use diffsg_core::denoiser::DenoiserConfig;
use diffsg_core::diffusion::{GuidanceConfig, SamplerConfig, SamplerKind, TrainConfig};
use diffsg_core::nn::AdamConfig;
use diffsg_core::problems::{ProblemKind, ProblemRanges};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format_version: u32,
    /// co | msr3 | msr80 | nu
    pub problem: ProblemKind,
    pub seed: u64,
    /// Worker threads (1 = fully sequential).
    pub threads: usize,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub guidance: GuidanceConfig,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub gd: GdConfig,
    pub ranges: ProblemRanges,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: CONFIG_FORMAT_VERSION,
            problem: ProblemKind::Msr3,
            seed: 42,
            threads: 1,
            out_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            model: ModelSection::default(),
            guidance: GuidanceConfig::default(),
            train: TrainSection::default(),
            sampler: SamplerSection::default(),
            gd: GdConfig::default(),
            ranges: ProblemRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Training pairs; per-problem default when absent.
    pub train_size: Option<usize>,
    /// Validation pairs per domain.
    pub val_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Hidden width; per-problem default when absent.
    pub hidden: Option<usize>,
    /// Down/up-sampling depth; per-problem default when absent.
    pub depth: Option<usize>,
    /// Maximum diffusion step.
    pub max_step: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Per-problem default when absent.
    pub epochs: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainSection {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 64,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub ddim_steps: Vec<usize>,
    pub eta: f64,
    pub k: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection { kind: SamplerKind::Ddpm, ddim_steps: Vec::new(), eta: 0.0, k: 16 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        if config.format_version != CONFIG_FORMAT_VERSION {
            bail!(
                "config {} has format version {}, expected {CONFIG_FORMAT_VERSION}",
                path.display(),
                config.format_version
            );
        }
        Ok(config)
    }

    pub fn train_size(&self) -> usize {
        self.data.train_size.unwrap_or(match self.problem {
            ProblemKind::Co => 50_000,
            _ => 10_000,
        })
    }

    pub fn val_size(&self) -> usize {
        self.data.val_size.unwrap_or(2_000)
    }

    pub fn epochs(&self) -> usize {
        self.train.epochs.unwrap_or(match self.problem {
            ProblemKind::Co => 40,
            ProblemKind::Msr3 => 150,
            ProblemKind::Msr80 => 150,
            ProblemKind::Nu => 150,
        })
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let (hidden, depth) = match self.problem {
            ProblemKind::Nu => (32, 3),
            _ => (64, 4),
        };
        DenoiserConfig {
            solution_dim: self.problem.solution_dim(),
            condition_dim: self.problem.condition_dim(),
            hidden: self.model.hidden.unwrap_or(hidden),
            depth: self.model.depth.unwrap_or(depth),
            max_step: self.model.max_step.unwrap_or(20),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
            },
            batch_size: self.train.batch_size,
            epochs: self.epochs(),
            p_uncond: self.guidance.p_uncond,
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            kind: self.sampler.kind,
            ddim_steps: self.sampler.ddim_steps.clone(),
            eta: self.sampler.eta,
        }
    }

    // Canonical artifact paths under the output directory.

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir().join("train.jsonl")
    }

    pub fn val_path(&self, domain: diffsg_core::problems::Domain) -> PathBuf {
        self.data_dir().join(format!("val_{domain}.jsonl"))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.data_dir().join("stats.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.json")
    }

    pub fn mtfnn_checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("mtfnn.json")
    }

    pub fn loss_log_path(&self) -> PathBuf {
        self.out_dir.join("loss.csv")
    }

    /// Writes the resolved config as `manifest_<command>.toml` next to the
    /// outputs; re-running that file reproduces them.
    pub fn write_manifest(&self, command: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("manifest_{command}.toml"));
        let mut text = format!(
            "# reproducible run manifest: diffsg {command} --config <this file>\n# diffsg version {}\n",
            env!("CARGO_PKG_VERSION")
        );
        text.push_str(&toml::to_string_pretty(self)?);
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config.problem, back.problem);
        assert_eq!(config.seed, back.seed);
        assert_eq!(config.epochs(), back.epochs());
    }

    #[test]
    fn per_problem_defaults() {
        let mut config = RunConfig::default();
        config.problem = ProblemKind::Nu;
        let d = config.denoiser_config();
        assert_eq!((d.hidden, d.depth), (32, 3));
        assert_eq!((d.solution_dim, d.condition_dim), (5, 7));
        config.problem = ProblemKind::Co;
        assert_eq!(config.train_size(), 50_000);
        let d = config.denoiser_config();
        assert_eq!((d.hidden, d.depth), (64, 4));
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let config: RunConfig = toml::from_str("problem = \"nu\"\nseed = 7").unwrap();
        assert_eq!(config.problem, ProblemKind::Nu);
        assert_eq!(config.seed, 7);
        assert_eq!(config.sampler.k, 16);
        assert_eq!(config.guidance.omega, 500.0);
    }
}

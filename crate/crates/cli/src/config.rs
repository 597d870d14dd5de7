use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use optreward_core::exec::{ExecMode, RunnerCommand};
use optreward_core::grpo::GrpoConfig;
use optreward_core::pipeline::GenerationConfig;
use optreward_core::toy::SftConfig;
use optreward_core::Tolerance;
use serde::{Deserialize, Serialize};

/// Everything a stage may need, read from one TOML file and then overridden by flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    pub tolerance: Tolerance,
    pub grpo: GrpoConfig,
    pub generation: GenerationConfig,
    pub exec: ExecSection,
    pub eval: EvalSection,
    pub toy: ToySection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecSection {
    pub time_limit_s: f64,
    pub memory_limit_mb: u64,
    pub parallelism: usize,
    pub mode: ExecMode,
    pub runner: Option<RunnerCommand>,
}

impl Default for ExecSection {
    fn default() -> Self {
        Self {
            time_limit_s: 30.0,
            memory_limit_mb: 1024,
            parallelism: 4,
            mode: ExecMode::Dynamic,
            runner: None,
        }
    }
}

impl ExecSection {
    pub fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit_s)
    }

    pub fn memory_limit_bytes(&self) -> u64 {
        self.memory_limit_mb.saturating_mul(1 << 20)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Pass@k cut-offs; empty means powers of two up to the smallest group.
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub steps: usize,
    pub learning_rate: f64,
    pub questions_per_step: usize,
    pub updates_per_batch: usize,
    pub sweep_sizes: Vec<usize>,
    pub sft: SftConfig,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.1,
            questions_per_step: 16,
            updates_per_batch: 1,
            sweep_sizes: Vec::new(),
            sft: SftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub problems: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub exec: Option<PathBuf>,
    pub votes: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Checks every section; run after flag overrides and before any stage.
    pub fn validate(&self) -> Result<()> {
        self.tolerance.validate()?;
        self.grpo.validate()?;
        self.generation.validate()?;
        if self.generation.group_size != self.grpo.group_size {
            bail!(
                "generation.group_size ({}) and grpo.group_size ({}) differ",
                self.generation.group_size,
                self.grpo.group_size
            );
        }
        if !(self.exec.time_limit_s.is_finite() && self.exec.time_limit_s > 0.0) {
            bail!("exec.time_limit_s must be positive, got {}", self.exec.time_limit_s);
        }
        if self.exec.memory_limit_mb == 0 {
            bail!("exec.memory_limit_mb must be positive");
        }
        if self.exec.parallelism == 0 {
            bail!("exec.parallelism must be at least 1");
        }
        if let Some(k) = self.eval.ks.iter().find(|k| **k == 0) {
            bail!("eval.ks contains {k}; every k must be at least 1");
        }
        if self.toy.questions_per_step == 0 || self.toy.updates_per_batch == 0 {
            bail!("toy.questions_per_step and toy.updates_per_batch must be at least 1");
        }
        if !(self.toy.learning_rate.is_finite() && self.toy.learning_rate >= 0.0) {
            bail!("toy.learning_rate must be finite and >= 0");
        }
        Ok(())
    }
}

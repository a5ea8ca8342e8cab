use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedstore::ProviderConfig;
use crate::error::{Error, Result};
use crate::evaluator::PrototypeMetric;
use crate::patcher::{BalanceConfig, ComposeMode, PatchGrid};
use crate::seed::DEFAULT_SEED;
use crate::smoother::{BetaStrategy, DEFAULT_BASE_BETA};
use crate::streamgen::{LongTailConfig, TaskOverride};
use crate::tensor::DEFAULT_RESOLUTION;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_min_count() -> u32 {
    3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stream: StreamSection,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub images: ImageSection,
    #[serde(default)]
    pub patcher: PatcherSection,
    #[serde(default)]
    pub smoother: SmootherSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// JSON-lines manifest; a synthetic manifest is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub num_classes: usize,
    pub n_max: u32,
    pub rho: f64,
    #[serde(default = "default_min_count")]
    pub min_count: u32,
    pub num_tasks: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dli: Vec<TaskOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    #[default]
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub source: ImageKind,
    /// Root for manifest paths; defaults to the manifest's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub resolution: usize,
}

impl Default for ImageSection {
    fn default() -> Self {
        Self {
            source: ImageKind::Synthetic,
            root: None,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatcherSection {
    /// Grid side g; images split into g² patches.
    pub grid: usize,
    pub q: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<usize>,
    pub threshold: f64,
    pub max_iterations: usize,
    pub reuse_head: bool,
    pub compose: ComposeMode,
    /// Write synthesized images as PNG files during `augment`.
    pub persist_images: bool,
}

impl Default for PatcherSection {
    fn default() -> Self {
        let b = BalanceConfig::default();
        Self {
            grid: 4,
            q: b.q,
            select: b.select,
            threshold: b.threshold,
            max_iterations: b.max_iterations,
            reuse_head: b.reuse_head,
            compose: b.compose,
            persist_images: true,
        }
    }
}

impl PatcherSection {
    pub fn balance(&self) -> BalanceConfig {
        BalanceConfig {
            q: self.q,
            select: self.select,
            threshold: self.threshold,
            max_iterations: self.max_iterations,
            reuse_head: self.reuse_head,
            compose: self.compose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub strategy: BetaStrategy,
    pub base_beta: f64,
}

impl Default for SmootherSection {
    fn default() -> Self {
        Self {
            enabled: true,
            strategy: BetaStrategy::default(),
            base_beta: DEFAULT_BASE_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metric: PrototypeMetric,
    pub test_per_class: usize,
    /// Recorded for the embedding exporter; no effect on the prototype learner.
    pub train_batch_size: usize,
    pub eval_batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metric: PrototypeMetric::Cosine,
            test_per_class: 20,
            train_batch_size: 48,
            eval_batch_size: 128,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Read, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(m) = &mut self.stream.manifest {
            fix(m);
        }
        if let Some(r) = &mut self.images.root {
            fix(r);
        }
        if let ProviderConfig::File { store, labels } = &mut self.provider {
            fix(store);
            if let Some(l) = labels {
                fix(l);
            }
        }
    }

    pub fn long_tail(&self) -> LongTailConfig {
        LongTailConfig {
            num_classes: self.stream.num_classes,
            n_max: self.stream.n_max,
            rho: self.stream.rho,
            min_count: self.stream.min_count,
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.images.resolution, self.patcher.grid).map_err(|_| {
            Error::config(
                "patcher.grid",
                format!(
                    "{} does not divide images.resolution {}",
                    self.patcher.grid, self.images.resolution
                ),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.long_tail().validate()?;
        if self.stream.num_tasks == 0 || self.stream.num_tasks > self.stream.num_classes {
            return Err(Error::config(
                "stream.num_tasks",
                format!("must lie in 1..={}", self.stream.num_classes),
            ));
        }
        for o in &self.stream.dli {
            if o.task == 0 || o.task > self.stream.num_tasks {
                return Err(Error::config(
                    "stream.dli.task",
                    format!("task {} outside 1..={}", o.task, self.stream.num_tasks),
                ));
            }
            if !(o.rho_star > 0.0 && o.rho_star <= 1.0) {
                return Err(Error::config("stream.dli.rho_star", "must lie in (0, 1]"));
            }
        }
        if let Some(m) = &self.stream.manifest {
            if !m.exists() {
                return Err(Error::config(
                    "stream.manifest",
                    format!("{} does not exist", m.display()),
                ));
            }
        }
        if self.images.source == ImageKind::Files && self.stream.manifest.is_none() && self.images.root.is_none() {
            return Err(Error::config("images.root", "file images need a manifest or a root"));
        }
        self.provider.validate()?;
        let grid = self.grid()?;
        self.patcher.balance().validate(&grid)?;
        if !(0.0..=1.0).contains(&self.smoother.base_beta) {
            return Err(Error::config("smoother.base_beta", "must lie in [0, 1]"));
        }
        if self.eval.test_per_class == 0 {
            return Err(Error::config("eval.test_per_class", "must be positive"));
        }
        Ok(())
    }
}

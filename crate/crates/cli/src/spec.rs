//! Experiment spec files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use batchscreen::acquisition::FantasyStrategy;
use batchscreen::engine::{CampaignConfig, MetricSpec, Method, PbpConfig, RfgpConfig, SurrogateKind};
use batchscreen::experiments::LibrarySource;
use batchscreen::harness::BackendKind;
use batchscreen::objectives::ObjectiveName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub name: ObjectiveName,
    /// Grid points per axis for 2-D objectives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Quasi-random points for Hartmann-6.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FantasySpec {
    pub strategy: FantasyStrategy,
    pub count: usize,
}

impl Default for FantasySpec {
    fn default() -> Self {
        Self { strategy: FantasyStrategy::PosteriorSample, count: 10 }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub surrogate: SurrogateKind,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<LibrarySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub rfgp: RfgpConfig,
    #[serde(default)]
    pub pbp: PbpConfig,
    #[serde(default)]
    pub fantasy: FantasySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSpec>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Makes relative paths relative to `base` (the spec file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(LibrarySource::File { path, .. }) = &mut self.library {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(out) = &mut self.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
    }

    pub fn metric_spec(&self) -> MetricSpec {
        self.metrics.unwrap_or(match self.objective {
            Some(_) => MetricSpec { immediate_regret: true, ..MetricSpec::default() },
            None => MetricSpec { recall_fraction: Some(0.01), ..MetricSpec::default() },
        })
    }

    pub fn campaign_config(&self, method: Method, seed: u64) -> CampaignConfig {
        let mut c = CampaignConfig::new(method, self.surrogate, self.batch_size, self.iterations, seed);
        c.rfgp = self.rfgp;
        c.pbp = self.pbp.clone();
        c.fantasies = self.fantasy.count;
        c.fantasy_strategy = self.fantasy.strategy;
        c.metrics = self.metric_spec();
        c
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions: must be >= 1");
        }
        if self.methods.is_empty() {
            bail!("methods: at least one method is required");
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                bail!("methods: `{m}` is listed twice");
            }
        }
        match (&self.library, &self.objective) {
            (Some(_), Some(_)) => bail!("library/objective: give exactly one, not both"),
            (None, None) => bail!("library/objective: one of them is required"),
            (Some(LibrarySource::File { path, .. }), None) if !path.is_file() => {
                bail!("library.path: file `{}` does not exist", path.display())
            }
            (Some(LibrarySource::Synthetic { n, d, .. }), None) if *n < 100 || *d == 0 => {
                bail!("library: synthetic libraries need n >= 100 and d >= 1")
            }
            _ => {}
        }
        if let Some(o) = &self.objective {
            if o.resolution.is_some_and(|r| r < 2) {
                bail!("objective.resolution: must be >= 2");
            }
            if o.points.is_some_and(|p| p == 0) {
                bail!("objective.points: must be >= 1");
            }
        }
        if let BackendKind::Threaded { threads: 0 } = self.backend {
            bail!("backend.threads: must be >= 1");
        }
        if let BackendKind::Socket { addresses, .. } = &self.backend {
            if addresses.is_empty() {
                bail!("backend.addresses: at least one worker address is required");
            }
        }
        for &m in &self.methods {
            self.campaign_config(m, self.seed).validate().with_context(|| format!("methods: `{m}`"))?;
        }
        Ok(())
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::FantasyStrategy;
use crate::error::{Error, Result};
use crate::gp::{KernelSearch, SqExpKernel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Ts,
    Pdts,
    Ei,
    ParallelEi,
    Greedy,
    EpsGreedy(f64),
    Random,
}

impl Method {
    /// Sequential methods refit after every single evaluation.
    pub fn is_sequential(self) -> bool {
        matches!(self, Method::Ts | Method::Ei)
    }

    pub fn uses_model(self) -> bool {
        !matches!(self, Method::Random)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ts => f.write_str("ts"),
            Method::Pdts => f.write_str("pdts"),
            Method::Ei => f.write_str("ei"),
            Method::ParallelEi => f.write_str("parallel-ei"),
            Method::Greedy => f.write_str("greedy"),
            Method::EpsGreedy(e) => write!(f, "eps-greedy-{e}"),
            Method::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ts" => Method::Ts,
            "pdts" => Method::Pdts,
            "ei" => Method::Ei,
            "parallel-ei" | "pei" => Method::ParallelEi,
            "greedy" => Method::Greedy,
            "random" => Method::Random,
            other => {
                let eps = other
                    .strip_prefix("eps-greedy-")
                    .or_else(|| other.strip_prefix("eps-greedy(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{other}`")))?;
                let e: f64 = eps
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad epsilon in method `{other}`")))?;
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::InvalidConfig(format!("epsilon in `{other}` must lie in [0, 1]")));
                }
                Method::EpsGreedy(e)
            }
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[default]
    Rfgp,
    Pbp,
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rfgp" => Ok(SurrogateKind::Rfgp),
            "pbp" => Ok(SurrogateKind::Pbp),
            other => Err(Error::InvalidConfig(format!("unknown surrogate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfgpConfig {
    /// Random features used for Thompson draws.
    pub features: usize,
    /// Fixed kernel; when absent hyperparameters are fit to the data.
    pub kernel: Option<SqExpKernel>,
    /// Refit hyperparameters after this many new observations.
    pub hyper_every: usize,
    pub search: KernelSearch,
}

impl Default for RfgpConfig {
    fn default() -> Self {
        Self { features: 1000, kernel: None, hyper_every: 10, search: KernelSearch::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
}

impl Default for PbpConfig {
    fn default() -> Self {
        Self { hidden: vec![100], epochs: 40 }
    }
}

/// Which metrics to record per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSpec {
    pub immediate_regret: bool,
    pub recall_fraction: Option<f64>,
    pub recall_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub method: Method,
    pub surrogate: SurrogateKind,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub rfgp: RfgpConfig,
    pub pbp: PbpConfig,
    pub fantasies: usize,
    pub fantasy_strategy: FantasyStrategy,
    pub metrics: MetricSpec,
}

impl CampaignConfig {
    pub fn new(method: Method, surrogate: SurrogateKind, batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            method,
            surrogate,
            batch_size,
            iterations,
            seed,
            rfgp: RfgpConfig::default(),
            pbp: PbpConfig::default(),
            fantasies: 10,
            fantasy_strategy: FantasyStrategy::PosteriorSample,
            metrics: MetricSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.method == Method::ParallelEi && self.surrogate != SurrogateKind::Rfgp {
            return Err(Error::InvalidConfig("parallel-ei needs the rfgp surrogate".into()));
        }
        if self.fantasies == 0 {
            return Err(Error::InvalidConfig("fantasies must be >= 1".into()));
        }
        if self.rfgp.features == 0 {
            return Err(Error::InvalidConfig("rfgp.features must be >= 1".into()));
        }
        if self.rfgp.hyper_every == 0 {
            return Err(Error::InvalidConfig("rfgp.hyper_every must be >= 1".into()));
        }
        if let Some(k) = &self.rfgp.kernel {
            k.validate()?;
        }
        self.rfgp.search.validate()?;
        if self.pbp.hidden.contains(&0) {
            return Err(Error::InvalidConfig("pbp.hidden layers must have >= 1 unit".into()));
        }
        if let Some(f) = self.metrics.recall_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig("recall_fraction must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

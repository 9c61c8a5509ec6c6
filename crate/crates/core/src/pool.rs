//! Discrete candidate library with evaluated/pending bookkeeping.
//!
//! The immutable part (ids, features, hidden targets) lives in a shared
//! [`Library`]; a [`CandidatePool`] adds the mutable index sets owned by the
//! coordinator. Workers only ever see a [`PoolView`], which shares the
//! feature matrix by reference count.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSense {
    #[default]
    Maximize,
    Minimize,
}

impl ObjectiveSense {
    /// Multiplier taking raw values into the engine's maximisation convention.
    pub fn sign(self) -> f64 {
        match self {
            ObjectiveSense::Maximize => 1.0,
            ObjectiveSense::Minimize => -1.0,
        }
    }

    /// True when `a` is strictly better than `b` in this sense.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            ObjectiveSense::Maximize => a > b,
            ObjectiveSense::Minimize => a < b,
        }
    }
}

impl std::str::FromStr for ObjectiveSense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" | "max" => Ok(ObjectiveSense::Maximize),
            "minimize" | "min" => Ok(ObjectiveSense::Minimize),
            other => Err(Error::InvalidConfig(format!("unknown objective sense `{other}`"))),
        }
    }
}

/// Row-major N x D matrix of engine features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidConfig(format!(
                "feature buffer has {} values, expected {rows} x {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column-wise z-scoring; constant columns are centred only.
    fn zscored(&self) -> FeatureMatrix {
        let n = self.rows as f64;
        let mut out = self.data.clone();
        for j in 0..self.dim {
            let mean = (0..self.rows).map(|i| self.data[i * self.dim + j]).sum::<f64>() / n;
            let var = (0..self.rows)
                .map(|i| (self.data[i * self.dim + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            for i in 0..self.rows {
                let v = &mut out[i * self.dim + j];
                *v = (*v - mean) * scale;
            }
        }
        FeatureMatrix { rows: self.rows, dim: self.dim, data: out }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Real-valued descriptors; z-scored per column for the engine.
    Dense,
    /// 0/1 fingerprint bits; used as-is.
    Fingerprint,
}

/// Immutable candidate library: ids, features and the hidden target table.
#[derive(Debug, Clone)]
pub struct Library {
    ids: Vec<String>,
    raw_features: FeatureMatrix,
    features: FeatureMatrix,
    targets: Vec<f64>,
    sense: ObjectiveSense,
    kind: FeatureKind,
    metadata: Vec<String>,
}

impl Library {
    /// Builds a library. Dense features are z-scored unless `scale_dense`
    /// is false (synthetic grids already live on the unit cube).
    pub fn new(
        ids: Vec<String>,
        raw_features: FeatureMatrix,
        targets: Vec<f64>,
        sense: ObjectiveSense,
        kind: FeatureKind,
        scale_dense: bool,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        if ids.len() != raw_features.rows() || ids.len() != targets.len() {
            return Err(Error::InvalidConfig(format!(
                "library sizes disagree: {} ids, {} feature rows, {} targets",
                ids.len(),
                raw_features.rows(),
                targets.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("target table"));
        }
        let features = match kind {
            FeatureKind::Dense if scale_dense => raw_features.zscored(),
            _ => raw_features.clone(),
        };
        Ok(Self { ids, raw_features, features, targets, sense, kind, metadata: Vec::new() })
    }

    pub fn with_metadata(mut self, metadata: Vec<String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// Engine-space features (scaled).
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// Features exactly as ingested.
    pub fn raw_features(&self) -> &FeatureMatrix {
        &self.raw_features
    }

    /// Hidden raw target table (simulation oracle).
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn sense(&self) -> ObjectiveSense {
        self.sense
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn metadata(&self) -> &[String] {
        &self.metadata
    }

    /// Best raw target in the library's native sense.
    pub fn optimum(&self) -> f64 {
        let it = self.targets.iter().copied();
        match self.sense {
            ObjectiveSense::Maximize => it.fold(f64::NEG_INFINITY, f64::max),
            ObjectiveSense::Minimize => it.fold(f64::INFINITY, f64::min),
        }
    }
}

/// Read-only snapshot handed to workers.
#[derive(Debug, Clone)]
pub struct PoolView {
    library: Arc<Library>,
    evaluated: Arc<Vec<bool>>,
}

impl PoolView {
    pub fn new(library: Arc<Library>, evaluated: Vec<bool>) -> Result<Self> {
        if evaluated.len() != library.len() {
            return Err(Error::InvalidConfig("evaluated mask length mismatch".into()));
        }
        Ok(Self { library, evaluated: Arc::new(evaluated) })
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn features(&self) -> &FeatureMatrix {
        self.library.features()
    }

    pub fn len(&self) -> usize {
        self.library.len()
    }

    pub fn is_empty(&self) -> bool {
        self.library.is_empty()
    }

    #[inline]
    pub fn is_evaluated(&self, i: usize) -> bool {
        self.evaluated[i]
    }

    pub fn evaluated_mask(&self) -> &[bool] {
        &self.evaluated
    }

    pub fn remaining(&self) -> usize {
        self.evaluated.iter().filter(|e| !**e).count()
    }

    pub fn unevaluated(&self) -> impl Iterator<Item = usize> + '_ {
        self.evaluated.iter().enumerate().filter(|(_, e)| !**e).map(|(i, _)| i)
    }
}

/// Value returned by [`CandidatePool::reveal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revealed {
    pub index: usize,
    /// Raw target in the library's native sense.
    pub raw: f64,
    /// Sign-adjusted value under the engine's maximisation convention.
    pub engine: f64,
}

#[derive(Debug, Clone)]
pub struct CandidatePool {
    library: Arc<Library>,
    evaluated: Vec<bool>,
    order: Vec<usize>,
    pending: BTreeSet<usize>,
}

impl CandidatePool {
    pub fn new(library: Arc<Library>) -> Self {
        let n = library.len();
        Self { library, evaluated: vec![false; n], order: Vec::new(), pending: BTreeSet::new() }
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn len(&self) -> usize {
        self.library.len()
    }

    pub fn is_empty(&self) -> bool {
        self.library.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.library.dim()
    }

    pub fn sense(&self) -> ObjectiveSense {
        self.library.sense()
    }

    /// Evaluated indices in reveal order.
    pub fn evaluated(&self) -> &[usize] {
        &self.order
    }

    pub fn is_evaluated(&self, i: usize) -> bool {
        self.evaluated[i]
    }

    pub fn pending(&self) -> &BTreeSet<usize> {
        &self.pending
    }

    pub fn remaining(&self) -> usize {
        self.len() - self.order.len()
    }

    pub fn view(&self) -> PoolView {
        PoolView { library: Arc::clone(&self.library), evaluated: Arc::new(self.evaluated.clone()) }
    }

    /// Marks `index` as pending evaluation.
    pub fn mark_pending(&mut self, index: usize) -> Result<()> {
        self.check_index(index)?;
        if self.evaluated[index] {
            return Err(Error::ProtocolViolation(format!(
                "candidate {index} is already evaluated"
            )));
        }
        if !self.pending.insert(index) {
            return Err(Error::ProtocolViolation(format!("candidate {index} is already pending")));
        }
        Ok(())
    }

    /// Evaluates `index` against the hidden target table.
    pub fn reveal(&mut self, index: usize) -> Result<Revealed> {
        self.check_index(index)?;
        let raw = self.library.targets()[index];
        self.reveal_external(index, raw)
    }

    /// Records an evaluation produced elsewhere (e.g. by a remote worker).
    pub fn reveal_external(&mut self, index: usize, raw: f64) -> Result<Revealed> {
        self.check_index(index)?;
        if self.evaluated[index] {
            return Err(Error::ProtocolViolation(format!(
                "candidate {index} ({}) revealed twice",
                self.library.id(index)
            )));
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite("revealed target"));
        }
        self.pending.remove(&index);
        self.evaluated[index] = true;
        self.order.push(index);
        Ok(Revealed { index, raw, engine: self.sense().sign() * raw })
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::ProtocolViolation(format!(
                "candidate index {index} outside pool of {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Standardised targets together with the statistics used.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub scale: f64,
}

/// Sign-flips minimisation targets, then standardises with the population
/// standard deviation.
pub fn normalize_targets(raw: &[f64], sense: ObjectiveSense) -> Result<Normalized> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let signed: Vec<f64> = raw.iter().map(|v| sense.sign() * v).collect();
    let (mean, scale) = standardization(&signed);
    if raw.len() < 2 || scale <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    let values = signed.iter().map(|v| (v - mean) / scale).collect();
    Ok(Normalized { values, mean, scale })
}

/// Inverse of [`normalize_targets`].
pub fn denormalize_targets(values: &[f64], mean: f64, scale: f64, sense: ObjectiveSense) -> Vec<f64> {
    values.iter().map(|v| sense.sign() * (v * scale + mean)).collect()
}

fn standardization(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluated (index, value) pairs with running standardisation.
///
/// Values are kept in the engine's sign convention; [`ObservationSet::targets`]
/// returns them standardised. With fewer than two distinct values the scale
/// falls back to one.
#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    indices: Vec<usize>,
    signed: Vec<f64>,
    members: HashSet<usize>,
    y_mean: f64,
    y_scale: f64,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self { y_scale: 1.0, ..Default::default() }
    }

    pub fn push(&mut self, index: usize, engine_value: f64) -> Result<()> {
        if !engine_value.is_finite() {
            return Err(Error::NonFinite("observation"));
        }
        if !self.members.insert(index) {
            return Err(Error::ProtocolViolation(format!("observation {index} recorded twice")));
        }
        self.indices.push(index);
        self.signed.push(engine_value);
        let (mean, scale) = standardization(&self.signed);
        self.y_mean = mean;
        self.y_scale = if scale > 1e-12 * mean.abs().max(1.0) { scale } else { 1.0 };
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn engine_values(&self) -> &[f64] {
        &self.signed
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    /// Standardised targets aligned with [`ObservationSet::indices`].
    pub fn targets(&self) -> Vec<f64> {
        self.signed.iter().map(|v| (v - self.y_mean) / self.y_scale).collect()
    }

    /// Best standardised target (the incumbent), if any.
    pub fn incumbent(&self) -> Option<f64> {
        self.signed
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .map(|best| (best - self.y_mean) / self.y_scale)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.contains(&index)
    }
}

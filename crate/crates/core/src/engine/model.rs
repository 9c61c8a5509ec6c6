//! Coordinator-side surrogate state, refit as observations arrive.

use std::sync::Arc;

use crate::acquisition::ei;
use crate::error::{Error, Result};
use crate::gp::{fit_kernel, PoolPredictor, SqExpKernel};
use crate::pbp::{pbp_fit, pbp_init, BnnArchitecture, FactoredPosterior};
use crate::pool::{Library, ObservationSet, PoolView};
use crate::rf::{rf_build_basis, IncrementalLinearModel, RandomFeatureBasis, RandomFeatureModel, NOISE_FLOOR};
use crate::seed::{stream_seed, Stream};

use super::config::{CampaignConfig, PbpConfig, RfgpConfig, SurrogateKind};
use super::snapshot::{PosteriorSnapshot, PreparedSnapshot};

pub struct RfgpState {
    library: Arc<Library>,
    master: u64,
    cfg: RfgpConfig,
    kernel: SqExpKernel,
    fitted_at: Option<usize>,
    epoch: u64,
    basis: Option<(Arc<RandomFeatureBasis>, Arc<Vec<f64>>)>,
    linear: Option<IncrementalLinearModel>,
    predictor: Option<PoolPredictor>,
}

impl RfgpState {
    pub fn new(library: Arc<Library>, cfg: RfgpConfig, master: u64) -> Self {
        let kernel = cfg.kernel.unwrap_or_else(|| cfg.search.fallback(library.dim()));
        Self { library, master, cfg, kernel, fitted_at: None, epoch: 0, basis: None, linear: None, predictor: None }
    }

    pub fn kernel(&self) -> &SqExpKernel {
        &self.kernel
    }

    /// Refits kernel hyperparameters when enough new data has arrived.
    pub fn refit(&mut self, obs: &ObservationSet) -> Result<()> {
        if self.cfg.kernel.is_some() {
            return Ok(());
        }
        let n = obs.len();
        let due = n >= 3 && self.fitted_at.is_none_or(|f| n >= f + self.cfg.hyper_every);
        if !due {
            return Ok(());
        }
        let feats = self.library.features();
        let xs: Vec<&[f64]> = obs.indices().iter().map(|&i| feats.row(i)).collect();
        let kernel = fit_kernel(&xs, &obs.targets(), &self.cfg.search)?;
        log::debug!("kernel refit at n={n}: {kernel:?}");
        self.fitted_at = Some(n);
        if kernel != self.kernel {
            self.kernel = kernel;
            self.epoch += 1;
            self.basis = None;
            self.linear = None;
            self.predictor = None;
        }
        Ok(())
    }

    /// Random-feature posterior conditioned on `obs`.
    pub fn snapshot(&mut self, obs: &ObservationSet) -> Result<PreparedSnapshot> {
        if self.basis.is_none() {
            let seed = stream_seed(self.master, Stream::Basis, &[self.epoch]);
            let basis = rf_build_basis(self.kernel, self.cfg.features, self.library.dim(), seed)?;
            let phi = basis.feature_matrix(self.library.features());
            self.basis = Some((Arc::new(basis), Arc::new(phi)));
            self.linear = None;
        }
        let (basis, phi) = self.basis.clone().expect("basis built above");
        let m = basis.m;
        let linear = match &mut self.linear {
            Some(l) => l,
            slot => slot.insert(IncrementalLinearModel::new(m, self.kernel.noise_variance + NOISE_FLOOR)?),
        };
        for &i in &obs.indices()[linear.len()..] {
            linear.push(&phi[i * m..(i + 1) * m])?;
        }
        let posterior = linear.posterior(&obs.targets())?;
        let model = RandomFeatureModel { basis: (*basis).clone(), posterior };
        Ok(PreparedSnapshot::with_features(Arc::new(model), phi))
    }

    /// Exact GP predictor over the pool, conditioned on `obs`.
    pub fn predictor(&mut self, obs: &ObservationSet) -> Result<&mut PoolPredictor> {
        let p = match &mut self.predictor {
            Some(p) => p,
            slot => slot.insert(PoolPredictor::new(Arc::clone(&self.library), self.kernel)?),
        };
        if p.len() > obs.len() || p.train() != &obs.indices()[..p.len()] {
            *p = PoolPredictor::new(Arc::clone(&self.library), self.kernel)?;
        }
        for &i in &obs.indices()[p.len()..] {
            p.push(i)?;
        }
        Ok(p)
    }
}

pub struct PbpState {
    library: Arc<Library>,
    master: u64,
    cfg: PbpConfig,
    arch: BnnArchitecture,
    fitted: Option<(usize, Arc<FactoredPosterior>)>,
    prepared: Option<PreparedSnapshot>,
}

impl PbpState {
    pub fn new(library: Arc<Library>, cfg: PbpConfig, master: u64) -> Self {
        let arch = BnnArchitecture::new(library.dim(), cfg.hidden.clone());
        Self { library, master, cfg, arch, fitted: None, prepared: None }
    }

    /// Fits a fresh posterior on all observations (skipped when nothing changed).
    pub fn refit(&mut self, obs: &ObservationSet) -> Result<()> {
        let n = obs.len();
        if n == 0 || self.fitted.as_ref().is_some_and(|(k, _)| *k == n) {
            return Ok(());
        }
        let mut q = pbp_init(&self.arch, stream_seed(self.master, Stream::ModelInit, &[n as u64]))?;
        let feats = self.library.features();
        let xs: Vec<&[f64]> = obs.indices().iter().map(|&i| feats.row(i)).collect();
        let report = pbp_fit(&mut q, &xs, &obs.targets(), self.cfg.epochs, stream_seed(self.master, Stream::Shuffle, &[n as u64]))?;
        if report.skipped > 0 {
            log::warn!("pbp fit at n={n} skipped {} updates", report.skipped);
        }
        self.fitted = Some((n, Arc::new(q)));
        Ok(())
    }

    pub fn posterior(&self) -> Result<&Arc<FactoredPosterior>> {
        self.fitted.as_ref().map(|(_, q)| q).ok_or_else(|| Error::InvalidConfig("network has not been fit".into()))
    }

    pub fn snapshot(&mut self) -> Result<PreparedSnapshot> {
        let q = Arc::clone(self.posterior()?);
        let prepared = PreparedSnapshot::new(PosteriorSnapshot::Bnn(q), &self.library, self.prepared.as_ref());
        self.prepared = Some(prepared.clone());
        Ok(prepared)
    }
}

pub enum ModelState {
    Rfgp(RfgpState),
    Pbp(PbpState),
}

impl ModelState {
    pub fn new(config: &CampaignConfig, library: Arc<Library>) -> Self {
        match config.surrogate {
            SurrogateKind::Rfgp => ModelState::Rfgp(RfgpState::new(library, config.rfgp, config.seed)),
            SurrogateKind::Pbp => ModelState::Pbp(PbpState::new(library, config.pbp.clone(), config.seed)),
        }
    }

    pub fn refit(&mut self, obs: &ObservationSet) -> Result<()> {
        match self {
            ModelState::Rfgp(s) => s.refit(obs),
            ModelState::Pbp(s) => s.refit(obs),
        }
    }

    pub fn thompson_snapshot(&mut self, obs: &ObservationSet) -> Result<PreparedSnapshot> {
        match self {
            ModelState::Rfgp(s) => s.snapshot(obs),
            ModelState::Pbp(s) => s.snapshot(),
        }
    }

    /// Posterior mean at every unevaluated candidate (others are zero).
    pub fn means(&mut self, obs: &ObservationSet, view: &PoolView) -> Result<Vec<f64>> {
        match self {
            ModelState::Rfgp(s) => {
                let y = obs.targets();
                Ok(s.predictor(obs)?.mean(&y))
            }
            ModelState::Pbp(s) => {
                let q = s.posterior()?;
                let feats = view.features();
                let mut out = vec![0.0; view.len()];
                for i in view.unevaluated() {
                    out[i] = q.forward_moments(feats.row(i))?.0;
                }
                Ok(out)
            }
        }
    }

    /// Expected improvement over the incumbent at every unevaluated candidate.
    pub fn ei_scores(&mut self, obs: &ObservationSet, view: &PoolView) -> Result<Vec<f64>> {
        let best = obs.incumbent().ok_or_else(|| Error::InvalidConfig("EI needs observations".into()))?;
        let mut out = vec![0.0; view.len()];
        match self {
            ModelState::Rfgp(s) => {
                let y = obs.targets();
                let p = s.predictor(obs)?;
                let mean = p.mean(&y);
                let var = p.variance();
                for i in view.unevaluated() {
                    out[i] = ei(mean[i], var[i].sqrt(), best);
                }
            }
            ModelState::Pbp(s) => {
                let q = s.posterior()?;
                let feats = view.features();
                for i in view.unevaluated() {
                    let (m, v) = q.predictive(feats.row(i))?;
                    out[i] = ei(m, v.sqrt(), best);
                }
            }
        }
        Ok(out)
    }
}

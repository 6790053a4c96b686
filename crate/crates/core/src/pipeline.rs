//! End-to-end fit: basis, elicitation, chains, summaries and diagnostics.

use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, linspace, select_working_grid_in, BasisSpec, BasisSystem};
use crate::diagnostics::{gof_from_statistics, psrf_report, GofReport, PsrfReport, PSRF_THRESHOLD};
use crate::error::{invalid, Result};
use crate::model::{
    elicit_hyperparams_with, induce_prior, initialize_state_with, smooth_or_degenerate, FunctionalDataset,
    HyperParams, McmcState, PriorOverrides,
};
use crate::sampler::{run_chains, CoefficientModel, McmcConfig, OutputGrids, PosteriorDraws, PosteriorSummary};
use crate::simulation::REFERENCE_GRID_LEN;

pub const DEFAULT_WORKING_GRID_LEN: usize = 20;
pub const DEFAULT_GOF_LEVEL: f64 = 0.05;

fn default_working_grid_len() -> usize {
    DEFAULT_WORKING_GRID_LEN
}

fn default_true() -> bool {
    true
}

fn default_gof_level() -> f64 {
    DEFAULT_GOF_LEVEL
}

fn default_psrf_threshold() -> f64 {
    PSRF_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Working-grid length L, also the number of basis functions.
    #[serde(default = "default_working_grid_len")]
    pub working_grid_len: usize,
    /// Matérn prior surface when true, smoothed empirical surface otherwise.
    #[serde(default = "default_true")]
    pub stationary: bool,
    #[serde(default)]
    pub prior: PriorOverrides,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// Grid for mean and covariance summaries. Defaults to the common
    /// observation grid, or 40 equally spaced points for random grids.
    #[serde(default)]
    pub reference_grid: Option<Vec<f64>>,
    /// Domain to use instead of the observed range.
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
    /// Hold the noise variance fixed at this value.
    #[serde(default)]
    pub fixed_noise_variance: Option<f64>,
    #[serde(default = "default_gof_level")]
    pub gof_level: f64,
    #[serde(default = "default_psrf_threshold")]
    pub psrf_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            working_grid_len: DEFAULT_WORKING_GRID_LEN,
            stationary: true,
            prior: PriorOverrides::default(),
            mcmc: McmcConfig::default(),
            reference_grid: None,
            domain: None,
            fixed_noise_variance: None,
            gof_level: DEFAULT_GOF_LEVEL,
            psrf_threshold: PSRF_THRESHOLD,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if !(self.gof_level > 0.0 && self.gof_level < 1.0) {
            return Err(invalid("gof_level must lie in (0, 1)"));
        }
        if !(self.psrf_threshold > 1.0) {
            return Err(invalid("psrf_threshold must exceed 1"));
        }
        if let Some(v) = self.fixed_noise_variance {
            if !(v > 0.0) {
                return Err(invalid("fixed_noise_variance must be positive"));
            }
        }
        Ok(())
    }
}

/// Everything produced by a fit.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub data: FunctionalDataset,
    pub basis: BasisSystem,
    pub hyperparams: HyperParams,
    pub draws: PosteriorDraws,
    pub summary: PosteriorSummary,
    /// Absent for single-chain runs.
    pub psrf: Option<PsrfReport>,
    pub gof: GofReport,
}

/// Serializable part of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub basis: BasisSpec,
    pub hyperparams: HyperParams,
    pub summary: PosteriorSummary,
    pub psrf: Option<PsrfReport>,
    pub gof: GofReport,
}

impl FitOutput {
    pub fn report(&self) -> FitReport {
        FitReport {
            basis: self.basis.spec(),
            hyperparams: self.hyperparams.clone(),
            summary: self.summary.clone(),
            psrf: self.psrf.clone(),
            gof: self.gof.clone(),
        }
    }

    pub fn converged(&self) -> bool {
        self.psrf.as_ref().map_or(true, |r| r.pass)
    }
}

pub fn default_reference_grid(data: &FunctionalDataset) -> Vec<f64> {
    if data.is_common_grid() {
        data.curves()[0].t.clone()
    } else {
        let (lo, hi) = data.domain();
        linspace(lo, hi, REFERENCE_GRID_LEN)
    }
}

/// Model, starting state and output grids ready for the chains.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: FunctionalDataset,
    pub basis: BasisSystem,
    pub hyperparams: HyperParams,
    pub model: CoefficientModel,
    pub init: McmcState,
    pub outputs: OutputGrids,
}

/// Everything before sampling. The reference grid widens the domain when it
/// extends past the data.
pub fn prepare(data: &FunctionalDataset, cfg: &FitConfig) -> Result<Prepared> {
    cfg.validate()?;
    let reference = cfg.reference_grid.clone().unwrap_or_else(|| default_reference_grid(data));
    let (mut lo, mut hi) = cfg.domain.unwrap_or(data.domain());
    for &g in &reference {
        lo = lo.min(g);
        hi = hi.max(g);
    }
    let data = data.clone().with_domain((lo, hi))?;
    let grid = select_working_grid_in(data.pooled_grid(), cfg.working_grid_len, data.domain())?;
    let basis = build_basis(grid, cfg.working_grid_len)?;
    let smoothed = smooth_or_degenerate(&data)?;
    let hyperparams = elicit_hyperparams_with(&data, &basis, &smoothed, cfg.stationary, &cfg.prior)?;
    let prior = induce_prior(&hyperparams, &basis)?;
    let mut init = initialize_state_with(&basis, &hyperparams, &prior, &smoothed)?;
    let mut model = CoefficientModel::new(&data, &basis, &hyperparams, prior)?;
    if let Some(v) = cfg.fixed_noise_variance {
        model.fixed_sigma_eps2 = Some(v);
        init.sigma_eps2 = v;
    }
    let outputs = OutputGrids::new(&basis, reference)?;
    Ok(Prepared { data, basis, hyperparams, model, init, outputs })
}

pub fn fit(data: &FunctionalDataset, cfg: &FitConfig) -> Result<FitOutput> {
    let Prepared { data, basis, hyperparams, model, init, outputs } = prepare(data, cfg)?;
    let draws = run_chains(&model, &init, &outputs, &cfg.mcmc)?;
    let mut summary = draws.summarize();
    for (s, c) in summary.signals.iter_mut().zip(data.curves()) {
        s.t = c.t.clone();
    }
    let psrf = if draws.num_chains() >= 2 && draws.traces[0].len() >= 10 {
        Some(psrf_report(&draws.traces, cfg.psrf_threshold)?)
    } else {
        None
    };
    let gof = gof_from_statistics(&draws.pdm, &draws.curve_ids, cfg.gof_level)?;
    Ok(FitOutput { data, basis, hyperparams, draws, summary, psrf, gof })
}

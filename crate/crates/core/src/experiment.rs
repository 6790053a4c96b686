//! One simulation replication: simulate, fit both methods, score.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::css_smooth_dataset;
use crate::diagnostics::{coverage, rmse_suite, Estimates, Scores};
use crate::error::Result;
use crate::model::FunctionalDataset;
use crate::pipeline::{fit, FitConfig, FitOutput};
use crate::sampler::{packed_index, PosteriorSummary};
use crate::simulation::{simulate_dataset, SimDesign, SimulatedData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub signal: f64,
    pub mean: f64,
    pub covariance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub seed: u64,
    pub babf: Scores,
    pub css: Scores,
    pub babf_coverage: Coverage,
    pub gof_median_p: f64,
    pub psrf_max: Option<f64>,
    pub converged: bool,
}

pub fn truth_estimates(sim: &SimulatedData) -> Estimates {
    Estimates {
        signals: sim.truth.curves().iter().map(|c| c.y.clone()).collect(),
        mean: sim.true_mean.clone(),
        covariance: sim.true_covariance.clone(),
        sigma_eps2: Some(sim.noise_variance()),
    }
}

/// Per-curve GCV smoothing; mean and covariance are the sample moments of
/// the smoothed curves on `reference`.
pub fn css_estimates(data: &FunctionalDataset, reference: &[f64]) -> Result<Estimates> {
    let smoothed = css_smooth_dataset(data)?;
    let n = data.num_curves();
    let g = reference.len();
    let mut rows = DMatrix::zeros(n, g);
    for (i, f) in smoothed.fits.iter().enumerate() {
        for (j, v) in f.evaluate(reference).into_iter().enumerate() {
            rows[(i, j)] = v;
        }
    }
    let mean = rows.row_mean();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    let covariance = centered.transpose() * &centered / (n.saturating_sub(1).max(1)) as f64;
    Ok(Estimates {
        signals: smoothed.fits.iter().map(|f| f.fitted.clone()).collect(),
        mean: mean.iter().copied().collect(),
        covariance,
        sigma_eps2: Some(smoothed.noise_variance),
    })
}

pub fn babf_estimates(out: &FitOutput) -> Estimates {
    let s = &out.summary;
    let g = s.grid.len();
    Estimates {
        signals: s.signals.iter().map(|c| c.mean.clone()).collect(),
        mean: s.mean.mean.clone(),
        covariance: DMatrix::from_fn(g, g, |i, j| s.covariance.mean[i][j]),
        sigma_eps2: Some(s.sigma_eps2.mean),
    }
}

/// Pointwise 95% interval coverage of signals, mean and covariance surface.
pub fn babf_coverage(summary: &PosteriorSummary, truth: &Estimates) -> Result<Coverage> {
    let s = summary;
    let flat = |f: fn(&crate::sampler::CurveSummary) -> &Vec<f64>| -> Vec<f64> {
        s.signals.iter().flat_map(|c| f(c).iter().copied()).collect()
    };
    let true_signals: Vec<f64> = truth.signals.iter().flatten().copied().collect();
    let signal = coverage(&flat(|c| &c.lower), &flat(|c| &c.upper), &true_signals)?;
    let mean = coverage(&s.mean.lower, &s.mean.upper, &truth.mean)?;
    let g = s.grid.len();
    let (mut lo, mut hi, mut tr) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..g {
        for j in i..g {
            debug_assert!(packed_index(g, i, j) == lo.len());
            lo.push(s.covariance.lower[i][j]);
            hi.push(s.covariance.upper[i][j]);
            tr.push(truth.covariance[(i, j)]);
        }
    }
    let covariance = coverage(&lo, &hi, &tr)?;
    Ok(Coverage { signal, mean, covariance })
}

/// Fit configuration matched to a design: its domain and scoring grid.
pub fn config_for(design: &SimDesign, base: &FitConfig, sim: &SimulatedData) -> FitConfig {
    FitConfig { domain: Some(design.domain), reference_grid: Some(sim.reference_grid.clone()), ..base.clone() }
}

pub fn run_replication(design: &SimDesign, base: &FitConfig) -> Result<ReplicationResult> {
    run_replication_with(design, base, None)
}

/// With `noise_factor`, data are generated with the noise variance scaled by
/// that factor while the fit holds the noise variance at the nominal value.
pub fn run_replication_with(design: &SimDesign, base: &FitConfig, noise_factor: Option<f64>) -> Result<ReplicationResult> {
    let (generating, base) = match noise_factor {
        Some(f) => (
            SimDesign { noise_sd: design.noise_sd * f.sqrt(), ..design.clone() },
            FitConfig { fixed_noise_variance: Some(design.noise_sd * design.noise_sd), ..base.clone() },
        ),
        None => (design.clone(), base.clone()),
    };
    let design = &generating;
    let sim = simulate_dataset(design)?;
    let cfg = config_for(design, &base, &sim);
    let out = fit(&sim.observed, &cfg)?;
    let truth = truth_estimates(&sim);
    let babf = rmse_suite(&babf_estimates(&out), &truth)?;
    let css = rmse_suite(&css_estimates(&sim.observed, &sim.reference_grid)?, &truth)?;
    Ok(ReplicationResult {
        seed: design.seed,
        babf,
        css,
        babf_coverage: babf_coverage(&out.summary, &truth)?,
        gof_median_p: out.gof.median_p(),
        psrf_max: out.psrf.as_ref().map(|r| r.max()),
        converged: out.converged(),
    })
}

//! Coefficient-space Gibbs sampler and chain driver.

mod conditionals;
mod summary;

pub use conditionals::{
    mu_posterior, sample_inverse_wishart, sample_mu_zeta, sample_sigma_eps, sample_sigma_s, sample_sigma_zeta,
    sample_zeta_i, sigma_eps_posterior, sigma_s_posterior, sigma_zeta_posterior, trace_against_inverse,
    zeta_posterior,
};
pub use summary::{
    packed_index, packed_len, unpack_symmetric, MeanAccumulator, PointAccumulator, PointSummary, RESERVOIR_CAPACITY,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::covariance::safe_cholesky;
use crate::error::{invalid, Error, Result};
use crate::model::{FunctionalDataset, HyperParams, InducedPrior, McmcState};
use crate::rng::{chain_rng, chain_seed, curve_key, curve_rng};

/// MCMC run lengths and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub posterior_samples: usize,
    pub thinning: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 2_000, posterior_samples: 10_000, thinning: 1, seed: 20_240_601, chains: 2 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.posterior_samples == 0 || self.chains == 0 || self.thinning == 0 {
            return Err(invalid("posterior_samples, chains and thinning must all be positive"));
        }
        if self.posterior_samples < self.thinning {
            return Err(invalid("thinning exceeds the number of posterior samples"));
        }
        Ok(())
    }

    pub fn retained_draws(&self) -> usize {
        self.posterior_samples / self.thinning
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.posterior_samples
    }
}

/// One curve's design in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDesign {
    pub id: String,
    pub key: u64,
    pub b: DMatrix<f64>,
    pub btb: DMatrix<f64>,
    pub y: DVector<f64>,
    pub bty: DVector<f64>,
}

impl CurveDesign {
    pub fn new(id: impl Into<String>, b: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if b.nrows() != y.len() {
            return Err(Error::DimensionMismatch { context: "curve design rows", expected: y.len(), actual: b.nrows() });
        }
        let id = id.into();
        let btb = b.transpose() * &b;
        let bty = b.transpose() * &y;
        Ok(Self { key: curve_key(&id), id, b, btb, y, bty })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Replace the observations, keeping the design.
    pub fn set_observations(&mut self, y: DVector<f64>) {
        self.bty = self.b.transpose() * &y;
        self.y = y;
    }
}

/// Everything a sweep needs besides the state: designs and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    pub designs: Vec<CurveDesign>,
    pub prior: InducedPrior,
    pub a_eps: f64,
    pub b_eps: f64,
    pub a_s: f64,
    pub b_s: f64,
    /// Pin the noise variance instead of sampling it.
    pub fixed_sigma_eps2: Option<f64>,
}

impl CoefficientModel {
    pub fn new(data: &FunctionalDataset, basis: &BasisSystem, hp: &HyperParams, prior: InducedPrior) -> Result<Self> {
        let designs = data
            .curves()
            .iter()
            .map(|c| CurveDesign::new(c.id.clone(), basis.evaluate(&c.t)?, DVector::from_column_slice(&c.y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            designs,
            prior,
            a_eps: hp.a_eps,
            b_eps: hp.b_eps,
            a_s: hp.a_s,
            b_s: hp.b_s,
            fixed_sigma_eps2: None,
        })
    }

    pub fn num_coefficients(&self) -> usize {
        self.prior.m0.len()
    }

    pub fn num_curves(&self) -> usize {
        self.designs.len()
    }

    pub fn total_points(&self) -> usize {
        self.designs.iter().map(CurveDesign::len).sum()
    }
}

/// Per-sweep by-products used by the summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Reconstructed signals `B(t_i) ζ_i`, one vector per curve.
    pub signals: Vec<DVector<f64>>,
    /// Per-curve residual sums of squares against those signals.
    pub rss: Vec<f64>,
}

fn at(iteration: usize, role: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Sampler { iteration, role, source: Box::new(e) }
}

/// One Gibbs sweep: curve coefficients, mean, covariance, reconstruction,
/// noise variance, scale. Curve `i` draws from the substream keyed by
/// `(chain_seed, sweep, curve id)`, the rest from `rng`.
pub fn gibbs_sweep(
    model: &CoefficientModel,
    state: &mut McmcState,
    chain_seed: u64,
    sweep: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SweepOutput> {
    let k = model.num_coefficients();
    let prior = &model.prior;

    let chol = safe_cholesky(&state.sigma, "coefficient covariance").map_err(at(sweep, "coefficient covariance"))?;
    let sigma_l = chol.l();
    let sigma_inv = chol.chol.inverse();
    let sigma_inv_mu = &sigma_inv * &state.mu;
    for (i, d) in model.designs.iter().enumerate() {
        let mut crng = curve_rng(chain_seed, sweep as u64, d.key);
        let z = conditionals::draw_zeta(&d.btb, &d.bty, &sigma_inv, &sigma_inv_mu, state.sigma_eps2, &mut crng)
            .map_err(at(sweep, "curve coefficients"))?;
        state.zeta.set_row(i, &z.transpose());
    }

    state.mu = conditionals::draw_mu(&state.zeta, &prior.m0, prior.c, &sigma_l, rng);

    let psi_scaled = &prior.psi * state.sigma_s2;
    state.sigma = sample_sigma_zeta(&state.zeta, &state.mu, &prior.m0, prior.c, prior.delta, &psi_scaled, rng)
        .map_err(at(sweep, "coefficient covariance"))?;

    let mut signals = Vec::with_capacity(model.designs.len());
    let mut rss = Vec::with_capacity(model.designs.len());
    for (i, d) in model.designs.iter().enumerate() {
        let z = &d.b * state.zeta.row(i).transpose();
        rss.push((&d.y - &z).norm_squared());
        signals.push(z);
    }

    state.sigma_eps2 = match model.fixed_sigma_eps2 {
        Some(v) => v,
        None => sample_sigma_eps(rss.iter().sum(), model.total_points(), model.a_eps, model.b_eps, rng)
            .map_err(at(sweep, "noise variance"))?,
    };

    let trace = trace_against_inverse(&prior.psi, &state.sigma).map_err(at(sweep, "scale parameter"))?;
    state.sigma_s2 = conditionals::draw_sigma_s(trace, prior.delta, k, model.a_s, model.b_s, rng)
        .map_err(at(sweep, "scale parameter"))?;
    Ok(SweepOutput { signals, rss })
}

/// Grids on which function-valued summaries are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrids {
    pub reference: Vec<f64>,
    pub b_reference: DMatrix<f64>,
    pub b_tau: DMatrix<f64>,
}

impl OutputGrids {
    pub fn new(basis: &BasisSystem, reference: Vec<f64>) -> Result<Self> {
        let b_reference = basis.evaluate(&reference)?;
        Ok(Self { reference, b_reference, b_tau: basis.b_tau().clone() })
    }
}

/// Reconstructed function-space views of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub signals: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `Z_i(t_i) = B(t_i)ζ_i`, `μ(g) = B(g)μ_ζ`, `Σ(g, g) = B(g)Σ_ζB(g)ᵀ`.
pub fn reconstruct(
    state: &McmcState,
    basis: &BasisSystem,
    curve_grids: &[&[f64]],
    grid: &[f64],
) -> Result<Reconstruction> {
    if curve_grids.len() != state.zeta.nrows() {
        return Err(Error::DimensionMismatch {
            context: "curve grids",
            expected: state.zeta.nrows(),
            actual: curve_grids.len(),
        });
    }
    let signals = curve_grids
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(basis.evaluate(t)? * state.zeta.row(i).transpose()))
        .collect::<Result<Vec<_>>>()?;
    let bg = basis.evaluate(grid)?;
    let mean = &bg * &state.mu;
    let covariance = &bg * &state.sigma * bg.transpose();
    Ok(Reconstruction { signals, mean, covariance })
}

/// Full traces of the scalar functionals monitored for convergence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarTraces {
    pub sigma_eps2: Vec<f64>,
    pub sigma_s2: Vec<f64>,
    pub trace_sigma: Vec<f64>,
    pub zeta_first: Vec<f64>,
    pub zeta_middle: Vec<f64>,
}

impl ScalarTraces {
    pub const NAMES: [&'static str; 5] = ["sigma_eps2", "sigma_s2", "trace_sigma_zeta", "zeta_first", "zeta_middle"];

    pub fn monitored(&self) -> [(&'static str, &[f64]); 5] {
        [
            (Self::NAMES[0], &self.sigma_eps2),
            (Self::NAMES[1], &self.sigma_s2),
            (Self::NAMES[2], &self.trace_sigma),
            (Self::NAMES[3], &self.zeta_first),
            (Self::NAMES[4], &self.zeta_middle),
        ]
    }

    pub fn len(&self) -> usize {
        self.sigma_eps2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_eps2.is_empty()
    }

    fn retained_bytes(&self) -> usize {
        5 * self.sigma_eps2.capacity() * std::mem::size_of::<f64>()
    }
}

/// Indices of the monitored coefficients: `(1,1)` and `(⌈n/2⌉, ⌈K/2⌉)`, one-based.
pub fn monitored_entries(n: usize, k: usize) -> [(usize, usize); 2] {
    [(0, 0), (n.div_ceil(2).max(1) - 1, k.div_ceil(2).max(1) - 1)]
}

/// Discrepancy statistics `Σ_j (Y_ij − Z_ij)² / σ_ε²` of each retained draw.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PdmStatistics {
    pub curve_points: Vec<usize>,
    /// Aggregate statistic per draw.
    pub aggregate: Vec<f64>,
    /// `per_curve[i][g]`: statistic of curve `i` at draw `g`.
    pub per_curve: Vec<Vec<f64>>,
}

impl PdmStatistics {
    pub fn new(curve_points: Vec<usize>, expected: usize) -> Self {
        let n = curve_points.len();
        Self {
            curve_points,
            aggregate: Vec::with_capacity(expected),
            per_curve: (0..n).map(|_| Vec::with_capacity(expected)).collect(),
        }
    }

    pub fn push(&mut self, rss: &[f64], sigma_eps2: f64) {
        let mut total = 0.0;
        for (acc, r) in self.per_curve.iter_mut().zip(rss) {
            let t = r / sigma_eps2;
            acc.push(t);
            total += t;
        }
        self.aggregate.push(total);
    }

    pub fn total_points(&self) -> usize {
        self.curve_points.iter().sum()
    }

    fn merge(&mut self, other: &PdmStatistics) {
        self.aggregate.extend_from_slice(&other.aggregate);
        for (a, b) in self.per_curve.iter_mut().zip(&other.per_curve) {
            a.extend_from_slice(b);
        }
    }

    fn retained_bytes(&self) -> usize {
        (self.aggregate.capacity() + self.per_curve.iter().map(Vec::capacity).sum::<usize>()) * std::mem::size_of::<f64>()
    }
}

/// Retained output of one or more chains.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub curve_ids: Vec<String>,
    /// Offsets of each curve's points inside the signal accumulator.
    pub curve_offsets: Vec<usize>,
    pub reference_grid: Vec<f64>,
    pub signals: PointAccumulator,
    pub mean: PointAccumulator,
    /// Packed upper triangle of `Σ_Z` on the reference grid.
    pub covariance: PointAccumulator,
    /// `Σ_Z(τ, τ)`, mean only.
    pub working_covariance: MeanAccumulator,
    pub working_dim: usize,
    /// Per-chain scalar traces.
    pub traces: Vec<ScalarTraces>,
    pub pdm: PdmStatistics,
    /// Final state of each chain.
    pub final_states: Vec<McmcState>,
}

impl PosteriorDraws {
    fn new(model: &CoefficientModel, outputs: &OutputGrids, expected: usize) -> Self {
        let mut offsets = Vec::with_capacity(model.num_curves() + 1);
        let mut acc = 0;
        offsets.push(0);
        for d in &model.designs {
            acc += d.len();
            offsets.push(acc);
        }
        let g = outputs.reference.len();
        let l = outputs.b_tau.nrows();
        Self {
            curve_ids: model.designs.iter().map(|d| d.id.clone()).collect(),
            curve_offsets: offsets,
            reference_grid: outputs.reference.clone(),
            signals: PointAccumulator::new(acc, expected, RESERVOIR_CAPACITY),
            mean: PointAccumulator::new(g, expected, RESERVOIR_CAPACITY),
            covariance: PointAccumulator::new(packed_len(g), expected, RESERVOIR_CAPACITY),
            working_covariance: MeanAccumulator::new(l * l),
            working_dim: l,
            traces: vec![ScalarTraces::default()],
            pdm: PdmStatistics::new(model.designs.iter().map(CurveDesign::len).collect(), expected),
            final_states: Vec::new(),
        }
    }

    pub fn num_draws(&self) -> usize {
        self.mean.count()
    }

    pub fn num_chains(&self) -> usize {
        self.traces.len()
    }

    /// Pool chains; traces stay separate for convergence diagnosis.
    pub fn merge(parts: Vec<PosteriorDraws>) -> Result<PosteriorDraws> {
        let mut iter = parts.into_iter();
        let mut out = iter.next().ok_or_else(|| invalid("no chains to merge"))?;
        for p in iter {
            if p.curve_ids != out.curve_ids || p.reference_grid != out.reference_grid {
                return Err(invalid("chains disagree on curves or output grid"));
            }
            out.signals.merge(&p.signals);
            out.mean.merge(&p.mean);
            out.covariance.merge(&p.covariance);
            out.working_covariance.merge(&p.working_covariance);
            out.pdm.merge(&p.pdm);
            out.traces.extend(p.traces);
            out.final_states.extend(p.final_states);
        }
        Ok(out)
    }

    /// Heap bytes held by retained summaries and traces.
    pub fn retained_bytes(&self) -> usize {
        self.signals.retained_bytes()
            + self.mean.retained_bytes()
            + self.covariance.retained_bytes()
            + self.working_covariance.retained_bytes()
            + self.traces.iter().map(ScalarTraces::retained_bytes).sum::<usize>()
            + self.pdm.retained_bytes()
    }

    pub fn summarize(&self) -> PosteriorSummary {
        let signal = PointSummary::from_accumulator(&self.signals);
        let signals = self
            .curve_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let r = self.curve_offsets[i]..self.curve_offsets[i + 1];
                CurveSummary {
                    id: id.clone(),
                    t: Vec::new(),
                    mean: signal.mean[r.clone()].to_vec(),
                    lower: signal.lower[r.clone()].to_vec(),
                    upper: signal.upper[r].to_vec(),
                }
            })
            .collect();
        let g = self.reference_grid.len();
        let cov = PointSummary::from_accumulator(&self.covariance);
        let all = |f: fn(&ScalarTraces) -> &Vec<f64>| -> Vec<f64> {
            self.traces.iter().flat_map(|t| f(t).iter().copied()).collect()
        };
        PosteriorSummary {
            grid: self.reference_grid.clone(),
            signals,
            mean: PointSummary::from_accumulator(&self.mean),
            covariance: SurfaceSummary {
                mean: unpack_symmetric(g, &cov.mean),
                lower: unpack_symmetric(g, &cov.lower),
                upper: unpack_symmetric(g, &cov.upper),
            },
            working_covariance: {
                let l = self.working_dim;
                let m = self.working_covariance.mean();
                (0..l).map(|i| m[i * l..(i + 1) * l].to_vec()).collect()
            },
            sigma_eps2: ScalarSummary::from(PointSummary::from_draws(&all(|t| &t.sigma_eps2))),
            sigma_s2: ScalarSummary::from(PointSummary::from_draws(&all(|t| &t.sigma_s2))),
            draws: self.num_draws(),
            chains: self.num_chains(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub id: String,
    /// Observation grid; filled in by callers that hold the data.
    #[serde(default)]
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub mean: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<PointSummary> for ScalarSummary {
    fn from(p: PointSummary) -> Self {
        Self { mean: p.mean[0], lower: p.lower[0], upper: p.upper[0] }
    }
}

/// Posterior means and pointwise 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub grid: Vec<f64>,
    pub signals: Vec<CurveSummary>,
    pub mean: PointSummary,
    pub covariance: SurfaceSummary,
    pub working_covariance: Vec<Vec<f64>>,
    pub sigma_eps2: ScalarSummary,
    pub sigma_s2: ScalarSummary,
    pub draws: usize,
    pub chains: usize,
}

/// Run one chain from `init` and collect its retained draws.
pub fn run_chain(
    model: &CoefficientModel,
    init: &McmcState,
    outputs: &OutputGrids,
    cfg: &McmcConfig,
    chain: usize,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    init.validate()?;
    let n = model.num_curves();
    let k = model.num_coefficients();
    if init.zeta.nrows() != n || init.zeta.ncols() != k {
        return Err(Error::DimensionMismatch { context: "initial coefficients", expected: n * k, actual: init.zeta.len() });
    }
    if outputs.b_reference.ncols() != k || outputs.b_tau.ncols() != k {
        return Err(Error::DimensionMismatch { context: "output basis", expected: k, actual: outputs.b_reference.ncols() });
    }
    let seed = chain_seed(cfg.seed, chain as u64);
    let mut rng = chain_rng(seed);
    let mut state = init.clone();
    let expected = cfg.retained_draws();
    let mut draws = PosteriorDraws::new(model, outputs, expected);
    let [m1, m2] = monitored_entries(n, k);
    let g = outputs.reference.len();
    let mut signal_buf = vec![0.0; draws.signals.width()];
    let mut packed = vec![0.0; packed_len(g)];
    {
        let t = &mut draws.traces[0];
        for v in [&mut t.sigma_eps2, &mut t.sigma_s2, &mut t.trace_sigma, &mut t.zeta_first, &mut t.zeta_middle] {
            v.reserve_exact(expected);
        }
    }

    for sweep in 0..cfg.total_sweeps() {
        let out = gibbs_sweep(model, &mut state, seed, sweep, &mut rng)?;
        if sweep < cfg.burn_in || (sweep - cfg.burn_in + 1) % cfg.thinning != 0 {
            continue;
        }
        if draws.num_draws() >= expected {
            break;
        }
        for (i, z) in out.signals.iter().enumerate() {
            signal_buf[draws.curve_offsets[i]..draws.curve_offsets[i + 1]].copy_from_slice(z.as_slice());
        }
        draws.signals.push(&signal_buf);
        draws.mean.push((&outputs.b_reference * &state.mu).as_slice());
        let half = &outputs.b_reference * &state.sigma;
        let cov = &half * outputs.b_reference.transpose();
        for i in 0..g {
            for j in i..g {
                packed[packed_index(g, i, j)] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            }
        }
        draws.covariance.push(&packed);
        let wc = &outputs.b_tau * &state.sigma * outputs.b_tau.transpose();
        draws.working_covariance.push(wc.transpose().as_slice());
        let t = &mut draws.traces[0];
        t.sigma_eps2.push(state.sigma_eps2);
        t.sigma_s2.push(state.sigma_s2);
        t.trace_sigma.push(state.sigma.trace());
        t.zeta_first.push(state.zeta[m1]);
        t.zeta_middle.push(state.zeta[m2]);
        draws.pdm.push(&out.rss, state.sigma_eps2);
    }
    draws.final_states.push(state);
    Ok(draws)
}

/// Run `cfg.chains` chains in parallel and pool them.
pub fn run_chains(
    model: &CoefficientModel,
    init: &McmcState,
    outputs: &OutputGrids,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws> {
    use rayon::prelude::*;
    let parts = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(model, init, outputs, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    PosteriorDraws::merge(parts)
}

/// Draw a complete state and data set from the prior predictive, for
/// simulation-based calibration of the sweep.
pub fn sample_prior_predictive<R: Rng + ?Sized>(model: &mut CoefficientModel, rng: &mut R) -> Result<McmcState> {
    let k = model.num_coefficients();
    let n = model.num_curves();
    let sigma_eps2 = match model.fixed_sigma_eps2 {
        Some(v) => v,
        None => 1.0 / rand_distr::Gamma::new(model.a_eps, 1.0 / model.b_eps).map_err(|e| invalid(e.to_string()))?.sample(rng),
    };
    let sigma_s2 = rand_distr::Gamma::new(model.a_s, 1.0 / model.b_s).map_err(|e| invalid(e.to_string()))?.sample(rng);
    let sigma = sample_inverse_wishart(model.prior.delta, &(&model.prior.psi * sigma_s2), rng)?;
    let l = safe_cholesky(&sigma, "coefficient covariance")?.l();
    let z = conditionals::standard_normal_vec(k, rng);
    let mu = &model.prior.m0 + &l * z / model.prior.c.sqrt();
    let mut zeta = DMatrix::zeros(n, k);
    for i in 0..n {
        let zi = &mu + &l * conditionals::standard_normal_vec(k, rng);
        zeta.set_row(i, &zi.transpose());
    }
    let state = McmcState { zeta, mu, sigma, sigma_eps2, sigma_s2 };
    regenerate_observations(model, &state, rng);
    Ok(state)
}

/// Replace every curve's observations by a draw from `Y | state`.
pub fn regenerate_observations<R: Rng + ?Sized>(model: &mut CoefficientModel, state: &McmcState, rng: &mut R) {
    let sd = state.sigma_eps2.sqrt();
    for (i, d) in model.designs.iter_mut().enumerate() {
        let z = &d.b * state.zeta.row(i).transpose();
        let noise = conditionals::standard_normal_vec(z.len(), rng) * sd;
        d.set_observations(z + noise);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, linspace, select_working_grid};
    use crate::model::{elicit_hyperparams, induce_prior, initialize_state, Curve, PriorOverrides};

    fn toy() -> (FunctionalDataset, BasisSystem, HyperParams) {
        let t = linspace(0.0, 1.0, 15);
        let curves = (0..6)
            .map(|i| {
                let y = t.iter().map(|&x| (3.0 * x).sin() + 0.1 * i as f64 + 0.05 * ((i * 31 + (x * 97.0) as usize) % 7) as f64).collect();
                Curve::new(format!("curve-{i}"), t.clone(), y).unwrap()
            })
            .collect();
        let data = FunctionalDataset::new(curves).unwrap();
        let basis = build_basis(select_working_grid(data.pooled_grid(), 6).unwrap(), 6).unwrap();
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        (data, basis, hp)
    }

    fn run(data: &FunctionalDataset, seed: u64) -> PosteriorDraws {
        let (_, basis, hp) = toy();
        let prior = induce_prior(&hp, &basis).unwrap();
        let model = CoefficientModel::new(data, &basis, &hp, prior).unwrap();
        let init = initialize_state(data, &basis, &hp).unwrap();
        let outputs = OutputGrids::new(&basis, linspace(0.0, 1.0, 5)).unwrap();
        let cfg = McmcConfig { burn_in: 50, posterior_samples: 200, thinning: 2, seed, chains: 2 };
        run_chains(&model, &init, &outputs, &cfg).unwrap()
    }

    #[test]
    fn same_seed_same_draws() {
        let (data, _, _) = toy();
        let a = run(&data, 11);
        let b = run(&data, 11);
        assert_eq!(a, b);
        assert_eq!(a.num_draws(), 200);
        assert_eq!(a.traces.len(), 2);
        assert_eq!(a.traces[0].len(), 100);
        assert_ne!(a.traces[0], run(&data, 12).traces[0]);
    }

    #[test]
    fn curve_order_only_permutes_signals() {
        let (data, _, _) = toy();
        let mut rev = data.curves().to_vec();
        rev.reverse();
        let reversed = FunctionalDataset::new(rev).unwrap();
        let a = run(&data, 5).summarize();
        let b = run(&reversed, 5).summarize();
        for s in &a.signals {
            let t = b.signals.iter().find(|x| x.id == s.id).unwrap();
            for (u, v) in s.mean.iter().zip(&t.mean) {
                assert!((u - v).abs() < 0.15, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn retained_covariances_are_pd() {
        let (data, basis, hp) = toy();
        let prior = induce_prior(&hp, &basis).unwrap();
        let model = CoefficientModel::new(&data, &basis, &hp, prior).unwrap();
        let mut state = initialize_state(&data, &basis, &hp).unwrap();
        let mut rng = chain_rng(3);
        for s in 0..200 {
            gibbs_sweep(&model, &mut state, 3, s, &mut rng).unwrap();
            assert_eq!(state.sigma, state.sigma.transpose());
            assert!(nalgebra::Cholesky::new(state.sigma.clone()).is_some());
        }
    }

    #[test]
    fn reconstruction_views() {
        let (data, basis, hp) = toy();
        let mut state = initialize_state(&data, &basis, &hp).unwrap();
        let tau = basis.grid().points().to_vec();
        let grids: Vec<&[f64]> = data.curves().iter().map(|c| c.t.as_slice()).collect();
        let r = reconstruct(&state, &basis, &grids, &tau).unwrap();
        let expected = basis.b_tau() * &state.sigma * basis.b_tau().transpose();
        assert!((r.covariance - expected).amax() < 1e-12);
        let mu_vals: Vec<f64> = r.mean.iter().copied().collect();
        state.mu = basis.coefficients_from_values(&mu_vals).unwrap();
        let again = reconstruct(&state, &basis, &grids, &tau).unwrap();
        assert!((again.mean - DVector::from_vec(mu_vals)).amax() < 1e-8);
        state.zeta.fill(0.0);
        let zero = reconstruct(&state, &basis, &grids, &tau).unwrap();
        assert!(zero.signals.iter().all(|z| z.amax() == 0.0));
    }

    #[test]
    fn trace_in_coefficient_space_matches_working_grid() {
        let (_, basis, hp) = toy();
        let prior = induce_prior(&hp, &basis).unwrap();
        let sigma = &prior.psi * 0.7 + DMatrix::identity(6, 6) * 0.05;
        let b = basis.b_tau();
        let sigma_tau = b * &sigma * b.transpose();
        let a_tau = b * &prior.psi * b.transpose();
        let lhs = trace_against_inverse(&prior.psi, &sigma).unwrap();
        let rhs = trace_against_inverse(&a_tau, &sigma_tau).unwrap();
        assert!((lhs - rhs).abs() < 1e-6 * lhs.abs());
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig { thinning: 0, ..Default::default() }.validate().is_err());
        assert!(McmcConfig { chains: 0, ..Default::default() }.validate().is_err());
        assert_eq!(McmcConfig::default().retained_draws(), 10_000);
        assert_eq!(monitored_entries(30, 20), [(0, 0), (14, 9)]);
    }
}

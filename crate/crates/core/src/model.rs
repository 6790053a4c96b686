//! Hierarchical model types, the coefficient-space prior induced by a
//! basis, and data-driven hyper-prior elicitation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline::{css_fit, css_smooth_dataset, smooth_scatter, SmoothedDataset};
use crate::basis::BasisSystem;
use crate::covariance::{empirical_covariance_smoothed, matern_matrix, repair_pd, symmetrize, MaternParams};
use crate::error::{invalid, Error, Result};

/// One observed curve: strictly increasing grid with matching values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub id: String,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn new(id: impl Into<String>, t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if t.is_empty() {
            return Err(invalid(format!("curve {id} has no observations")));
        }
        if t.len() != y.len() {
            return Err(Error::DimensionMismatch { context: "curve grid and values", expected: t.len(), actual: y.len() });
        }
        if t.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid(format!("curve {id} contains non-finite values")));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid(format!("curve {id} grid is not strictly increasing")));
        }
        Ok(Self { id, t, y })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    curves: Vec<Curve>,
    pooled: Vec<f64>,
    domain: (f64, f64),
    common_grid: bool,
}

impl FunctionalDataset {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(invalid("dataset must contain at least one curve"));
        }
        let mut ids: Vec<&str> = curves.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("duplicate curve id {}", w[0])));
        }
        let mut pooled: Vec<f64> = curves.iter().flat_map(|c| c.t.iter().copied()).collect();
        pooled.sort_by(f64::total_cmp);
        pooled.dedup();
        let domain = (pooled[0], pooled[pooled.len() - 1]);
        let common_grid = curves.iter().all(|c| c.t == curves[0].t);
        Ok(Self { curves, pooled, domain, common_grid })
    }

    /// Widens the domain to a known interval containing every observation.
    pub fn with_domain(mut self, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo < hi) || lo > self.domain.0 || hi < self.domain.1 {
            return Err(invalid(format!(
                "domain [{lo}, {hi}] does not contain the observed range [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn num_curves(&self) -> usize {
        self.curves.len()
    }

    /// Sorted, deduplicated union of all observation points.
    pub fn pooled_grid(&self) -> &[f64] {
        &self.pooled
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn is_common_grid(&self) -> bool {
        self.common_grid
    }

    pub fn total_points(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }
}

pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
    }
}

/// Fixed prior quantities of the hierarchical model, on the working grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Prior mean function μ₀(τ).
    pub mu0: Vec<f64>,
    /// Prior precision multiplier for the mean.
    pub c: f64,
    /// Inverse-Wishart shape δ (Dawid convention).
    pub delta: f64,
    /// Prior covariance surface A(τ, τ).
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    /// Inverse-gamma prior on σ_ε².
    pub a_eps: f64,
    pub b_eps: f64,
    /// Gamma prior (shape, rate) on σ_s².
    pub a_s: f64,
    pub b_s: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("c", self.c), ("a_eps", self.a_eps), ("b_eps", self.b_eps), ("a_s", self.a_s), ("b_s", self.b_s)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 2.0 && self.delta.is_finite()) {
            return Err(invalid(format!("hyperparameter delta must exceed 2, got {}", self.delta)));
        }
        let l = self.mu0.len();
        if self.a.nrows() != l || self.a.ncols() != l {
            return Err(Error::DimensionMismatch { context: "prior surface A", expected: l, actual: self.a.nrows() });
        }
        Ok(())
    }

    /// Prior mean of σ_ε², `b/(a-1)`.
    pub fn prior_mean_sigma_eps2(&self) -> f64 {
        self.b_eps / (self.a_eps - 1.0)
    }

    /// Prior mean of σ_s², `a/b`.
    pub fn prior_mean_sigma_s2(&self) -> f64 {
        self.a_s / self.b_s
    }
}

/// User overrides applied after elicitation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorOverrides {
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub a_eps: Option<f64>,
    pub b_eps: Option<f64>,
    pub a_s: Option<f64>,
    pub b_s: Option<f64>,
    /// Matérn parameters of the stationary prior surface (variance is ignored).
    pub matern_scale: Option<f64>,
    pub matern_smoothness: Option<f64>,
    /// Bandwidth of the nonstationary empirical surface, in domain units.
    pub bandwidth: Option<f64>,
}

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 5.0;
pub const DEFAULT_A_EPS: f64 = 3.0;
pub const DEFAULT_A_S: f64 = 2.0;
pub const DEFAULT_MATERN_SMOOTHNESS: f64 = 2.5;
pub const DEFAULT_MATERN_SCALE_FRACTION: f64 = 0.2;
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.1;

/// Moment-matched `(a_ε, b_ε)`: prior mean of σ_ε² equals `noise_variance`.
pub fn noise_prior(noise_variance: f64, a_eps: f64) -> (f64, f64) {
    (a_eps, (a_eps - 1.0) * noise_variance)
}

/// Moment-matched `(a_s, b_s)`: the Gamma prior mean of σ_s² equals
/// `(δ-2)·trace(Σ̂)/trace(A)`, which makes the prior mean of Σ_Z(τ,τ)
/// match the empirical covariance in trace.
pub fn scale_prior(delta: f64, trace_empirical: f64, trace_a: f64, a_s: f64) -> (f64, f64) {
    let target = (delta - 2.0) * trace_empirical / trace_a;
    (a_s, a_s / target)
}

/// Smoothed cross-sectional mean evaluated at `points`.
pub(crate) fn smoothed_mean(data: &FunctionalDataset, points: &[f64]) -> Result<Vec<f64>> {
    if data.is_common_grid() {
        let grid = &data.curves()[0].t;
        let n = data.num_curves() as f64;
        let mean: Vec<f64> =
            (0..grid.len()).map(|j| data.curves().iter().map(|c| c.y[j]).sum::<f64>() / n).collect();
        Ok(css_fit(grid, &mean, None)?.evaluate(points))
    } else {
        let t: Vec<f64> = data.curves().iter().flat_map(|c| c.t.iter().copied()).collect();
        let y: Vec<f64> = data.curves().iter().flat_map(|c| c.y.iter().copied()).collect();
        Ok(smooth_scatter(&t, &y)?.evaluate(points))
    }
}

pub(crate) fn smooth_or_degenerate(data: &FunctionalDataset) -> Result<SmoothedDataset> {
    css_smooth_dataset(data).map_err(|e| Error::DegenerateData(format!("per-curve smoothing failed: {e}")))
}

/// Sample covariance (divisor n-1) of the rows of `rows`.
pub(crate) fn row_covariance(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows();
    let mean = rows.row_mean();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    centered.transpose() * centered / (n.saturating_sub(1).max(1)) as f64
}

/// CSS-smoothed curves evaluated on `points`, one row per curve.
pub(crate) fn smoothed_on(smoothed: &SmoothedDataset, points: &[f64]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = smoothed.fits.iter().map(|f| f.evaluate(points)).collect();
    DMatrix::from_fn(rows.len(), points.len(), |i, j| rows[i][j])
}

pub fn elicit_hyperparams(
    data: &FunctionalDataset,
    basis: &BasisSystem,
    stationary: bool,
    overrides: &PriorOverrides,
) -> Result<HyperParams> {
    let smoothed = smooth_or_degenerate(data)?;
    elicit_hyperparams_with(data, basis, &smoothed, stationary, overrides)
}

/// Elicitation from precomputed per-curve smoothing fits.
pub fn elicit_hyperparams_with(
    data: &FunctionalDataset,
    basis: &BasisSystem,
    smoothed: &SmoothedDataset,
    stationary: bool,
    overrides: &PriorOverrides,
) -> Result<HyperParams> {
    let tau = basis.grid().points();
    let (lo, hi) = basis.domain();
    let span = hi - lo;

    let mu0 = smoothed_mean(data, tau)?;
    let c = overrides.c.unwrap_or(DEFAULT_C);
    let delta = overrides.delta.unwrap_or(DEFAULT_DELTA);

    let a = if stationary {
        let params = MaternParams::new(
            overrides.matern_scale.unwrap_or(DEFAULT_MATERN_SCALE_FRACTION * span),
            overrides.matern_smoothness.unwrap_or(DEFAULT_MATERN_SMOOTHNESS),
            1.0,
        )?;
        matern_matrix(tau, &params)?.matrix
    } else {
        let bw = overrides.bandwidth.unwrap_or(DEFAULT_BANDWIDTH_FRACTION * span);
        let surface = empirical_covariance_smoothed(data, basis.grid(), bw)?.matrix;
        let mean_diag = surface.trace() / tau.len() as f64;
        if !(mean_diag > 0.0) {
            return Err(Error::DegenerateData("empirical covariance surface has zero variance".into()));
        }
        surface / mean_diag
    };

    let noise = if smoothed.noise_variance > 0.0 {
        smoothed.noise_variance
    } else {
        // noiseless input: keep the prior proper with a tiny positive scale
        1e-10 * (1.0 + mu0.iter().map(|v| v * v).sum::<f64>() / mu0.len() as f64)
    };
    let (a_eps, b_eps) = noise_prior(noise, DEFAULT_A_EPS);

    let trace_emp = if data.num_curves() >= 2 {
        row_covariance(&smoothed_on(smoothed, tau)).trace()
    } else {
        a.trace()
    };
    let trace_emp = if trace_emp > 0.0 { trace_emp } else { 1e-8 * a.trace() };
    let (a_s, b_s) = scale_prior(delta, trace_emp, a.trace(), DEFAULT_A_S);

    let hp = HyperParams {
        mu0,
        c,
        delta,
        a,
        a_eps: overrides.a_eps.unwrap_or(a_eps),
        b_eps: overrides.b_eps.unwrap_or(b_eps),
        a_s: overrides.a_s.unwrap_or(a_s),
        b_s: overrides.b_s.unwrap_or(b_s),
    };
    hp.validate()?;
    Ok(hp)
}

/// The coefficient-space prior: `m₀ = B⁺μ₀` and the unscaled
/// inverse-Wishart scale `Ψ = B⁺ A B⁺ᵀ` (multiplied by σ_s² when sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedPrior {
    pub m0: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub psi: DMatrix<f64>,
    pub c: f64,
    pub delta: f64,
}

pub fn induce_prior(hp: &HyperParams, basis: &BasisSystem) -> Result<InducedPrior> {
    hp.validate()?;
    let l = basis.grid().len();
    if hp.mu0.len() != l {
        return Err(Error::DimensionMismatch { context: "prior mean on working grid", expected: l, actual: hp.mu0.len() });
    }
    let m0 = basis.coefficients_from_values(&hp.mu0)?;
    let psi = symmetrize(&basis.congruence_to_coefficients(&hp.a)?);
    Ok(InducedPrior { m0, psi: repair_if_needed(psi), c: hp.c, delta: hp.delta })
}

fn repair_if_needed(m: DMatrix<f64>) -> DMatrix<f64> {
    if nalgebra::Cholesky::new(m.clone()).is_some() {
        m
    } else {
        repair_pd(&m, 1e-8)
    }
}

/// One Gibbs iteration's parameter values in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    /// Curve coefficients, one row per curve.
    pub zeta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_eps2: f64,
    pub sigma_s2: f64,
}

impl McmcState {
    pub fn validate(&self) -> Result<()> {
        let k = self.mu.len();
        if self.zeta.ncols() != k || self.sigma.nrows() != k || self.sigma.ncols() != k {
            return Err(invalid("state dimensions are inconsistent"));
        }
        if !(self.sigma_eps2 > 0.0) || !(self.sigma_s2 > 0.0) {
            return Err(invalid("state variances must be positive"));
        }
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-10 * self.sigma.amax().max(1.0) {
            return Err(invalid("state covariance is not symmetric"));
        }
        if nalgebra::Cholesky::new(self.sigma.clone()).is_none() {
            return Err(invalid("state covariance is not positive definite"));
        }
        Ok(())
    }
}

pub fn initialize_state(data: &FunctionalDataset, basis: &BasisSystem, hp: &HyperParams) -> Result<McmcState> {
    let smoothed = smooth_or_degenerate(data)?;
    let prior = induce_prior(hp, basis)?;
    initialize_state_with(basis, hp, &prior, &smoothed)
}

/// Step-0 initialization from precomputed per-curve smoothing fits.
pub fn initialize_state_with(
    basis: &BasisSystem,
    hp: &HyperParams,
    prior: &InducedPrior,
    smoothed: &SmoothedDataset,
) -> Result<McmcState> {
    let k = basis.num_basis();
    let values = smoothed_on(smoothed, basis.grid().points());
    let zeta = values * basis.b_tau_inv().transpose();
    let n = zeta.nrows();
    let mu = zeta.row_mean().transpose();
    let sigma_s2 = hp.prior_mean_sigma_s2();
    let prior_mean_sigma = &prior.psi * (sigma_s2 / (hp.delta - 2.0));
    let sigma = if n >= 2 {
        let jitter = 1e-6 * prior_mean_sigma.trace() / k as f64;
        let s = row_covariance(&zeta) + DMatrix::identity(k, k) * jitter;
        repair_if_needed(symmetrize(&s))
    } else {
        warn!("fewer than two curves; initializing the coefficient covariance at its prior mean");
        prior_mean_sigma
    };
    let sigma_eps2 = if smoothed.noise_variance > 0.0 { smoothed.noise_variance } else { hp.prior_mean_sigma_eps2() };
    let state = McmcState { zeta, mu, sigma, sigma_eps2, sigma_s2 };
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, linspace, select_working_grid, select_working_grid_in};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn dataset(n: usize, f: impl Fn(usize, f64) -> f64) -> FunctionalDataset {
        let t = linspace(0.0, FRAC_PI_2, 40);
        let curves = (0..n)
            .map(|i| Curve::new(format!("c{i}"), t.clone(), t.iter().map(|&x| f(i, x)).collect()).unwrap())
            .collect();
        FunctionalDataset::new(curves).unwrap()
    }

    fn basis_for(data: &FunctionalDataset) -> BasisSystem {
        build_basis(select_working_grid(data.pooled_grid(), 20).unwrap(), 20).unwrap()
    }

    fn wiggly(i: usize, x: f64) -> f64 {
        3.0 * (4.0 * x).sin() + (i as f64 * 0.37).sin() * x + ((i * 7919 % 13) as f64 - 6.0) * 0.05 * (9.0 * x).cos()
    }

    #[test]
    fn dataset_invariants() {
        let a = Curve::new("a", vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Curve::new("b", vec![0.25, 0.5], vec![1.0, 2.0]).unwrap();
        let d = FunctionalDataset::new(vec![a.clone(), b]).unwrap();
        assert_eq!(d.pooled_grid(), &[0.0, 0.25, 0.5, 1.0]);
        assert!(!d.is_common_grid());
        assert_eq!(d.domain(), (0.0, 1.0));
        assert!(FunctionalDataset::new(vec![a.clone(), a.clone()]).is_err());
        let same = FunctionalDataset::new(vec![a.clone(), Curve { id: "z".into(), ..a.clone() }]).unwrap();
        assert!(same.is_common_grid());
        assert!(Curve::new("x", vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Curve::new("x", vec![0.0], vec![1.0, 1.0]).is_err());
        assert!(d.clone().with_domain((0.1, 1.0)).is_err());
        assert_eq!(d.with_domain((-1.0, 2.0)).unwrap().domain(), (-1.0, 2.0));
    }

    #[test]
    fn moment_matching_rules() {
        let (a, b) = noise_prior(1.0, 3.0);
        assert_eq!((a, b), (3.0, 2.0));
        assert_abs_diff_eq!(b / (a - 1.0), 1.0);
        let (a_s, b_s) = scale_prior(5.0, 7.0, 7.0, 2.0);
        assert_eq!(a_s, 2.0);
        assert_abs_diff_eq!(b_s, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a_s / b_s, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn elicitation_defaults_and_determinism() {
        let data = dataset(12, wiggly);
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        assert_eq!(hp.c, 1.0);
        assert_eq!(hp.delta, 5.0);
        assert_eq!(hp.a_eps, 3.0);
        assert_eq!(hp.a_s, 2.0);
        assert_eq!(hp.mu0.len(), 20);
        for i in 0..20 {
            assert_abs_diff_eq!(hp.a[(i, i)], 1.0, epsilon = 1e-15);
        }
        let again = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        assert_eq!(hp, again);

        let smoothed = css_smooth_dataset(&data).unwrap();
        assert_abs_diff_eq!(hp.b_eps, 2.0 * smoothed.noise_variance.max(1e-300), epsilon = 1e-6);
        let tr_emp = row_covariance(&smoothed_on(&smoothed, basis.grid().points())).trace();
        assert_abs_diff_eq!(hp.a_s / hp.b_s, 3.0 * tr_emp / hp.a.trace(), epsilon = 1e-9);
    }

    #[test]
    fn nonstationary_surface_has_unit_mean_diagonal() {
        let data = dataset(10, wiggly);
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, false, &PriorOverrides::default()).unwrap();
        assert_abs_diff_eq!(hp.a.trace() / 20.0, 1.0, epsilon = 1e-12);
        assert!(nalgebra::Cholesky::new(hp.a.clone()).is_some());
    }

    #[test]
    fn overrides_are_validated() {
        let data = dataset(6, wiggly);
        let basis = basis_for(&data);
        let bad = PriorOverrides { delta: Some(1.5), ..Default::default() };
        assert!(elicit_hyperparams(&data, &basis, true, &bad).is_err());
        let good = PriorOverrides { c: Some(2.0), b_s: Some(0.5), ..Default::default() };
        let hp = elicit_hyperparams(&data, &basis, true, &good).unwrap();
        assert_eq!((hp.c, hp.b_s), (2.0, 0.5));
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let curves = (0..5).map(|i| Curve::new(format!("c{i}"), vec![i as f64], vec![1.0]).unwrap()).collect();
        let data = FunctionalDataset::new(curves).unwrap();
        let grid = select_working_grid_in(&linspace(0.0, 4.0, 40), 6, (0.0, 4.0)).unwrap();
        let basis = build_basis(grid, 6).unwrap();
        assert!(matches!(
            elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn induced_prior_transforms() {
        let data = dataset(8, wiggly);
        let basis = basis_for(&data);
        let mut hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        let prior = induce_prior(&hp, &basis).unwrap();
        let back = basis.b_tau() * &prior.psi * basis.b_tau().transpose();
        assert!((back - &hp.a).amax() < 1e-8);
        assert!(nalgebra::Cholesky::new(prior.psi.clone()).is_some());
        let mu_back = basis.b_tau() * &prior.m0;
        for (a, b) in mu_back.iter().zip(&hp.mu0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        hp.mu0 = vec![0.0; 20];
        assert_eq!(induce_prior(&hp, &basis).unwrap().m0.amax(), 0.0);
        hp.mu0 = vec![0.0; 19];
        assert!(induce_prior(&hp, &basis).is_err());
    }

    #[test]
    fn initialization_reproduces_spline_span_data() {
        // affine curves lie in every cubic spline span and are untouched by smoothing
        let data = dataset(5, |i, x| 1.0 + i as f64 * 0.3 - 0.8 * x * (i as f64 - 2.0));
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        let state = initialize_state(&data, &basis, &hp).unwrap();
        for (i, c) in data.curves().iter().enumerate() {
            let z = basis.evaluate(&c.t).unwrap() * state.zeta.row(i).transpose();
            for (a, b) in z.iter().zip(&c.y) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        state.validate().unwrap();
    }

    #[test]
    fn identical_curves_give_jitter_only_covariance() {
        let data = dataset(6, |_, x| 2.0 - x);
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        let prior = induce_prior(&hp, &basis).unwrap();
        let state = initialize_state(&data, &basis, &hp).unwrap();
        let k = 20;
        let expected = 1e-6 * (&prior.psi * (hp.prior_mean_sigma_s2() / (hp.delta - 2.0))).trace() / k as f64;
        let eye = DMatrix::<f64>::identity(k, k) * expected;
        assert!((&state.sigma - eye).amax() < 1e-6 * expected + 1e-12);
    }

    #[test]
    fn single_curve_uses_prior_covariance() {
        let data = dataset(1, wiggly);
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        let state = initialize_state(&data, &basis, &hp).unwrap();
        let prior = induce_prior(&hp, &basis).unwrap();
        let expected = &prior.psi * (hp.prior_mean_sigma_s2() / 3.0);
        assert!((state.sigma - expected).amax() < 1e-12);
    }

    #[test]
    fn hyperparams_serde_round_trip() {
        let data = dataset(4, wiggly);
        let basis = basis_for(&data);
        let hp = elicit_hyperparams(&data, &basis, true, &PriorOverrides::default()).unwrap();
        let json = serde_json::to_string(&hp).unwrap();
        let back: HyperParams = serde_json::from_str(&json).unwrap();
        assert_eq!(hp, back);
    }
}

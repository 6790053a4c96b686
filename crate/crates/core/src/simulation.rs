//! Synthetic functional data: Matérn Gaussian processes, warped and
//! Hermite-transformed variants, common or random grids, additive noise.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::linspace;
use crate::covariance::{matern_correlation, matern_matrix, safe_cholesky, MaternParams};
use crate::error::{invalid, Result};
use crate::model::{Curve, FunctionalDataset};
use crate::rng::mix64;

/// Length of the equally spaced grid on which mean and covariance are scored.
pub const REFERENCE_GRID_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    Common,
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    /// `X̃(t) = (t + 1/2) X(t^{2/3})`.
    Nonstationary,
    /// `0.2 (X(t)² − 1) + X(t)`.
    Hermite,
}

/// Mean function `amplitude · sin(frequency · t) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanSpec {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub offset: f64,
}

impl MeanSpec {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t).sin() + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub n: usize,
    pub grid: GridMode,
    pub p: usize,
    pub domain: (f64, f64),
    pub mean: MeanSpec,
    pub covariance: MaternParams,
    pub transform: Transform,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SimDesign {
    /// Thirty curves on a shared 40-point grid over `(0, π/2)`, mean
    /// `3 sin(4t)`, covariance `5·Matérn(ρ = 0.5, ν = 3.5)`, noise sd `√5/2`.
    pub fn stationary_common(seed: u64) -> Self {
        Self {
            n: 30,
            grid: GridMode::Common,
            p: 40,
            domain: (0.0, FRAC_PI_2),
            mean: MeanSpec { amplitude: 3.0, frequency: 4.0, offset: 0.0 },
            covariance: MaternParams { scale: 0.5, smoothness: 3.5, variance: 5.0 },
            transform: Transform::None,
            noise_sd: 5f64.sqrt() / 2.0,
            seed,
        }
    }

    pub fn stationary_random(seed: u64) -> Self {
        Self { grid: GridMode::RandomUniform, ..Self::stationary_common(seed) }
    }

    pub fn nonstationary_common(seed: u64) -> Self {
        Self { transform: Transform::Nonstationary, ..Self::stationary_common(seed) }
    }

    pub fn hermite_random(seed: u64) -> Self {
        Self { transform: Transform::Hermite, ..Self::stationary_random(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("design needs at least one curve"));
        }
        if self.p < 2 {
            return Err(invalid("design needs at least two points per curve"));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(invalid("design domain must be a nonempty interval"));
        }
        if self.transform == Transform::Nonstationary && self.domain.0 < 0.0 {
            return Err(invalid("the warping t^(2/3) needs a nonnegative domain"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(invalid("noise sd must be nonnegative"));
        }
        self.covariance.validate()
    }
}

/// Observation grids: one shared equally spaced grid, or `n` independent
/// sorted uniform samples of size `p` on the open domain.
pub fn make_grids<R: Rng + ?Sized>(mode: GridMode, n: usize, p: usize, domain: (f64, f64), rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if p < 2 {
        return Err(invalid("grids need at least two points"));
    }
    let (lo, hi) = domain;
    Ok(match mode {
        GridMode::Common => vec![linspace(lo, hi, p); n],
        GridMode::RandomUniform => (0..n)
            .map(|_| {
                let mut g: Vec<f64> = (0..p)
                    .map(|_| loop {
                        let u: f64 = rng.gen();
                        if u > 0.0 {
                            break lo + (hi - lo) * u;
                        }
                    })
                    .collect();
                g.sort_by(f64::total_cmp);
                g
            })
            .collect(),
    })
}

/// `0.2 (x² − 1) + x`, pointwise.
pub fn hermite_transform(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 0.2 * (v * v - 1.0) + v).collect()
}

pub fn warp(t: f64) -> f64 {
    t.cbrt().powi(2)
}

pub fn amplitude(t: f64) -> f64 {
    t + 0.5
}

/// `h(t) · x`, where `x` holds the stationary draw on the warped grid `s(t)`.
pub fn nonstationary_transform(t: &[f64], x_on_warped: &[f64]) -> Vec<f64> {
    t.iter().zip(x_on_warped).map(|(&ti, &x)| amplitude(ti) * x).collect()
}

/// Draw one Gaussian process path with mean `mean` and covariance `params` on `grid`.
pub fn sample_gp<R: Rng + ?Sized>(grid: &[f64], mean: &MeanSpec, params: &MaternParams, rng: &mut R) -> Result<Vec<f64>> {
    let mu = DVector::from_iterator(grid.len(), grid.iter().map(|&t| mean.eval(t)));
    if params.variance == 0.0 {
        return Ok(mu.as_slice().to_vec());
    }
    let cov = matern_matrix(grid, params)?;
    let l = safe_cholesky(&cov.matrix, "simulation covariance")?.l();
    let z = DVector::from_fn(grid.len(), |_, _| StandardNormal.sample(rng));
    Ok((mu + l * z).as_slice().to_vec())
}

/// A simulated data set together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub design: SimDesign,
    pub truth: FunctionalDataset,
    pub observed: FunctionalDataset,
    pub reference_grid: Vec<f64>,
    pub true_mean: Vec<f64>,
    pub true_covariance: DMatrix<f64>,
}

impl SimulatedData {
    pub fn noise_variance(&self) -> f64 {
        self.design.noise_sd * self.design.noise_sd
    }
}

fn curve_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(stream);
    rng
}

pub fn simulate_dataset(d: &SimDesign) -> Result<SimulatedData> {
    d.validate()?;
    let mut grid_rng = curve_stream(d.seed, u64::MAX);
    let grids = make_grids(d.grid, d.n, d.p, d.domain, &mut grid_rng)?;
    let noise = if d.noise_sd > 0.0 { Some(Normal::new(0.0, d.noise_sd).map_err(|e| invalid(e.to_string()))?) } else { None };
    let width = d.n.to_string().len();
    let mut truth = Vec::with_capacity(d.n);
    let mut observed = Vec::with_capacity(d.n);
    for (i, t) in grids.into_iter().enumerate() {
        let mut rng = curve_stream(d.seed, i as u64);
        let z = match d.transform {
            Transform::None => sample_gp(&t, &d.mean, &d.covariance, &mut rng)?,
            Transform::Nonstationary => {
                let warped: Vec<f64> = t.iter().map(|&v| warp(v)).collect();
                nonstationary_transform(&t, &sample_gp(&warped, &d.mean, &d.covariance, &mut rng)?)
            }
            Transform::Hermite => hermite_transform(&sample_gp(&t, &d.mean, &d.covariance, &mut rng)?),
        };
        let y: Vec<f64> = match &noise {
            Some(dist) => z.iter().map(|v| v + dist.sample(&mut rng)).collect(),
            None => z.clone(),
        };
        let id = format!("curve{:0width$}", i + 1, width = width);
        truth.push(Curve::new(id.clone(), t.clone(), z)?);
        observed.push(Curve::new(id, t, y)?);
    }
    let truth = FunctionalDataset::new(truth)?.with_domain(d.domain)?;
    let observed = FunctionalDataset::new(observed)?.with_domain(d.domain)?;
    let reference_grid = linspace(d.domain.0, d.domain.1, REFERENCE_GRID_LEN);
    let (true_mean, true_covariance) = true_moments(d, &reference_grid)?;
    Ok(SimulatedData { design: d.clone(), truth, observed, reference_grid, true_mean, true_covariance })
}

/// Exact mean and covariance of the simulated process on `grid`.
pub fn true_moments(d: &SimDesign, grid: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = grid.len();
    let p = &d.covariance;
    let base = |s: f64, t: f64| -> Result<f64> { Ok(p.variance * matern_correlation((s - t).abs(), p.scale, p.smoothness)?) };
    let mut cov = DMatrix::zeros(g, g);
    let mean: Vec<f64> = match d.transform {
        Transform::None => grid.iter().map(|&t| d.mean.eval(t)).collect(),
        Transform::Nonstationary => grid.iter().map(|&t| amplitude(t) * d.mean.eval(warp(t))).collect(),
        Transform::Hermite => grid
            .iter()
            .map(|&t| {
                let m = d.mean.eval(t);
                0.2 * (m * m + p.variance - 1.0) + m
            })
            .collect(),
    };
    for i in 0..g {
        for j in 0..=i {
            let (s, t) = (grid[i], grid[j]);
            let v = match d.transform {
                Transform::None => base(s, t)?,
                Transform::Nonstationary => amplitude(s) * amplitude(t) * base(warp(s), warp(t))?,
                Transform::Hermite => {
                    let c = base(s, t)?;
                    let (ms, mt) = (d.mean.eval(s), d.mean.eval(t));
                    c * (1.0 + 0.4 * ms) * (1.0 + 0.4 * mt) + 0.08 * c * c
                }
            };
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_process_returns_the_mean() {
        let d = SimDesign {
            noise_sd: 0.0,
            covariance: MaternParams { variance: 0.0, ..SimDesign::stationary_common(1).covariance },
            ..SimDesign::stationary_common(1)
        };
        let sim = simulate_dataset(&d).unwrap();
        for c in sim.observed.curves() {
            for (t, y) in c.t.iter().zip(&c.y) {
                assert!((y - 3.0 * (4.0 * t).sin()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn paper_design_shapes() {
        let sim = simulate_dataset(&SimDesign::stationary_common(7)).unwrap();
        assert_eq!(sim.observed.num_curves(), 30);
        assert!(sim.observed.is_common_grid());
        assert_eq!(sim.observed.total_points(), 1200);
        assert_eq!(sim.observed.curves()[0].t, linspace(0.0, FRAC_PI_2, 40));
        assert!(sim.true_covariance.diagonal().iter().all(|v| (v - 5.0).abs() < 1e-12));
        assert!((sim.noise_variance() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn random_grids_are_sorted_inside_the_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grids = make_grids(GridMode::RandomUniform, 30, 40, (0.0, FRAC_PI_2), &mut rng).unwrap();
        let mut pooled: Vec<f64> = grids.iter().flatten().copied().collect();
        for g in &grids {
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            assert!(g.iter().all(|&t| t > 0.0 && t < FRAC_PI_2));
        }
        pooled.sort_by(f64::total_cmp);
        pooled.dedup();
        assert_eq!(pooled.len(), 1200);
        assert!(make_grids(GridMode::Common, 3, 1, (0.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn seeded_determinism() {
        let a = simulate_dataset(&SimDesign::hermite_random(9)).unwrap();
        let b = simulate_dataset(&SimDesign::hermite_random(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observed, simulate_dataset(&SimDesign::hermite_random(10)).unwrap().observed);
    }

    #[test]
    fn transforms_pointwise() {
        assert_eq!(hermite_transform(&[0.0, 1.0]), vec![-0.2, 1.0]);
        assert_eq!(nonstationary_transform(&[0.0], &[2.0]), vec![1.0]);
        let t = [0.0, 0.5, 1.0];
        assert_eq!(nonstationary_transform(&t, &[3.0; 3]), vec![1.5, 3.0, 4.5]);
        assert_eq!(warp(0.0), 0.0);
        assert!((warp(8.0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_mean_and_variance() {
        let d = SimDesign { n: 5_000, noise_sd: 0.0, ..SimDesign::stationary_common(21) };
        let sim = simulate_dataset(&d).unwrap();
        let t = &sim.observed.curves()[0].t;
        let bound = 3.0 * (5.0f64 / 5000.0).sqrt();
        for (j, &tj) in t.iter().enumerate() {
            let m: f64 = sim.observed.curves().iter().map(|c| c.y[j]).sum::<f64>() / 5000.0;
            assert!((m - 3.0 * (4.0 * tj).sin()).abs() < bound, "t={tj} mean={m}");
        }
    }

    #[test]
    fn covariance_converges_and_nonstationary_variance_law() {
        for (design, check_diag) in [
            (SimDesign { n: 2_000, noise_sd: 0.0, ..SimDesign::stationary_common(5) }, 0.05),
            (SimDesign { n: 2_000, noise_sd: 0.0, ..SimDesign::nonstationary_common(5) }, 0.0),
        ] {
            let sim = simulate_dataset(&design).unwrap();
            let n = design.n as f64;
            let t = sim.observed.curves()[0].t.clone();
            let (mean, cov) = true_moments(&design, &t).unwrap();
            for j in 0..t.len() {
                let v: f64 = sim.observed.curves().iter().map(|c| (c.y[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let truth = cov[(j, j)];
                if check_diag > 0.0 {
                    assert!((v - truth).abs() < check_diag * truth, "diag {j}: {v} vs {truth}");
                } else {
                    // Var of a sample variance of normals is 2σ⁴/n.
                    let se = truth * (2.0 / n).sqrt();
                    assert!((v - truth).abs() < 3.0 * se + 1e-9, "t={} var={v} truth={truth}", t[j]);
                    assert!((truth - (t[j] + 0.5).powi(2) * 5.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hermite_moments_match_monte_carlo() {
        let d = SimDesign { n: 4_000, noise_sd: 0.0, grid: GridMode::Common, ..SimDesign::hermite_random(8) };
        let sim = simulate_dataset(&d).unwrap();
        let t = sim.observed.curves()[0].t.clone();
        let (mean, cov) = true_moments(&d, &t).unwrap();
        for j in [0, 13, 27, 39] {
            let m: f64 = sim.observed.curves().iter().map(|c| c.y[j]).sum::<f64>() / 4000.0;
            let se = (cov[(j, j)] / 4000.0).sqrt();
            assert!((m - mean[j]).abs() < 4.0 * se, "t={} {m} vs {}", t[j], mean[j]);
        }
    }
}

//! Per-curve cubic smoothing splines with GCV-selected penalty.
//!
//! The fit minimizes `Σ (y - f(t))² + λ ∫ f''²` over a cubic B-spline space
//! with a knot at every observation. That space contains the natural cubic
//! spline interpolating any data, so the penalized minimizer coincides with
//! the classical smoothing spline on `[t_1, t_n]`; beyond the data the fit
//! is continued linearly, as the natural spline is.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::SplineSpace;
use crate::error::{invalid, Error, Result};
use crate::model::{Curve, FunctionalDataset};

pub const GCV_GRID_POINTS: usize = 50;
pub const GCV_LOG10_MIN: f64 = -8.0;
pub const GCV_LOG10_MAX: f64 = 4.0;

/// Upper bound on knots used when smoothing pooled scatter.
const MAX_SCATTER_KNOTS: usize = 40;

/// A fitted penalized cubic spline on `[lo, hi]`, linear beyond.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub fitted: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
    pub gcv: f64,
    pub rss: f64,
    space: SplineSpace,
    coef: DVector<f64>,
}

/// Serializable summary of a fit (without the spline representation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub edf: f64,
    pub gcv: f64,
    pub rss: f64,
}

impl SplineFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary { lambda: self.lambda, edf: self.edf, gcv: self.gcv, rss: self.rss }
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coef
    }

    /// Evaluates the fit anywhere on the real line.
    pub fn evaluate(&self, t: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.space.domain();
        let inside: Vec<f64> = t.iter().map(|v| v.clamp(lo, hi)).collect();
        let vals = self.space.eval_matrix(&inside).expect("clamped points lie in the domain") * &self.coef;
        let slopes = self.space.eval_deriv_matrix(&[lo, hi], 1).expect("endpoints lie in the domain") * &self.coef;
        t.iter()
            .zip(vals.iter())
            .map(|(&x, &v)| {
                if x < lo {
                    v + slopes[0] * (x - lo)
                } else if x > hi {
                    v + slopes[1] * (x - hi)
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Penalized regression system reused across candidate penalties.
struct PenalizedSystem {
    space: SplineSpace,
    design: DMatrix<f64>,
    gram: DMatrix<f64>,
    penalty: DMatrix<f64>,
    bty: DVector<f64>,
    y: DVector<f64>,
}

struct Candidate {
    lambda: f64,
    coef: DVector<f64>,
    fitted: DVector<f64>,
    rss: f64,
    edf: f64,
    gcv: f64,
}

impl PenalizedSystem {
    fn new(t: &[f64], y: &[f64], interior: &[f64]) -> Result<Self> {
        let lo = t[0];
        let hi = t[t.len() - 1];
        let space = SplineSpace::clamped(4, lo, hi, interior)?;
        let design = space.eval_matrix(t)?;
        let gram = design.transpose() * &design;
        let penalty = space.second_derivative_penalty();
        let y = DVector::from_column_slice(y);
        let bty = design.transpose() * &y;
        Ok(Self { space, design, gram, penalty, bty, y })
    }

    fn solve(&self, lambda: f64) -> Option<Candidate> {
        let system = &self.gram + &self.penalty * lambda;
        let chol = Cholesky::new(system)?;
        let coef = chol.solve(&self.bty);
        let fitted = &self.design * &coef;
        let rss = (&self.y - &fitted).norm_squared();
        let edf = chol.solve(&self.gram).trace();
        let n = self.y.len() as f64;
        let denom = n - edf;
        let gcv = if denom > 1e-8 * n { n * rss / (denom * denom) } else { f64::INFINITY };
        Some(Candidate { lambda, coef, fitted, rss, edf, gcv })
    }

    fn into_fit(self, c: Candidate) -> SplineFit {
        SplineFit {
            fitted: c.fitted.as_slice().to_vec(),
            lambda: c.lambda,
            edf: c.edf,
            gcv: c.gcv,
            rss: c.rss,
            space: self.space,
            coef: c.coef,
        }
    }

    fn select(self, lambdas: &[f64]) -> Result<SplineFit> {
        let mut best: Option<Candidate> = None;
        for &lambda in lambdas {
            if let Some(c) = self.solve(lambda) {
                if c.gcv.is_finite() && best.as_ref().map_or(true, |b| c.gcv < b.gcv) {
                    best = Some(c);
                }
            }
        }
        let best = best.ok_or_else(|| invalid("no candidate penalty produced a finite GCV score"))?;
        Ok(self.into_fit(best))
    }
}

fn check_curve(t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch { context: "smoothing spline input", expected: t.len(), actual: y.len() });
    }
    if t.len() < 4 {
        return Err(invalid(format!("smoothing spline needs at least 4 points, got {}", t.len())));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("smoothing spline input contains non-finite values"));
    }
    if let Some(w) = t.windows(2).find(|w| w[1] <= w[0]) {
        if w[1] == w[0] {
            return Err(invalid(format!("duplicate observation point {}", w[0])));
        }
        return Err(invalid("observation points must be sorted"));
    }
    Ok(())
}

/// Default 50-point log-spaced penalty grid, scaled by `range³`
/// (the penalty's units, so the grid is invariant to rescaling `t`).
pub fn default_lambda_grid(t: &[f64]) -> Vec<f64> {
    let range = t[t.len() - 1] - t[0];
    let scale = range.powi(3);
    (0..GCV_GRID_POINTS)
        .map(|k| {
            let e = GCV_LOG10_MIN + (GCV_LOG10_MAX - GCV_LOG10_MIN) * k as f64 / (GCV_GRID_POINTS - 1) as f64;
            10f64.powf(e) * scale
        })
        .collect()
}

/// GCV-tuned cubic smoothing spline for one curve.
pub fn css_fit(t: &[f64], y: &[f64], lambda_grid: Option<&[f64]>) -> Result<SplineFit> {
    check_curve(t, y)?;
    let system = PenalizedSystem::new(t, y, &t[1..t.len() - 1])?;
    match lambda_grid {
        Some(g) => system.select(g),
        None => system.select(&default_lambda_grid(t)),
    }
}

/// Smoothing spline at a fixed penalty.
pub fn css_fit_fixed(t: &[f64], y: &[f64], lambda: f64) -> Result<SplineFit> {
    check_curve(t, y)?;
    if !(lambda > 0.0) {
        return Err(invalid(format!("penalty must be positive, got {lambda}")));
    }
    let system = PenalizedSystem::new(t, y, &t[1..t.len() - 1])?;
    let c = system.solve(lambda).ok_or_else(|| invalid("penalized system is singular"))?;
    Ok(system.into_fit(c))
}

/// GCV-tuned penalized spline through unsorted scatter that may contain
/// ties; knots sit at up to forty quantiles of the distinct abscissae.
pub fn smooth_scatter(t: &[f64], y: &[f64]) -> Result<SplineFit> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch { context: "scatter smoother input", expected: t.len(), actual: y.len() });
    }
    let mut pairs: Vec<(f64, f64)> = t.iter().copied().zip(y.iter().copied()).collect();
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(invalid("scatter contains non-finite values"));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(invalid(format!("scatter smoothing needs at least 4 distinct points, got {}", distinct.len())));
    }
    let inner = &distinct[1..distinct.len() - 1];
    let interior: Vec<f64> = if inner.len() <= MAX_SCATTER_KNOTS {
        inner.to_vec()
    } else {
        let mut k: Vec<f64> = (1..=MAX_SCATTER_KNOTS)
            .map(|j| crate::basis::quantile_sorted(inner, j as f64 / (MAX_SCATTER_KNOTS + 1) as f64))
            .collect();
        k.dedup();
        k
    };
    let ts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let system = PenalizedSystem::new(&ts, &ys, &interior)?;
    system.select(&default_lambda_grid(&ts))
}

#[derive(Debug, Clone)]
pub struct SmoothedDataset {
    pub fits: Vec<SplineFit>,
    /// Pooled residual variance `Σ RSS / Σ (p_i - edf_i)`.
    pub noise_variance: f64,
}

impl SmoothedDataset {
    pub fn smoothed_curves(&self, data: &FunctionalDataset) -> Result<FunctionalDataset> {
        let curves = data
            .curves()
            .iter()
            .zip(&self.fits)
            .map(|(c, f)| Curve::new(c.id.clone(), c.t.clone(), f.fitted.clone()))
            .collect::<Result<Vec<_>>>()?;
        FunctionalDataset::new(curves)
    }
}

pub fn css_smooth_dataset(data: &FunctionalDataset) -> Result<SmoothedDataset> {
    let fits = data.curves().iter().map(|c| css_fit(&c.t, &c.y, None)).collect::<Result<Vec<_>>>()?;
    let rss: f64 = fits.iter().map(|f| f.rss).sum();
    let dof: f64 = data.curves().iter().zip(&fits).map(|(c, f)| c.len() as f64 - f.edf).sum();
    let noise_variance = if dof > 0.0 { rss / dof } else { 0.0 };
    Ok(SmoothedDataset { fits, noise_variance })
}

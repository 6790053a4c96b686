//! Convergence diagnosis, goodness of fit and scoring against known truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::basis::quantile_sorted;
use crate::error::{invalid, Error, Result};
use crate::model::FunctionalDataset;
use crate::sampler::{PdmStatistics, ScalarTraces};

pub const PSRF_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psrf {
    pub value: f64,
    /// Within-chain variance was zero; `value` is reported as 1.
    pub degenerate: bool,
}

/// Split-chain Gelman–Rubin potential scale reduction factor.
pub fn psrf(chains: &[&[f64]]) -> Result<Psrf> {
    if chains.len() < 2 {
        return Err(invalid("psrf needs at least two chains"));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(invalid("psrf chains must have equal length"));
    }
    if len < 10 {
        return Err(invalid(format!("psrf chains need at least 10 draws, got {len}")));
    }
    let half = len / 2;
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    let n = half as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let between = n * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let scale = means.iter().chain(std::iter::once(&grand)).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    if !(within > 1e-24 * scale * scale) {
        return Ok(Psrf { value: 1.0, degenerate: true });
    }
    let pooled = (n - 1.0) / n * within + between / n;
    Ok(Psrf { value: (pooled / within).sqrt(), degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrfEntry {
    pub name: String,
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrfReport {
    pub entries: Vec<PsrfEntry>,
    pub threshold: f64,
    pub pass: bool,
}

impl PsrfReport {
    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// PSRF of every monitored scalar across the per-chain traces.
pub fn psrf_report(traces: &[ScalarTraces], threshold: f64) -> Result<PsrfReport> {
    let mut entries = Vec::new();
    for (k, name) in ScalarTraces::NAMES.iter().enumerate() {
        let chains: Vec<&[f64]> = traces.iter().map(|t| t.monitored()[k].1).collect();
        let r = psrf(&chains)?;
        entries.push(PsrfEntry { name: (*name).to_string(), value: r.value, degenerate: r.degenerate });
    }
    let pass = entries.iter().all(|e| e.value < threshold);
    Ok(PsrfReport { entries, threshold, pass })
}

/// `P(χ²_dof > t)`.
pub fn chi_square_survival(t: f64, dof: usize) -> f64 {
    if t <= 0.0 {
        1.0
    } else if !t.is_finite() {
        0.0
    } else {
        gamma_ur(0.5 * dof as f64, 0.5 * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueSummary {
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub min: f64,
    pub max: f64,
}

impl PValueSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        if s.is_empty() {
            return Self { median: f64::NAN, lower_quartile: f64::NAN, upper_quartile: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        Self {
            median: quantile_sorted(&s, 0.5),
            lower_quartile: quantile_sorted(&s, 0.25),
            upper_quartile: quantile_sorted(&s, 0.75),
            min: s[0],
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGof {
    pub id: String,
    pub points: usize,
    pub p_values: PValueSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub draws: usize,
    pub total_points: usize,
    pub aggregate: PValueSummary,
    pub per_curve: Vec<CurveGof>,
    pub level: f64,
    pub lack_of_fit: bool,
}

impl GofReport {
    pub fn median_p(&self) -> f64 {
        self.aggregate.median
    }
}

/// Goodness-of-fit report from precomputed discrepancy statistics.
pub fn gof_from_statistics(stats: &PdmStatistics, ids: &[String], level: f64) -> Result<GofReport> {
    if stats.aggregate.is_empty() {
        return Err(invalid("goodness of fit needs at least one draw"));
    }
    if ids.len() != stats.curve_points.len() {
        return Err(Error::DimensionMismatch { context: "curve ids", expected: stats.curve_points.len(), actual: ids.len() });
    }
    let total = stats.total_points();
    let agg: Vec<f64> = stats.aggregate.iter().map(|&t| chi_square_survival(t, total)).collect();
    let per_curve = ids
        .iter()
        .zip(&stats.curve_points)
        .zip(&stats.per_curve)
        .map(|((id, &p), ts)| {
            let ps: Vec<f64> = ts.iter().map(|&t| chi_square_survival(t, p)).collect();
            CurveGof { id: id.clone(), points: p, p_values: PValueSummary::from_values(&ps) }
        })
        .collect();
    let aggregate = PValueSummary::from_values(&agg);
    Ok(GofReport {
        draws: agg.len(),
        total_points: total,
        aggregate,
        per_curve,
        level,
        lack_of_fit: aggregate.median < level,
    })
}

/// One posterior draw of the signals (per curve, on the curve's grid) and noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDraw {
    pub signals: Vec<Vec<f64>>,
    pub sigma_eps2: f64,
}

/// Pivotal discrepancy `Σ((Y − Z)/σ_ε)²` per draw, referred to `χ²_N`.
pub fn gof_pdm(observed: &FunctionalDataset, draws: &[SignalDraw], level: f64) -> Result<GofReport> {
    let curves = observed.curves();
    let mut stats = PdmStatistics::new(curves.iter().map(|c| c.len()).collect(), draws.len());
    let mut rss = vec![0.0; curves.len()];
    for d in draws {
        if d.signals.len() != curves.len() {
            return Err(Error::DimensionMismatch { context: "signal draw curves", expected: curves.len(), actual: d.signals.len() });
        }
        for ((r, c), z) in rss.iter_mut().zip(curves).zip(&d.signals) {
            if z.len() != c.len() {
                return Err(Error::DimensionMismatch { context: "signal draw points", expected: c.len(), actual: z.len() });
            }
            *r = c.y.iter().zip(z).map(|(y, z)| (y - z).powi(2)).sum();
        }
        stats.push(&rss, d.sigma_eps2);
    }
    let ids: Vec<String> = curves.iter().map(|c| c.id.clone()).collect();
    gof_from_statistics(&stats, &ids, level)
}

/// Point estimates to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// Per-curve signals on the curve's observation grid.
    pub signals: Vec<Vec<f64>>,
    /// Mean on the reference grid.
    pub mean: Vec<f64>,
    /// Covariance on the reference grid.
    pub covariance: DMatrix<f64>,
    pub sigma_eps2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub signal: f64,
    pub mean: f64,
    pub covariance: f64,
    pub sigma_eps2: Option<f64>,
}

fn rms(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        s += (a - b).powi(2);
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// RMSEs of signals, mean and covariance, and the absolute noise-variance error.
pub fn rmse_suite(est: &Estimates, truth: &Estimates) -> Result<Scores> {
    if est.signals.len() != truth.signals.len() {
        return Err(Error::DimensionMismatch { context: "scored curves", expected: truth.signals.len(), actual: est.signals.len() });
    }
    for (a, b) in est.signals.iter().zip(&truth.signals) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { context: "scored curve points", expected: b.len(), actual: a.len() });
        }
    }
    if est.mean.len() != truth.mean.len() || est.covariance.shape() != truth.covariance.shape() {
        return Err(Error::DimensionMismatch { context: "reference grid", expected: truth.mean.len(), actual: est.mean.len() });
    }
    let signal = rms(est.signals.iter().zip(&truth.signals).flat_map(|(a, b)| a.iter().copied().zip(b.iter().copied())));
    let mean = rms(est.mean.iter().copied().zip(truth.mean.iter().copied()));
    let covariance = rms(est.covariance.iter().copied().zip(truth.covariance.iter().copied()));
    let sigma_eps2 = match (est.sigma_eps2, truth.sigma_eps2) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(Scores { signal, mean, covariance, sigma_eps2 })
}

/// Fraction of points whose true value lies inside `[lower, upper]`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    if lower.len() != truth.len() || upper.len() != truth.len() {
        return Err(Error::DimensionMismatch { context: "coverage grid", expected: truth.len(), actual: lower.len() });
    }
    if truth.is_empty() {
        return Err(invalid("coverage of an empty grid"));
    }
    let hits = lower.iter().zip(upper).zip(truth).filter(|((l, u), t)| *l <= *t && *t <= *u).count();
    Ok(hits as f64 / truth.len() as f64)
}

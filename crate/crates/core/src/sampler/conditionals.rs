//! Full-conditional samplers of the coefficient-space Gibbs sweep.
//!
//! Each sampler comes with a function returning the exact parameters of
//! the conditional it draws from, so the Monte Carlo checks compare draws
//! against closed forms rather than against another sampler.
//!
//! Covariances are never inverted explicitly: draws go through one
//! Cholesky factor and triangular solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::covariance::{safe_cholesky, symmetrize};
use crate::error::{invalid, Error, Result};

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

fn factor(m: DMatrix<f64>, role: &str) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => Ok(safe_cholesky(&m, role)?.chol),
    }
}

/// Mean and covariance of `ζ_i | Y_i, μ_ζ, Σ_ζ, σ_ε²`.
pub fn zeta_posterior(
    y: &DVector<f64>,
    b: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    sigma_eps2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sigma_inv = factor(sigma.clone(), "coefficient covariance")?.inverse();
    let precision = b.transpose() * b / sigma_eps2 + &sigma_inv;
    let chol = factor(precision, "coefficient conditional precision")?;
    let rhs = b.transpose() * y / sigma_eps2 + &sigma_inv * mu;
    Ok((chol.solve(&rhs), chol.inverse()))
}

/// Draw from `MN(m, V)` with `V⁻¹ = BᵀB/σ_ε² + Σ⁻¹` and
/// `m = V (BᵀY/σ_ε² + Σ⁻¹μ)`, given precomputed `BᵀB`, `BᵀY`, `Σ⁻¹`, `Σ⁻¹μ`.
pub(crate) fn draw_zeta<R: Rng + ?Sized>(
    btb: &DMatrix<f64>,
    bty: &DVector<f64>,
    sigma_inv: &DMatrix<f64>,
    sigma_inv_mu: &DVector<f64>,
    sigma_eps2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let inv_noise = 1.0 / sigma_eps2;
    let mut precision = sigma_inv.clone();
    precision.zip_apply(btb, |p, g| *p += g * inv_noise);
    let chol = factor(precision, "coefficient conditional precision")?;
    let mut rhs = sigma_inv_mu.clone();
    rhs.axpy(inv_noise, bty, 1.0);
    let mean = chol.solve(&rhs);
    let z = standard_normal_vec(mean.len(), rng);
    let noise = chol.l_dirty().tr_solve_lower_triangular(&z).ok_or_else(|| invalid("singular precision factor"))?;
    Ok(mean + noise)
}

/// One draw of a curve's coefficients from its full conditional.
pub fn sample_zeta_i<R: Rng + ?Sized>(
    y: &DVector<f64>,
    b: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    sigma_eps2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(sigma_eps2 > 0.0) {
        return Err(invalid(format!("noise variance must be positive, got {sigma_eps2}")));
    }
    if b.nrows() != y.len() || b.ncols() != mu.len() {
        return Err(Error::DimensionMismatch { context: "curve design", expected: y.len(), actual: b.nrows() });
    }
    let sigma_inv = factor(sigma.clone(), "coefficient covariance")?.inverse();
    let sigma_inv_mu = &sigma_inv * mu;
    draw_zeta(&(b.transpose() * b), &(b.transpose() * y), &sigma_inv, &sigma_inv_mu, sigma_eps2, rng)
}

/// Mean and covariance of `μ_ζ | ζ, Σ_ζ`: `((Σζ_i + c m₀)/(n+c), Σ_ζ/(n+c))`.
pub fn mu_posterior(
    zeta: &DMatrix<f64>,
    m0: &DVector<f64>,
    c: f64,
    sigma: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = zeta.nrows() as f64;
    let total = zeta.row_sum().transpose() + m0 * c;
    (total / (n + c), sigma / (n + c))
}

pub(crate) fn draw_mu<R: Rng + ?Sized>(
    zeta: &DMatrix<f64>,
    m0: &DVector<f64>,
    c: f64,
    sigma_factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let n = zeta.nrows() as f64;
    let mean = (zeta.row_sum().transpose() + m0 * c) / (n + c);
    let z = standard_normal_vec(mean.len(), rng);
    mean + sigma_factor * z / (n + c).sqrt()
}

pub fn sample_mu_zeta<R: Rng + ?Sized>(
    zeta: &DMatrix<f64>,
    m0: &DVector<f64>,
    c: f64,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if zeta.nrows() == 0 {
        return Err(invalid("need at least one curve to update the mean"));
    }
    let l = factor(sigma.clone(), "coefficient covariance")?.l();
    Ok(draw_mu(zeta, m0, c, &l, rng))
}

/// Parameters `(δ̃, Ψ̃)` of `Σ_ζ | ζ, μ_ζ`, with `δ̃ = n + 1 + δ` and
/// `Ψ̃ = Σ(ζ_i-μ)(ζ_i-μ)ᵀ + c(μ-m₀)(μ-m₀)ᵀ + Ψ_scaled`.
pub fn sigma_zeta_posterior(
    zeta: &DMatrix<f64>,
    mu: &DVector<f64>,
    m0: &DVector<f64>,
    c: f64,
    delta: f64,
    psi_scaled: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let n = zeta.nrows();
    let mut centered = zeta.clone();
    let mu_row = mu.transpose();
    for mut r in centered.row_iter_mut() {
        r -= &mu_row;
    }
    let dm = mu - m0;
    let mut scale = centered.transpose() * &centered;
    scale.ger(c, &dm, &dm, 1.0);
    scale += psi_scaled;
    (n as f64 + 1.0 + delta, symmetrize(&scale))
}

/// Draw from the inverse-Wishart `IW(δ, Ψ)` in Dawid's convention: the
/// inverse of a Wishart with `δ + K - 1` degrees of freedom and scale `Ψ⁻¹`,
/// so `E[Σ] = Ψ/(δ-2)`. Uses the Bartlett decomposition `W = L⁻ᵀ A Aᵀ L⁻¹`
/// with `Ψ = L Lᵀ`, giving `Σ = XᵀX` where `A X = Lᵀ`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(delta: f64, psi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let k = psi.nrows();
    if !psi.is_square() || k == 0 {
        return Err(invalid("inverse-Wishart scale must be a nonempty square matrix"));
    }
    if !(delta > 0.0) {
        return Err(invalid(format!("inverse-Wishart shape must be positive, got {delta}")));
    }
    let df = delta + k as f64 - 1.0;
    let l = factor(psi.clone(), "inverse-Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| invalid(format!("Bartlett diagonal: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let x = a.solve_lower_triangular(&l.transpose()).ok_or_else(|| invalid("singular Bartlett factor"))?;
    Ok(symmetrize(&(x.transpose() * x)))
}

pub fn sample_sigma_zeta<R: Rng + ?Sized>(
    zeta: &DMatrix<f64>,
    mu: &DVector<f64>,
    m0: &DVector<f64>,
    c: f64,
    delta: f64,
    psi_scaled: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (df, scale) = sigma_zeta_posterior(zeta, mu, m0, c, delta, psi_scaled);
    sample_inverse_wishart(df, &scale, rng)
}

/// Shape and rate of the inverse-gamma conditional `σ_ε² | Z, Y`.
pub fn sigma_eps_posterior(rss: f64, total_points: usize, a_eps: f64, b_eps: f64) -> (f64, f64) {
    (a_eps + 0.5 * total_points as f64, b_eps + 0.5 * rss)
}

pub fn sample_sigma_eps<R: Rng + ?Sized>(
    rss: f64,
    total_points: usize,
    a_eps: f64,
    b_eps: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(rss >= 0.0) {
        return Err(invalid(format!("residual sum of squares must be nonnegative, got {rss}")));
    }
    let (shape, rate) = sigma_eps_posterior(rss, total_points, a_eps, b_eps);
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| invalid(format!("noise variance conditional: {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Shape and rate of the Gamma conditional `σ_s² | Σ_ζ`, given
/// `trace(A_ζ Σ_ζ⁻¹)`.
pub fn sigma_s_posterior(trace_term: f64, delta: f64, k: usize, a_s: f64, b_s: f64) -> (f64, f64) {
    let kf = k as f64;
    (a_s + 0.5 * (delta + kf - 1.0) * kf, b_s + 0.5 * trace_term)
}

/// `trace(A Σ⁻¹)` via a Cholesky solve.
pub fn trace_against_inverse(a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = factor(sigma.clone(), "coefficient covariance")?;
    Ok(chol.solve(a).trace())
}

pub(crate) fn draw_sigma_s<R: Rng + ?Sized>(
    trace_term: f64,
    delta: f64,
    k: usize,
    a_s: f64,
    b_s: f64,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = sigma_s_posterior(trace_term, delta, k, a_s, b_s);
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| invalid(format!("scale conditional: {e}")))?;
    Ok(g.sample(rng))
}

pub fn sample_sigma_s<R: Rng + ?Sized>(
    sigma: &DMatrix<f64>,
    a_zeta: &DMatrix<f64>,
    delta: f64,
    a_s: f64,
    b_s: f64,
    rng: &mut R,
) -> Result<f64> {
    let trace = trace_against_inverse(a_zeta, sigma)?;
    draw_sigma_s(trace, delta, sigma.nrows(), a_s, b_s, rng)
}

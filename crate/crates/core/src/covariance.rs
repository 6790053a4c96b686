//! Matérn kernels, smoothed empirical covariance surfaces and
//! positive-definite matrix utilities.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::WorkingGrid;
use crate::error::{invalid, Error, Result};
use crate::model::FunctionalDataset;
use crate::special::{bessel_k, bessel_k_half_integer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Scale ρ, in domain units.
    pub scale: f64,
    /// Smoothness ν.
    pub smoothness: f64,
    /// Variance multiplier σ².
    pub variance: f64,
}

impl MaternParams {
    pub fn new(scale: f64, smoothness: f64, variance: f64) -> Result<Self> {
        let p = Self { scale, smoothness, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!("Matérn scale must be positive, got {}", self.scale)));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(invalid(format!("Matérn smoothness must be positive, got {}", self.smoothness)));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(invalid(format!("Matérn variance must be nonnegative, got {}", self.variance)));
        }
        Ok(())
    }
}

/// A covariance matrix evaluated over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub grid: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Matérn correlation at distance `d`.
pub fn matern_correlation(d: f64, scale: f64, smoothness: f64) -> Result<f64> {
    if !(scale > 0.0) || !(smoothness > 0.0) {
        return Err(invalid(format!(
            "Matérn parameters must be positive (scale {scale}, smoothness {smoothness})"
        )));
    }
    if !(d >= 0.0) {
        return Err(invalid(format!("distance must be nonnegative, got {d}")));
    }
    Ok(matern_correlation_unchecked(d, scale, smoothness))
}

fn matern_correlation_unchecked(d: f64, scale: f64, nu: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let x = (2.0 * nu).sqrt() * d / scale;
    let twice = 2.0 * nu;
    if twice.fract() == 0.0 && twice as usize % 2 == 1 {
        // ν = n + 1/2: x^ν K_ν(x) / (Γ(ν) 2^{ν-1}) in closed form
        let n = (nu - 0.5).round() as usize;
        let log_norm = ln_gamma(nu) + (nu - 1.0) * std::f64::consts::LN_2;
        let k = bessel_k_half_integer(n, x);
        return (nu * x.ln() + k.ln() - log_norm).exp().min(1.0);
    }
    if x > 700.0 {
        return 0.0;
    }
    let log_norm = ln_gamma(nu) + (nu - 1.0) * std::f64::consts::LN_2;
    let k = bessel_k(nu, x);
    if k <= 0.0 {
        return 0.0;
    }
    (nu * x.ln() + k.ln() - log_norm).exp().min(1.0)
}

pub fn matern_matrix(grid: &[f64], params: &MaternParams) -> Result<CovMatrix> {
    params.validate()?;
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = params.variance;
        for j in 0..i {
            let v = params.variance
                * matern_correlation_unchecked((grid[i] - grid[j]).abs(), params.scale, params.smoothness);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(CovMatrix { grid: grid.to_vec(), matrix: m })
}

/// Symmetrize and clip eigenvalues below `rel_floor · λ_max`.
pub fn repair_pd(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.max();
    let floor = if lmax > 0.0 { rel_floor * lmax } else { 1e-12 };
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    symmetrize(&out)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smoothed empirical covariance on the working grid.
///
/// Observations are centered by a Nadaraya–Watson mean, off-diagonal
/// within-curve cross products are binned to the nearest working-grid
/// cells, and the binned surface is smoothed with a separable Gaussian
/// kernel. Cells without observations are filled by the smoother.
pub fn empirical_covariance_smoothed(
    data: &FunctionalDataset,
    grid: &WorkingGrid,
    bandwidth: f64,
) -> Result<CovMatrix> {
    if data.num_curves() < 2 {
        return Err(invalid("a covariance estimate needs at least two curves"));
    }
    if !(bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let tau = grid.points();
    let l = tau.len();
    let kernel = |a: f64, b: f64| (-0.5 * ((a - b) / bandwidth).powi(2)).exp();

    // Nadaraya–Watson mean evaluated at each working-grid cell
    let mut num = vec![0.0; l];
    let mut den = vec![0.0; l];
    for curve in data.curves() {
        for (&t, &y) in curve.t.iter().zip(&curve.y) {
            for (c, &tc) in tau.iter().enumerate() {
                let w = kernel(t, tc);
                num[c] += w * y;
                den[c] += w;
            }
        }
    }
    let cell_mean: Vec<f64> = num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 }).collect();

    let nearest = |t: f64| -> usize {
        let idx = tau.partition_point(|&g| g < t);
        if idx == 0 {
            0
        } else if idx == l {
            l - 1
        } else if t - tau[idx - 1] <= tau[idx] - t {
            idx - 1
        } else {
            idx
        }
    };

    let mut sums = DMatrix::<f64>::zeros(l, l);
    let mut counts = DMatrix::<f64>::zeros(l, l);
    for curve in data.curves() {
        let cells: Vec<usize> = curve.t.iter().map(|&t| nearest(t)).collect();
        let resid: Vec<f64> = curve.y.iter().zip(&cells).map(|(y, &c)| y - cell_mean[c]).collect();
        for j in 0..cells.len() {
            for k in 0..cells.len() {
                if j == k {
                    continue;
                }
                sums[(cells[j], cells[k])] += resid[j] * resid[k];
                counts[(cells[j], cells[k])] += 1.0;
            }
        }
    }

    let weights = DMatrix::from_fn(l, l, |a, b| kernel(tau[a], tau[b]));
    let num = &weights * &sums * weights.transpose();
    let den = &weights * &counts * weights.transpose();
    let raw = DMatrix::from_fn(l, l, |a, b| if den[(a, b)] > 0.0 { num[(a, b)] / den[(a, b)] } else { 0.0 });
    Ok(CovMatrix { grid: tau.to_vec(), matrix: repair_pd(&raw, 1e-8) })
}

/// A Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl CholeskyFactor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Cholesky of `M + jitter·I` with jitter escalating from zero through
/// `1e-10·s` by factors of ten up to `1e-6·s`, where `s = trace(M)/dim`.
pub fn safe_cholesky(m: &DMatrix<f64>, role: &str) -> Result<CholeskyFactor> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { context: "cholesky input", expected: m.nrows(), actual: m.ncols() });
    }
    let dim = m.nrows().max(1);
    let scale = {
        let s = m.trace() / dim as f64;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let max_jitter = 1e-6 * scale;
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(CholeskyFactor { chol, jitter: 0.0 });
    }
    let mut jitter = 1e-10 * scale;
    while jitter <= max_jitter * (1.0 + 1e-12) {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(CholeskyFactor { chol, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization { role: role.to_string(), max_jitter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{linspace, select_working_grid_in};
    use crate::model::Curve;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn matern_closed_forms() {
        assert_eq!(matern_correlation(0.0, 0.5, 3.5).unwrap(), 1.0);
        assert_abs_diff_eq!(matern_correlation(0.5, 0.5, 0.5).unwrap(), (-1.0f64).exp(), epsilon = 1e-14);
        let x = 3f64.sqrt();
        assert_abs_diff_eq!(matern_correlation(0.7, 0.7, 1.5).unwrap(), (1.0 + x) * (-x).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(matern_correlation(0.7, 0.7, 1.5).unwrap(), 0.48335, epsilon = 1e-5);
        // ν = 5/2: (1 + x + x²/3) e^{-x}, x = √5 d/ρ
        let x = 5f64.sqrt() * 0.3 / 0.4;
        assert_abs_diff_eq!(
            matern_correlation(0.3, 0.4, 2.5).unwrap(),
            (1.0 + x + x * x / 3.0) * (-x).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn general_order_path_agrees_with_half_integer_path() {
        // nudging ν off the half-integer forces the Bessel route
        for &d in &[0.01, 0.2, 0.6, 1.4] {
            let a = matern_correlation(d, 0.5, 3.5).unwrap();
            let b = matern_correlation(d, 0.5, 3.5 + 1e-9).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn matern_rejects_bad_parameters() {
        assert!(matern_correlation(0.1, 0.0, 1.0).is_err());
        assert!(matern_correlation(0.1, 1.0, -1.0).is_err());
        assert!(MaternParams::new(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn matern_is_nonincreasing() {
        for &nu in &[0.3, 0.5, 1.7, 2.5, 3.5, 6.0] {
            let mut prev = 1.0;
            for i in 0..400 {
                let d = i as f64 * 0.01;
                let v = matern_correlation(d, 0.5, nu).unwrap();
                assert!(v <= prev + 1e-14, "nu {nu} d {d}");
                assert!(v >= 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn matern_matrix_examples() {
        let grid = linspace(0.0, std::f64::consts::FRAC_PI_2, 40);
        let m = matern_matrix(&grid, &MaternParams::new(0.5, 3.5, 5.0).unwrap()).unwrap();
        for i in 0..40 {
            assert_eq!(m.matrix[(i, i)], 5.0);
        }
        let zero = matern_matrix(&grid, &MaternParams::new(0.5, 3.5, 0.0).unwrap()).unwrap();
        assert_eq!(zero.matrix.amax(), 0.0);

        let m = matern_matrix(&[0.0, 0.5, 1.0], &MaternParams::new(0.5, 0.5, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(m.matrix[(0, 1)], (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.matrix[(0, 2)], (-2.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.matrix[(2, 1)], (-1.0f64).exp(), epsilon = 1e-14);

        let sep = linspace(0.0, 1.0, 10);
        let m = matern_matrix(&sep, &MaternParams::new(0.2, 2.5, 1.0).unwrap()).unwrap();
        assert_eq!(safe_cholesky(&m.matrix, "matern").unwrap().jitter, 0.0);
    }

    #[test]
    fn cholesky_examples() {
        let eye = DMatrix::<f64>::identity(4, 4);
        let f = safe_cholesky(&eye, "identity").unwrap();
        assert_eq!(f.jitter, 0.0);
        assert_eq!(f.l(), eye);

        let v = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let outer = &v * v.transpose();
        let f = safe_cholesky(&outer, "outer").unwrap();
        assert!(f.jitter > 0.0);
        let l = f.l();
        assert!((&l * l.transpose() - &outer).amax() < 10.0 * f.jitter);

        let mut neg = DMatrix::<f64>::identity(3, 3);
        neg[(1, 1)] = -1.0;
        match safe_cholesky(&neg, "test surface") {
            Err(Error::Factorization { role, .. }) => assert_eq!(role, "test surface"),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_reproduces_spd_input() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 0.5 } else { 0.0 });
        let m = &a * a.transpose() + DMatrix::<f64>::identity(6, 6) * 0.1;
        let f = safe_cholesky(&m, "spd").unwrap();
        let l = f.l();
        let rel = (&l * l.transpose() - &m).norm() / m.norm();
        assert!(rel < 1e-8);
    }

    #[test]
    fn repair_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = repair_pd(&m, 1e-8);
        let eig = SymmetricEigen::new(r.clone());
        assert!(eig.eigenvalues.min() > 0.0);
        assert!(Cholesky::new(r).is_some());
    }

    fn gp_dataset(n: usize, seed: u64, grid: &[f64], truth: &DMatrix<f64>) -> FunctionalDataset {
        let l = Cholesky::new(truth.clone()).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves = (0..n)
            .map(|i| {
                let z = DVector::from_fn(grid.len(), |_, _| StandardNormal.sample(&mut rng));
                let y = &l * z;
                Curve::new(format!("c{i}"), grid.to_vec(), y.as_slice().to_vec()).unwrap()
            })
            .collect();
        FunctionalDataset::new(curves).unwrap()
    }

    #[test]
    fn smoothed_covariance_is_consistent() {
        let grid = linspace(0.0, 1.0, 30);
        let truth = matern_matrix(&grid, &MaternParams::new(0.5, 2.5, 2.0).unwrap()).unwrap().matrix;
        let wg = select_working_grid_in(&grid, 10, (0.0, 1.0)).unwrap();
        let truth_wg = matern_matrix(wg.points(), &MaternParams::new(0.5, 2.5, 2.0).unwrap()).unwrap().matrix;
        let err = |n: usize| {
            let data = gp_dataset(n, 11, &grid, &truth);
            let est = empirical_covariance_smoothed(&data, &wg, 0.1).unwrap();
            (est.matrix - &truth_wg).abs().mean()
        };
        let small = err(30);
        let large = err(300);
        assert!(large < small, "n=300 error {large} not below n=30 error {small}");
        assert!(large < 0.35);
    }

    #[test]
    fn smoothed_covariance_degenerate_and_invariants() {
        let grid = linspace(0.0, 1.0, 12);
        let curves = (0..4).map(|i| Curve::new(format!("c{i}"), grid.clone(), vec![2.0; 12]).unwrap()).collect();
        let data = FunctionalDataset::new(curves).unwrap();
        let wg = select_working_grid_in(&grid, 6, (0.0, 1.0)).unwrap();
        let est = empirical_covariance_smoothed(&data, &wg, 0.1).unwrap();
        assert!(est.matrix.amax() < 1e-8);
        assert!(Cholesky::new(est.matrix.clone()).is_some());

        let one = FunctionalDataset::new(vec![Curve::new("a", grid.clone(), vec![1.0; 12]).unwrap()]).unwrap();
        assert!(empirical_covariance_smoothed(&one, &wg, 0.1).is_err());

        let truth = matern_matrix(&grid, &MaternParams::new(0.3, 1.5, 1.0).unwrap()).unwrap().matrix;
        let data = gp_dataset(8, 5, &grid, &truth);
        let a = empirical_covariance_smoothed(&data, &wg, 0.1).unwrap();
        let mut reversed: Vec<Curve> = data.curves().to_vec();
        reversed.reverse();
        let b = empirical_covariance_smoothed(&FunctionalDataset::new(reversed).unwrap(), &wg, 0.1).unwrap();
        assert!((a.matrix.clone() - b.matrix).amax() < 1e-10);
        assert!(Cholesky::new(a.matrix).is_some());
    }
}

//! Cubic B-spline systems anchored on a working grid.
//!
//! A [`BasisSystem`] maps function values on the working grid to spline
//! coefficients (`ζ = B(τ)⁺ z`) and evaluates the spline anywhere in the
//! closed domain. Interior knots are knot averages of the working grid,
//! which satisfies the Schoenberg–Whitney conditions so `B(τ)` is square and
//! nonsingular when `K = L`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::SplineSpace;
use crate::error::{invalid, Error, Result};

pub const CUBIC_ORDER: usize = 4;

const PINV_RELATIVE_CUTOFF: f64 = 1e-10;
const EXACT_SOLVE_MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingGrid {
    points: Vec<f64>,
    domain: (f64, f64),
}

impl WorkingGrid {
    /// Validates strict monotonicity and containment in the closed domain.
    pub fn new(points: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("working grid must contain at least one point"));
        }
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid(format!("invalid domain [{lo}, {hi}]")));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("working grid must be strictly increasing"));
        }
        if let Some(&p) = points.iter().find(|&&p| !(p >= lo && p <= hi)) {
            return Err(Error::OutOfDomain { value: p, lo, hi });
        }
        Ok(Self { points, domain })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

/// Linear-interpolation (type 7) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Working grid at the `1/(L+1), …, L/(L+1)` percentiles of the pooled grid.
///
/// The domain defaults to `[min, max]` of the pooled grid; use
/// [`select_working_grid_in`] to anchor it to a wider known domain.
pub fn select_working_grid(pooled: &[f64], len: usize) -> Result<WorkingGrid> {
    let (lo, hi) = pooled_range(pooled)?;
    select_working_grid_in(pooled, len, (lo, hi))
}

pub fn select_working_grid_in(pooled: &[f64], len: usize, domain: (f64, f64)) -> Result<WorkingGrid> {
    if len < CUBIC_ORDER {
        return Err(invalid(format!(
            "working grid length {len} is below {CUBIC_ORDER}, the minimum for cubic splines"
        )));
    }
    pooled_range(pooled)?;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points: Vec<f64> = (1..=len)
        .map(|j| quantile_sorted(&sorted, j as f64 / (len + 1) as f64))
        .collect();
    WorkingGrid::new(points, domain)
}

fn pooled_range(pooled: &[f64]) -> Result<(f64, f64)> {
    if pooled.is_empty() {
        return Err(invalid("pooled observation grid is empty"));
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(invalid("pooled observation grid contains non-finite values"));
    }
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Serializable description of a basis, enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub order: usize,
    pub knots: Vec<f64>,
    pub working_grid: Vec<f64>,
    pub domain: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct BasisSystem {
    space: SplineSpace,
    grid: WorkingGrid,
    b_tau: DMatrix<f64>,
    b_tau_inv: DMatrix<f64>,
    condition: f64,
}

/// Knot-averaging interior knots: `(τ_{j+1} + … + τ_{j+order-1}) / (order-1)`.
fn averaged_knots(tau: &[f64], order: usize, num_basis: usize) -> Vec<f64> {
    let m = order - 1;
    (1..=num_basis - order)
        .map(|j| tau[j..j + m].iter().sum::<f64>() / m as f64)
        .collect()
}

pub fn build_basis(grid: WorkingGrid, num_basis: usize) -> Result<BasisSystem> {
    if num_basis < CUBIC_ORDER {
        return Err(invalid(format!("need at least {CUBIC_ORDER} cubic basis functions, got {num_basis}")));
    }
    if num_basis != grid.len() {
        return Err(invalid(format!(
            "number of basis functions ({num_basis}) must equal the working grid length ({})",
            grid.len()
        )));
    }
    let (lo, hi) = grid.domain();
    let interior = averaged_knots(grid.points(), CUBIC_ORDER, num_basis);
    let space = SplineSpace::clamped(CUBIC_ORDER, lo, hi, &interior)?;
    let b_tau = space.eval_matrix(grid.points())?;
    let (b_tau_inv, condition) = generalized_inverse(&b_tau);
    if condition >= EXACT_SOLVE_MAX_CONDITION {
        warn!("working-grid basis matrix is ill-conditioned (condition number {condition:.3e}); using truncated pseudo-inverse");
    }
    Ok(BasisSystem { space, grid, b_tau, b_tau_inv, condition })
}

/// Exact inverse for well-conditioned square matrices, otherwise the
/// SVD pseudo-inverse truncated at `1e-10 σ_max`. Returns the 2-norm
/// condition number alongside.
pub fn generalized_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if m.is_square() && condition < EXACT_SOLVE_MAX_CONDITION {
        if let Some(inv) = m.clone().lu().try_inverse() {
            return (inv, condition);
        }
    }
    let cutoff = PINV_RELATIVE_CUTOFF * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut pinv = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            pinv += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    (pinv, condition)
}

impl BasisSystem {
    pub fn num_basis(&self) -> usize {
        self.space.num_basis()
    }

    pub fn order(&self) -> usize {
        self.space.order()
    }

    pub fn knots(&self) -> &[f64] {
        self.space.knots()
    }

    pub fn grid(&self) -> &WorkingGrid {
        &self.grid
    }

    pub fn domain(&self) -> (f64, f64) {
        self.grid.domain()
    }

    /// `B(τ)`, `L x K`.
    pub fn b_tau(&self) -> &DMatrix<f64> {
        &self.b_tau
    }

    /// Generalized inverse of `B(τ)`, `K x L`.
    pub fn b_tau_inv(&self) -> &DMatrix<f64> {
        &self.b_tau_inv
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            order: self.order(),
            knots: self.knots().to_vec(),
            working_grid: self.grid.points().to_vec(),
            domain: self.domain(),
        }
    }

    /// Evaluation matrix `|t| x K`; errors on points outside the closed domain.
    pub fn evaluate(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        self.space.eval_matrix(t)
    }

    pub fn coefficients_from_values(&self, z_on_tau: &[f64]) -> Result<DVector<f64>> {
        if z_on_tau.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                context: "values on the working grid",
                expected: self.grid.len(),
                actual: z_on_tau.len(),
            });
        }
        Ok(&self.b_tau_inv * DVector::from_column_slice(z_on_tau))
    }

    /// `B⁺ M B⁺ᵀ`, the coefficient-space image of a matrix on the working grid.
    pub fn congruence_to_coefficients(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.grid.len();
        if m.nrows() != l || m.ncols() != l {
            return Err(Error::DimensionMismatch {
                context: "matrix on the working grid",
                expected: l,
                actual: m.nrows().max(m.ncols()),
            });
        }
        Ok(&self.b_tau_inv * m * self.b_tau_inv.transpose())
    }
}

pub fn evaluate_basis(sys: &BasisSystem, t: &[f64]) -> Result<DMatrix<f64>> {
    sys.evaluate(t)
}

pub fn coefficients_from_values(sys: &BasisSystem, z_on_tau: &[f64]) -> Result<DVector<f64>> {
    sys.coefficients_from_values(z_on_tau)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn paper_basis() -> BasisSystem {
        let pooled = linspace(0.0, FRAC_PI_2, 40);
        let grid = select_working_grid(&pooled, 20).unwrap();
        build_basis(grid, 20).unwrap()
    }

    #[test]
    fn working_grid_on_uniform_pool_is_equally_spaced() {
        let pooled = linspace(0.0, FRAC_PI_2, 40);
        let grid = select_working_grid(&pooled, 20).unwrap();
        assert_eq!(grid.len(), 20);
        let step = FRAC_PI_2 / 21.0;
        for (j, &p) in grid.points().iter().enumerate() {
            assert_abs_diff_eq!(p, step * (j + 1) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn working_grid_quantiles_of_integers() {
        // type-7 oracle: h = 99 p, value = 1 + h
        let pooled: Vec<f64> = (1..=100).map(f64::from).collect();
        let grid = select_working_grid(&pooled, 4).unwrap();
        let expected = [20.8, 40.6, 60.4, 80.2];
        for (a, b) in grid.points().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn working_grid_errors() {
        let pooled = [vec![0.3; 5], vec![0.7; 5]].concat();
        assert!(select_working_grid(&pooled, 1).is_err());
        assert!(select_working_grid(&[], 10).is_err());
    }

    #[test]
    fn basis_rows_sum_to_one_and_are_deterministic() {
        let sys = paper_basis();
        assert_eq!(sys.b_tau().shape(), (20, 20));
        for r in 0..20 {
            assert_abs_diff_eq!(sys.b_tau().row(r).sum(), 1.0, epsilon = 1e-12);
        }
        let again = sys.evaluate(sys.grid().points()).unwrap();
        assert_eq!(&again, sys.b_tau());
        assert!(sys.condition_number() < 1e8);
    }

    #[test]
    fn generalized_inverse_identities() {
        let sys = paper_basis();
        let b = sys.b_tau();
        let g = sys.b_tau_inv();
        assert!((b * g * b - b).amax() < 1e-8);
        assert!((g * b * g - g).amax() < 1e-8);
        let eye = DMatrix::<f64>::identity(20, 20);
        assert!((g * b - eye).amax() < 1e-8);
    }

    #[test]
    fn pseudo_inverse_of_singular_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0]);
        let (g, cond) = generalized_inverse(&m);
        assert!(cond > 1e8);
        assert!((&m * &g * &m - &m).amax() < 1e-8);
        assert!((&g * &m * &g - &g).amax() < 1e-8);
    }

    #[test]
    fn rejects_unequal_k_and_small_k() {
        let pooled = linspace(0.0, 1.0, 30);
        let grid = select_working_grid(&pooled, 10).unwrap();
        assert!(build_basis(grid.clone(), 8).is_err());
        let small = WorkingGrid::new(vec![0.2, 0.4, 0.6], (0.0, 1.0)).unwrap();
        assert!(build_basis(small, 3).is_err());
    }

    #[test]
    fn evaluate_at_endpoints_and_outside() {
        let sys = paper_basis();
        let m = sys.evaluate(&[0.0]).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.row(0).sum(), 1.0, epsilon = 1e-12);
        assert!(matches!(sys.evaluate(&[-0.01]), Err(Error::OutOfDomain { .. })));
        assert!(sys.evaluate(&[FRAC_PI_2 + 1e-9]).is_err());
    }

    #[test]
    fn coefficient_round_trips() {
        let sys = paper_basis();
        let zeta0 = DVector::from_fn(20, |i, _| (i as f64 * 0.7).sin() - 0.2);
        let z = sys.b_tau() * &zeta0;
        let zeta = sys.coefficients_from_values(z.as_slice()).unwrap();
        assert!((zeta - zeta0).amax() < 1e-8);

        let zero = sys.coefficients_from_values(&[0.0; 20]).unwrap();
        assert_eq!(zero.amax(), 0.0);

        // constants lie in the spline span: all-ones coefficients reproduce 1
        let ones = sys.coefficients_from_values(&[1.0; 20]).unwrap();
        assert!((sys.b_tau() * &ones).add_scalar(-1.0).amax() < 1e-10);
        assert!(ones.add_scalar(-1.0).amax() < 1e-8);

        assert!(matches!(
            sys.coefficients_from_values(&[0.0; 19]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_at_random_points(ts in proptest::collection::vec(0.0..FRAC_PI_2, 7)) {
            let sys = paper_basis();
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            let m = sys.evaluate(&ts).unwrap();
            prop_assert_eq!(m.shape(), (7, 20));
            for r in 0..7 {
                prop_assert!((m.row(r).sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn affine_functions_round_trip(a in -5.0..5.0f64, b in -5.0..5.0f64, ts in proptest::collection::vec(0.0..FRAC_PI_2, 5)) {
            let sys = paper_basis();
            let z: Vec<f64> = sys.grid().points().iter().map(|t| a + b * t).collect();
            let zeta = sys.coefficients_from_values(&z).unwrap();
            let m = sys.evaluate(&ts).unwrap();
            let back = m * zeta;
            for (v, t) in back.iter().zip(&ts) {
                prop_assert!((v - (a + b * t)).abs() < 1e-8);
            }
        }
    }
}

//! Low-level B-spline machinery on an arbitrary clamped knot vector.
//!
//! Evaluation follows the Cox–de Boor triangular recursion: for a point in
//! knot span `i` only the `order` functions `i - degree ..= i` are nonzero,
//! and they are built up degree by degree from the indicator of the span.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// A spline space described by `order` (degree + 1) and a nondecreasing
/// knot vector whose first and last knots are repeated `order` times.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpace {
    order: usize,
    knots: Vec<f64>,
}

impl SplineSpace {
    pub fn new(order: usize, knots: Vec<f64>) -> Result<Self> {
        if order < 1 {
            return Err(invalid("spline order must be at least 1"));
        }
        if knots.len() < 2 * order {
            return Err(invalid(format!(
                "need at least {} knots for order {order}, got {}",
                2 * order,
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("knot vector must be nondecreasing"));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if !(hi > lo) {
            return Err(invalid("knot vector spans an empty interval"));
        }
        if knots[..order].iter().any(|&k| k != lo) || knots[knots.len() - order..].iter().any(|&k| k != hi) {
            return Err(invalid("boundary knots must have multiplicity equal to the order"));
        }
        // interior multiplicity above `order - 1` would break continuity assumptions
        let mut run = 1;
        for w in knots[order - 1..knots.len() - order + 1].windows(2) {
            if w[1] == w[0] {
                run += 1;
                if run >= order {
                    return Err(invalid("interior knot multiplicity must be below the order"));
                }
            } else {
                run = 1;
            }
        }
        Ok(Self { order, knots })
    }

    /// Clamped knot vector on `[lo, hi]` with the given interior knots.
    pub fn clamped(order: usize, lo: f64, hi: f64, interior: &[f64]) -> Result<Self> {
        let mut knots = Vec::with_capacity(2 * order + interior.len());
        knots.extend(std::iter::repeat(lo).take(order));
        for &k in interior {
            if !(k > lo && k < hi) {
                return Err(invalid(format!("interior knot {k} not strictly inside ({lo}, {hi})")));
            }
            knots.push(k);
        }
        knots.extend(std::iter::repeat(hi).take(order));
        Self::new(order, knots)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if x.is_nan() || x < lo || x > hi {
            return Err(Error::OutOfDomain { value: x, lo, hi });
        }
        Ok(())
    }

    /// Index `i` of the knot span `[knots[i], knots[i+1])` containing `x`;
    /// the right endpoint maps to the last nonempty span.
    fn find_span(&self, x: f64) -> usize {
        let n = self.num_basis();
        let p = self.degree();
        if x >= self.knots[n] {
            return n - 1;
        }
        // first index with knots[idx] > x, minus one
        let upper = self.knots[p..=n].partition_point(|&k| k <= x) + p;
        (upper - 1).clamp(p, n - 1)
    }

    /// Nonzero basis values at `x`: returns the first index and `order` values.
    fn nonzero_basis(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree();
        let span = self.find_span(x);
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        span - p
    }

    /// Nonzero basis derivatives up to `nderiv` at `x`; `ders[d][j]` is the
    /// d-th derivative of basis function `first + j`.
    fn nonzero_derivs(&self, x: f64, nderiv: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree();
        let span = self.find_span(x);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; nderiv + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nderiv.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nderiv.min(p) {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        (span - p, ders)
    }

    /// Dense `|points| x num_basis` evaluation matrix.
    pub fn eval_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.num_basis());
        let mut vals = vec![0.0; self.order];
        for (row, &x) in points.iter().enumerate() {
            self.check_domain(x)?;
            let first = self.nonzero_basis(x, &mut vals);
            for (j, &v) in vals.iter().enumerate() {
                m[(row, first + j)] = v;
            }
        }
        Ok(m)
    }

    /// Dense matrix of the `deriv`-th derivatives of every basis function.
    pub fn eval_deriv_matrix(&self, points: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.num_basis());
        for (row, &x) in points.iter().enumerate() {
            self.check_domain(x)?;
            let (first, ders) = self.nonzero_derivs(x, deriv);
            if deriv < ders.len() {
                for (j, &v) in ders[deriv].iter().enumerate() {
                    m[(row, first + j)] = v;
                }
            }
        }
        Ok(m)
    }

    /// Gram matrix of second derivatives, `Ω[j,k] = ∫ b_j''(t) b_k''(t) dt`.
    ///
    /// Three-point Gauss–Legendre per knot interval, exact up to order 5.
    pub fn second_derivative_penalty(&self) -> DMatrix<f64> {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let k = self.num_basis();
        let mut omega = DMatrix::zeros(k, k);
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, weight) in NODES.iter().zip(WEIGHTS) {
                let x = mid + half * node;
                let (first, ders) = self.nonzero_derivs(x, 2);
                let d2 = &ders[2];
                for i in 0..d2.len() {
                    for j in 0..d2.len() {
                        omega[(first + i, first + j)] += weight * half * d2[i] * d2[j];
                    }
                }
            }
        }
        omega
    }
}

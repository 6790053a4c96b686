//! Bounded-memory posterior summaries: running means plus fixed-size
//! reservoirs for pointwise credible intervals.

use serde::{Deserialize, Serialize};

use crate::basis::quantile_sorted;

/// Default number of draws kept per grid point for interval estimation.
pub const RESERVOIR_CAPACITY: usize = 2_000;

/// Running mean of a vector-valued quantity with a systematic-stride
/// reservoir of whole draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAccumulator {
    width: usize,
    sum: Vec<f64>,
    count: usize,
    stride: usize,
    capacity: usize,
    kept: Vec<f64>,
}

impl PointAccumulator {
    /// `expected_draws` fixes the stride so the reservoir spans the whole run.
    pub fn new(width: usize, expected_draws: usize, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let stride = expected_draws.div_ceil(capacity).max(1);
        let reserve = capacity.min(expected_draws.max(1)) * width;
        Self { width, sum: vec![0.0; width], count: 0, stride, capacity, kept: Vec::with_capacity(reserve) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn kept_draws(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.kept.len() / self.width
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        if self.count % self.stride == 0 && self.kept_draws() < self.capacity {
            self.kept.extend_from_slice(values);
        }
        self.count += 1;
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Pointwise `(lo, hi)` empirical quantiles over the reservoir.
    pub fn interval(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let rows = self.kept_draws();
        let mut lower = Vec::with_capacity(self.width);
        let mut upper = Vec::with_capacity(self.width);
        let mut column = Vec::with_capacity(rows);
        for j in 0..self.width {
            column.clear();
            column.extend((0..rows).map(|r| self.kept[r * self.width + j]));
            column.sort_by(f64::total_cmp);
            if column.is_empty() {
                lower.push(f64::NAN);
                upper.push(f64::NAN);
            } else {
                lower.push(quantile_sorted(&column, lo));
                upper.push(quantile_sorted(&column, hi));
            }
        }
        (lower, upper)
    }

    /// Pool another chain's accumulator into this one.
    pub fn merge(&mut self, other: &PointAccumulator) {
        assert_eq!(self.width, other.width, "merging accumulators of different widths");
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        self.count += other.count;
        self.capacity += other.capacity;
        self.kept.extend_from_slice(&other.kept);
    }

    pub fn retained_bytes(&self) -> usize {
        (self.sum.len() + self.kept.capacity()) * std::mem::size_of::<f64>()
    }
}

/// Running mean only.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(width: usize) -> Self {
        Self { sum: vec![0.0; width], count: 0 }
    }

    pub fn push(&mut self, values: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        self.count += other.count;
    }

    pub fn retained_bytes(&self) -> usize {
        self.sum.len() * std::mem::size_of::<f64>()
    }
}

/// Posterior mean and pointwise 95% interval of a vector quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PointSummary {
    pub fn from_accumulator(acc: &PointAccumulator) -> Self {
        let (lower, upper) = acc.interval(0.025, 0.975);
        Self { mean: acc.mean(), lower, upper }
    }

    pub fn from_draws(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = draws.iter().sum::<f64>() / draws.len().max(1) as f64;
        let (lower, upper) = if sorted.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
        };
        Self { mean: vec![mean], lower: vec![lower], upper: vec![upper] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Index of entry `(i, j)`, `i ≤ j`, in a row-major packed upper triangle.
pub fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Unpack a packed upper triangle into a full symmetric row-major matrix.
pub fn unpack_symmetric(dim: usize, packed: &[f64]) -> Vec<Vec<f64>> {
    (0..dim).map(|i| (0..dim).map(|j| packed[packed_index(dim, i, j)]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_spans_the_run() {
        let mut acc = PointAccumulator::new(1, 10_000, 2_000);
        for k in 0..10_000 {
            acc.push(&[k as f64]);
        }
        assert_eq!(acc.kept_draws(), 2_000);
        assert_eq!(acc.mean(), vec![4999.5]);
        let (lo, hi) = acc.interval(0.025, 0.975);
        assert!((lo[0] - 250.0).abs() < 10.0);
        assert!((hi[0] - 9750.0).abs() < 10.0);
    }

    #[test]
    fn short_runs_keep_everything() {
        let mut acc = PointAccumulator::new(2, 5, 2_000);
        for k in 0..5 {
            acc.push(&[k as f64, -(k as f64)]);
        }
        assert_eq!(acc.kept_draws(), 5);
        let mut other = acc.clone();
        other.merge(&acc);
        assert_eq!(other.count(), 10);
        assert_eq!(other.kept_draws(), 10);
        assert_eq!(other.mean(), acc.mean());
    }

    #[test]
    fn packing_round_trip() {
        let dim = 4;
        let mut seen = vec![false; packed_len(dim)];
        for i in 0..dim {
            for j in i..dim {
                let k = packed_index(dim, i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, packed_index(dim, j, i));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

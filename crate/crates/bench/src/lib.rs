//! Benchmark fixtures.

use babf::pipeline::{prepare, FitConfig, Prepared};
use babf::simulation::{simulate_dataset, GridMode};
use babf::SimDesign;

/// The stationary design with `n` curves, fitted with `k` basis functions.
pub fn fixture(n: usize, k: usize, grid: GridMode) -> Prepared {
    let base = match grid {
        GridMode::Common => SimDesign::stationary_common(1),
        GridMode::RandomUniform => SimDesign::stationary_random(1),
    };
    let design = SimDesign { n, ..base };
    let sim = simulate_dataset(&design).expect("valid design");
    let cfg = FitConfig { working_grid_len: k, domain: Some(design.domain), ..FitConfig::default() };
    prepare(&sim.observed, &cfg).expect("fixture prepares")
}

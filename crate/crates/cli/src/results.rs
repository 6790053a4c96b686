//! The results bundle written by `fit` and read by `diagnose`.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use babf::diagnostics::{Estimates, Scores};
use babf::experiment::Coverage;
use babf::pipeline::FitReport;
use babf::FunctionalDataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::io::{parse_dataset, read_bytes};

pub const RESULTS_FILE: &str = "results.json";
pub const TRACES_FILE: &str = "traces.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";

pub const TRUTH_FILES: [&str; 3] = ["truth.csv", "truth_mean.csv", "truth_cov.csv"];

/// Known truth for simulated data, aligned with the fitted curves and the
/// reference grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub grid: Vec<f64>,
    pub signals: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma_eps2: Option<f64>,
}

impl Truth {
    pub fn estimates(&self) -> Estimates {
        let g = self.grid.len();
        Estimates {
            signals: self.signals.clone(),
            mean: self.mean.clone(),
            covariance: DMatrix::from_fn(g, g, |i, j| self.covariance[i][j]),
            sigma_eps2: self.sigma_eps2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScores {
    pub rmse: Scores,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub converged: bool,
    pub fit: FitReport,
    #[serde(default)]
    pub truth: Option<Truth>,
    #[serde(default)]
    pub scores: Option<SimulationScores>,
}

pub fn load_bundle(dir: &Path) -> Result<ResultBundle> {
    let path = dir.join(RESULTS_FILE);
    let bytes = read_bytes(&path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// The truth directory to use: `explicit`, or the data file's directory when
/// it holds all truth files.
pub fn truth_dir(data: &Path, explicit: Option<&Path>) -> Option<std::path::PathBuf> {
    if let Some(d) = explicit {
        return Some(d.to_path_buf());
    }
    let dir = data.parent().map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })?;
    TRUTH_FILES.iter().all(|f| dir.join(f).is_file()).then(|| dir.to_path_buf())
}

fn read_columns(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let bytes = read_bytes(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(found == header, "{}: expected header `{}`", path.display(), header.join(","));
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed record {}", path.display(), line + 2))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("{}:{}: bad number `{v}`", path.display(), line + 2)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Read the truth files in `dir`, aligning signals with `data` by curve id.
pub fn load_truth(dir: &Path, data: &FunctionalDataset) -> Result<Truth> {
    let truth_path = dir.join(TRUTH_FILES[0]);
    let truth = parse_dataset(&read_bytes(&truth_path)?, &truth_path.display().to_string())?;
    let by_id: HashMap<&str, _> = truth.curves().iter().map(|c| (c.id.as_str(), c)).collect();
    let mut signals = Vec::with_capacity(data.num_curves());
    for c in data.curves() {
        let Some(t) = by_id.get(c.id.as_str()) else { bail!("truth has no curve `{}`", c.id) };
        ensure!(t.t == c.t, "truth grid for curve `{}` differs from the observed grid", c.id);
        signals.push(t.y.clone());
    }
    let mean_rows = read_columns(&dir.join(TRUTH_FILES[1]), &["t", "mean"])?;
    let grid: Vec<f64> = mean_rows.iter().map(|r| r[0]).collect();
    let mean: Vec<f64> = mean_rows.iter().map(|r| r[1]).collect();
    let g = grid.len();
    ensure!(g > 0, "truth mean file is empty");
    let cov_rows = read_columns(&dir.join(TRUTH_FILES[2]), &["s", "t", "cov"])?;
    ensure!(cov_rows.len() == g * g, "truth covariance must have {} rows, found {}", g * g, cov_rows.len());
    let covariance = (0..g).map(|i| (0..g).map(|j| cov_rows[i * g + j][2]).collect()).collect();
    let sigma_eps2 = std::fs::read(dir.join(crate::results::MANIFEST_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .and_then(|m| m.pointer("/config/noise_sd").and_then(|v| v.as_f64()))
        .map(|sd| sd * sd);
    Ok(Truth { grid, signals, mean, covariance, sigma_eps2 })
}

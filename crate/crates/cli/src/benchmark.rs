use std::path::Path;

use anyhow::{bail, Result};
use babf::diagnostics::Scores;
use babf::experiment::{run_replication_with, ReplicationResult};
use babf::pipeline::FitConfig;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{load_versioned, suite_schema, SuiteConfig};
use crate::io::{csv_bytes, fmt, read_bytes, sha256_hex, write_atomic, write_json};
use crate::manifest::RunManifest;

pub const TABLE_FILE: &str = "table.csv";
pub const REPLICATIONS_FILE: &str = "replications.csv";

#[derive(Debug, Clone)]
pub struct Replication {
    pub design: usize,
    pub index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ReplicationResult, String>,
}

/// Run every (design, replication) pair in parallel; results come back in
/// suite order.
pub fn run_suite(suite: &SuiteConfig) -> Vec<Replication> {
    let jobs: Vec<(usize, usize)> =
        (0..suite.designs.len()).flat_map(|d| (0..suite.replications).map(move |r| (d, r))).collect();
    let mut out: Vec<Replication> = jobs
        .into_par_iter()
        .map(|(d, r)| {
            let spec = &suite.designs[d];
            let seed = suite.seed.wrapping_add(r as u64);
            let outcome = spec
                .build(seed)
                .and_then(|design| {
                    let base = FitConfig { stationary: spec.stationary_prior(), ..suite.fit.clone() };
                    Ok(run_replication_with(&design, &base, spec.misspecify_noise_factor)?)
                })
                .map_err(|e| format!("{e:#}"));
            if let Err(e) = &outcome {
                log::warn!("design `{}` replication {r} failed: {e}", spec.name);
            }
            Replication { design: d, index: r, seed, outcome }
        })
        .collect();
    out.sort_by_key(|r| (r.design, r.index));
    out
}

/// Mean and sample standard deviation; the deviation is absent below two values.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (Some(m), sd)
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

const SCORE_COLUMNS: [&str; 4] = ["signal", "mean", "covariance", "sigma_eps2"];

fn score_values(s: &Scores) -> [Option<f64>; 4] {
    [Some(s.signal), Some(s.mean), Some(s.covariance), s.sigma_eps2]
}

pub fn replications_csv(suite: &SuiteConfig, reps: &[Replication]) -> Result<Vec<u8>> {
    let mut header = vec!["design".to_string(), "replication".into(), "seed".into(), "status".into()];
    for m in ["babf", "css"] {
        header.extend(SCORE_COLUMNS.iter().map(|c| format!("{m}_{c}")));
    }
    header.extend(["coverage_signal", "coverage_mean", "coverage_covariance", "gof_median_p", "psrf_max", "converged", "error"].map(String::from));
    let width = header.len();
    let rows = reps.iter().map(|r| {
        let mut row = vec![suite.designs[r.design].name.clone(), r.index.to_string(), r.seed.to_string()];
        match &r.outcome {
            Ok(x) => {
                row.push("ok".into());
                row.extend(score_values(&x.babf).into_iter().map(cell));
                row.extend(score_values(&x.css).into_iter().map(cell));
                let c = &x.babf_coverage;
                row.extend([fmt(c.signal), fmt(c.mean), fmt(c.covariance), fmt(x.gof_median_p), cell(x.psrf_max)]);
                row.push(x.converged.to_string());
                row.push(String::new());
            }
            Err(e) => {
                row.push("failed".into());
                row.resize(width - 1, String::new());
                row.push(e.clone());
            }
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header, rows)
}

/// One row per design and method: mean and standard deviation of each RMSE
/// across successful replications, plus BABF interval coverage. Also returns
/// the names of designs with no successful replication.
pub fn table_csv(suite: &SuiteConfig, reps: &[Replication]) -> Result<(Vec<u8>, Vec<String>)> {
    let mut header = vec!["design".to_string(), "method".into(), "replications".into()];
    for c in SCORE_COLUMNS {
        header.push(format!("{c}_rmse"));
        header.push(format!("{c}_sd"));
    }
    header.extend(["coverage_signal", "coverage_mean", "coverage_covariance", "gof_median_p", "converged"].map(String::from));
    let mut rows = Vec::new();
    let mut empty = Vec::new();
    for (d, spec) in suite.designs.iter().enumerate() {
        let ok: Vec<&ReplicationResult> =
            reps.iter().filter(|r| r.design == d).filter_map(|r| r.outcome.as_ref().ok()).collect();
        if ok.is_empty() {
            empty.push(spec.name.clone());
        }
        for method in ["css", "babf"] {
            let scores: Vec<&Scores> = ok.iter().map(|x| if method == "babf" { &x.babf } else { &x.css }).collect();
            let mut row = vec![spec.name.clone(), method.to_string(), ok.len().to_string()];
            for k in 0..SCORE_COLUMNS.len() {
                let v: Vec<f64> = scores.iter().filter_map(|s| score_values(s)[k]).collect();
                let (m, sd) = mean_sd(&v);
                row.push(cell(m));
                row.push(cell(sd));
            }
            if method == "babf" {
                let avg = |f: &dyn Fn(&ReplicationResult) -> f64| mean_sd(&ok.iter().map(|x| f(x)).collect::<Vec<_>>()).0;
                row.push(cell(avg(&|x| x.babf_coverage.signal)));
                row.push(cell(avg(&|x| x.babf_coverage.mean)));
                row.push(cell(avg(&|x| x.babf_coverage.covariance)));
                row.push(cell(avg(&|x| x.gof_median_p)));
                row.push(ok.iter().filter(|x| x.converged).count().to_string());
            } else {
                row.extend(std::iter::repeat(String::new()).take(5));
            }
            rows.push(row);
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok((csv_bytes(&header, rows)?, empty))
}

pub fn run(config: &Path, out: &Path) -> Result<()> {
    let suite: SuiteConfig = load_versioned(config, &suite_schema())?;
    if suite.designs.is_empty() || suite.replications == 0 {
        bail!("{}: suite needs at least one design and one replication", config.display());
    }
    suite.fit.validate()?;
    for (i, d) in suite.designs.iter().enumerate() {
        d.build(suite.seed)?.validate()?;
        if suite.designs[..i].iter().any(|o| o.name == d.name) {
            bail!("duplicate design name `{}`", d.name);
        }
    }
    log::info!("running {} designs x {} replications", suite.designs.len(), suite.replications);
    let reps = run_suite(&suite);
    let (table, empty) = table_csv(&suite, &reps)?;
    let replications = replications_csv(&suite, &reps)?;
    let mut manifest = RunManifest::new("benchmark", serde_json::to_value(&suite)?);
    manifest.inputs.insert(config.display().to_string(), sha256_hex(&read_bytes(config)?));
    for (name, bytes) in [(TABLE_FILE, &table), (REPLICATIONS_FILE, &replications)] {
        write_atomic(&out.join(name), bytes)?;
        manifest.outputs.insert(name.into(), sha256_hex(bytes));
    }
    let failed = reps.iter().filter(|r| r.outcome.is_err()).count();
    manifest.extra = Some(json!({ "failed_replications": failed }));
    write_json(&out.join("manifest.json"), &manifest)?;
    if !empty.is_empty() {
        bail!("no successful replications for: {}", empty.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_is_absent_for_one_value() {
        assert_eq!(mean_sd(&[2.0]), (Some(2.0), None));
        assert_eq!(mean_sd(&[]), (None, None));
        let (m, sd) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}

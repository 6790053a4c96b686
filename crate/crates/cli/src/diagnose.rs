use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use babf::diagnostics::PsrfReport;

use crate::io::{csv_bytes, fmt, read_bytes, write_atomic};
use crate::results::{load_bundle, ResultBundle, TRACES_FILE};

pub const REPORT_FILE: &str = "report.txt";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const MEAN_FILE: &str = "mean.csv";
pub const COVARIANCE_FILE: &str = "covariance.csv";

fn header_with_truth(base: &[&'static str], truth: bool) -> Vec<&'static str> {
    let mut h = base.to_vec();
    if truth {
        h.push("truth");
    }
    h
}

pub fn signals_csv(b: &ResultBundle) -> Result<Vec<u8>> {
    let truth = b.truth.as_ref();
    let mut rows = Vec::new();
    for (i, c) in b.fit.summary.signals.iter().enumerate() {
        for k in 0..c.mean.len() {
            let t = c.t.get(k).map(|v| fmt(*v)).unwrap_or_default();
            let mut row = vec![c.id.clone(), t, fmt(c.mean[k]), fmt(c.lower[k]), fmt(c.upper[k])];
            if let Some(tr) = truth {
                row.push(fmt(tr.signals[i][k]));
            }
            rows.push(row);
        }
    }
    csv_bytes(&header_with_truth(&["curve_id", "t", "estimate", "lower", "upper"], truth.is_some()), rows)
}

pub fn mean_csv(b: &ResultBundle) -> Result<Vec<u8>> {
    let s = &b.fit.summary;
    let rows = s.grid.iter().enumerate().map(|(j, t)| {
        let mut row = vec![fmt(*t), fmt(s.mean.mean[j]), fmt(s.mean.lower[j]), fmt(s.mean.upper[j])];
        if let Some(tr) = &b.truth {
            row.push(fmt(tr.mean[j]));
        }
        row
    });
    csv_bytes(&header_with_truth(&["t", "estimate", "lower", "upper"], b.truth.is_some()), rows)
}

pub fn covariance_csv(b: &ResultBundle) -> Result<Vec<u8>> {
    let s = &b.fit.summary;
    let c = &s.covariance;
    let g = s.grid.len();
    let rows = (0..g).flat_map(|i| {
        (0..g).map(move |j| {
            let mut row = vec![fmt(s.grid[i]), fmt(s.grid[j]), fmt(c.mean[i][j]), fmt(c.lower[i][j]), fmt(c.upper[i][j])];
            if let Some(tr) = &b.truth {
                row.push(fmt(tr.covariance[i][j]));
            }
            row
        })
    });
    csv_bytes(&header_with_truth(&["s", "t", "estimate", "lower", "upper"], b.truth.is_some()), rows)
}

fn psrf_section(out: &mut String, r: &PsrfReport) {
    let _ = writeln!(out, "PSRF (threshold {}):", r.threshold);
    for e in &r.entries {
        let flag = if e.degenerate {
            "  degenerate"
        } else if e.value > r.threshold {
            "  NOT CONVERGED"
        } else {
            ""
        };
        let _ = writeln!(out, "  {:<18} {:>8.4}{flag}", e.name, e.value);
    }
    if r.pass {
        let _ = writeln!(out, "  all monitored scalars converged");
    } else {
        let _ = writeln!(out, "  WARNING: chains have not converged (max PSRF {:.4})", r.max());
    }
}

/// Per-column mean and standard deviation of a traces file.
fn trace_section(out: &mut String, bytes: &[u8]) -> Result<()> {
    let mut r = csv::Reader::from_reader(bytes);
    let names: Vec<String> = r.headers()?.iter().skip(2).map(str::to_string).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        for (k, v) in rec.iter().skip(2).enumerate() {
            cols[k].push(v.parse().with_context(|| format!("bad trace value `{v}`"))?);
        }
    }
    let _ = writeln!(out, "Traces ({} rows):", cols.first().map_or(0, Vec::len));
    for (name, v) in names.iter().zip(&cols) {
        let (m, sd) = crate::benchmark::mean_sd(v);
        let _ = writeln!(out, "  {:<18} mean {:>12.5}  sd {:>12.5}", name, m.unwrap_or(f64::NAN), sd.unwrap_or(f64::NAN));
    }
    Ok(())
}

pub fn report(b: &ResultBundle, traces: Option<&[u8]>) -> Result<String> {
    let s = &b.fit.summary;
    let mut out = String::new();
    let _ = writeln!(out, "Curves: {}  draws: {}  chains: {}", s.signals.len(), s.draws, s.chains);
    let _ = writeln!(out, "Working grid: {} points", b.fit.basis.working_grid.len());
    let _ = writeln!(
        out,
        "sigma_eps2: {:.5} [{:.5}, {:.5}]\nsigma_s2:   {:.5} [{:.5}, {:.5}]",
        s.sigma_eps2.mean, s.sigma_eps2.lower, s.sigma_eps2.upper, s.sigma_s2.mean, s.sigma_s2.lower, s.sigma_s2.upper
    );
    match &b.fit.psrf {
        Some(r) => psrf_section(&mut out, r),
        None => {
            let _ = writeln!(out, "PSRF: not available (single chain)");
        }
    }
    let g = &b.fit.gof;
    let a = &g.aggregate;
    let _ = writeln!(
        out,
        "Goodness of fit: median p {:.4} (quartiles {:.4}, {:.4}; range {:.4} to {:.4}) over {} draws",
        a.median, a.lower_quartile, a.upper_quartile, a.min, a.max, g.draws
    );
    if g.lack_of_fit {
        let _ = writeln!(out, "  WARNING: lack of fit at level {}", g.level);
    }
    let mut worst: Vec<_> = g.per_curve.iter().collect();
    worst.sort_by(|x, y| x.p_values.median.total_cmp(&y.p_values.median));
    for c in worst.iter().take(3) {
        let _ = writeln!(out, "  lowest curve median p: {} {:.4}", c.id, c.p_values.median);
    }
    if let Some(bytes) = traces {
        trace_section(&mut out, bytes)?;
    }
    if let Some(sc) = &b.scores {
        let r = &sc.rmse;
        let _ = writeln!(out, "RMSE vs truth: signal {:.4}  mean {:.4}  covariance {:.4}", r.signal, r.mean, r.covariance);
        if let Some(v) = r.sigma_eps2 {
            let _ = writeln!(out, "  sigma_eps2 {:.4}", v);
        }
        let c = &sc.coverage;
        let _ = writeln!(out, "Coverage: signal {:.3}  mean {:.3}  covariance {:.3}", c.signal, c.mean, c.covariance);
    }
    Ok(out)
}

pub fn run(results: &Path) -> Result<String> {
    let bundle = load_bundle(results)?;
    let traces_path = results.join(TRACES_FILE);
    let traces = if traces_path.is_file() { Some(read_bytes(&traces_path)?) } else { None };
    let text = report(&bundle, traces.as_deref())?;
    write_atomic(&results.join(SIGNALS_FILE), &signals_csv(&bundle)?)?;
    write_atomic(&results.join(MEAN_FILE), &mean_csv(&bundle)?)?;
    write_atomic(&results.join(COVARIANCE_FILE), &covariance_csv(&bundle)?)?;
    write_atomic(&results.join(REPORT_FILE), text.as_bytes())?;
    Ok(text)
}

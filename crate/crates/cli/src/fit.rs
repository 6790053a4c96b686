use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use babf::diagnostics::rmse_suite;
use babf::experiment::{babf_coverage, babf_estimates};
use babf::pipeline::{fit, FitConfig, FitOutput};
use babf::sampler::ScalarTraces;
use serde_json::json;

use crate::config::{fit_schema, load_versioned};
use crate::io::{csv_bytes, fmt, parse_dataset, read_bytes, sha256_hex, write_atomic, write_json};
use crate::manifest::RunManifest;
use crate::results::{
    load_truth, truth_dir, ResultBundle, SimulationScores, FAILURE_FILE, MANIFEST_FILE, RESULTS_FILE, TRACES_FILE,
};

#[derive(Debug, Clone, Default)]
pub struct FitArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub sweeps: Option<usize>,
    pub burnin: Option<usize>,
    pub traces: bool,
    pub truth: Option<PathBuf>,
}

pub fn effective_config(args: &FitArgs) -> Result<FitConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_versioned(p, &fit_schema())?,
        None => FitConfig::default(),
    };
    let m = &mut cfg.mcmc;
    if let Some(s) = args.seed {
        m.seed = s;
    }
    if let Some(c) = args.chains {
        m.chains = c;
    }
    if let Some(b) = args.burnin {
        m.burn_in = b;
    }
    if let Some(total) = args.sweeps {
        if total <= m.burn_in {
            bail!("--sweeps ({total}) must exceed the burn-in ({})", m.burn_in);
        }
        m.posterior_samples = total - m.burn_in;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn is_sampler_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<babf::Error>(), Some(babf::Error::Sampler { .. } | babf::Error::Factorization { .. }))
    })
}

fn traces_csv(out: &FitOutput) -> Result<Vec<u8>> {
    let mut header = vec!["chain", "draw"];
    header.extend(ScalarTraces::NAMES);
    let rows = out.draws.traces.iter().enumerate().flat_map(|(c, tr)| {
        let cols = tr.monitored();
        (0..tr.len()).map(move |d| {
            let mut row = vec![c.to_string(), d.to_string()];
            row.extend(cols.iter().map(|(_, v)| fmt(v[d])));
            row
        })
    });
    csv_bytes(&header, rows)
}

/// Returns whether the chains converged.
pub fn run(args: &FitArgs) -> Result<bool> {
    let bytes = read_bytes(&args.data)?;
    let data = parse_dataset(&bytes, &args.data.display().to_string())?;
    let mut cfg = effective_config(args)?;
    let truth_dir = truth_dir(&args.data, args.truth.as_deref());
    let mut truth = match &truth_dir {
        Some(d) => Some(load_truth(d, &data).with_context(|| format!("loading truth from {}", d.display()))?),
        None => None,
    };
    if let Some(t) = &truth {
        if cfg.reference_grid.is_none() {
            cfg.reference_grid = Some(t.grid.clone());
        } else if cfg.reference_grid.as_ref() != Some(&t.grid) {
            log::warn!("reference grid differs from the truth grid; scores are skipped");
            truth = None;
        }
    }
    log::info!("fitting {} curves, {} points, {} chains", data.num_curves(), data.total_points(), cfg.mcmc.chains);

    let mut manifest = RunManifest::new("fit", serde_json::to_value(&cfg)?);
    manifest.inputs.insert(args.data.display().to_string(), sha256_hex(&bytes));
    if let Some(p) = &args.config {
        manifest.inputs.insert(p.display().to_string(), sha256_hex(&read_bytes(p)?));
    }
    if let Some(d) = &truth_dir {
        for f in crate::results::TRUTH_FILES {
            let p = d.join(f);
            manifest.inputs.insert(p.display().to_string(), sha256_hex(&read_bytes(&p)?));
        }
    }

    let out = match fit(&data, &cfg) {
        Ok(o) => o,
        Err(e) => {
            let e = anyhow::Error::new(e);
            if is_sampler_failure(&e) {
                let failure = json!({
                    "error": format!("{e:#}"),
                    "config": &manifest.config,
                    "inputs": &manifest.inputs,
                });
                write_json(&args.out.join(FAILURE_FILE), &failure)?;
            }
            return Err(e.context("fit failed"));
        }
    };

    let scores = match &truth {
        Some(t) => {
            let est = t.estimates();
            Some(SimulationScores { rmse: rmse_suite(&babf_estimates(&out), &est)?, coverage: babf_coverage(&out.summary, &est)? })
        }
        None => None,
    };
    let converged = out.converged();
    let bundle = ResultBundle { converged, fit: out.report(), truth, scores };
    let results = write_json(&args.out.join(RESULTS_FILE), &bundle)?;
    manifest.outputs.insert(RESULTS_FILE.into(), sha256_hex(&results));
    if args.traces {
        let bytes = traces_csv(&out)?;
        write_atomic(&args.out.join(TRACES_FILE), &bytes)?;
        manifest.outputs.insert(TRACES_FILE.into(), sha256_hex(&bytes));
    }
    manifest.extra = Some(json!({ "converged": converged, "draws": out.summary.draws }));
    write_json(&args.out.join(MANIFEST_FILE), &manifest)?;
    match &out.psrf {
        Some(r) if !r.pass => log::warn!("PSRF {:.3} exceeds {}", r.max(), r.threshold),
        Some(r) => log::info!("max PSRF {:.3}", r.max()),
        None => log::info!("single chain, PSRF not computed"),
    }
    Ok(converged)
}

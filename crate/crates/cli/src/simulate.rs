use std::path::Path;

use anyhow::Result;
use babf::simulation::{simulate_dataset, SimDesign};

use crate::config::{design_schema, load_versioned};
use crate::io::{csv_bytes, dataset_csv, fmt, read_bytes, sha256_hex, write_atomic, write_json};
use crate::manifest::RunManifest;

pub fn run(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut design: SimDesign = load_versioned(config, &design_schema())?;
    if let Some(s) = seed {
        design.seed = s;
    }
    let sim = simulate_dataset(&design)?;
    let g = &sim.reference_grid;
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("observed.csv", dataset_csv(&sim.observed)?),
        ("truth.csv", dataset_csv(&sim.truth)?),
        ("truth_mean.csv", csv_bytes(&["t", "mean"], g.iter().zip(&sim.true_mean).map(|(t, m)| [fmt(*t), fmt(*m)]))?),
        (
            "truth_cov.csv",
            csv_bytes(
                &["s", "t", "cov"],
                (0..g.len()).flat_map(|i| {
                    let sim = &sim;
                    (0..g.len()).map(move |j| [fmt(g[i]), fmt(g[j]), fmt(sim.true_covariance[(i, j)])])
                }),
            )?,
        ),
    ];
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&design)?);
    manifest.inputs.insert(config.display().to_string(), sha256_hex(&read_bytes(config)?));
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
        manifest.outputs.insert((*name).into(), sha256_hex(bytes));
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} curves to {}", sim.observed.num_curves(), out.display());
    Ok(())
}

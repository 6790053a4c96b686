//! Data files: long-format CSV ingestion, CSV/JSON output, atomic writes.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use babf::{Curve, FunctionalDataset};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const DATA_HEADER: [&str; 3] = ["curve_id", "t", "y"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(bytes)
}

/// Serialize rows to CSV bytes with the given header.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("flushing csv: {e}"))?)
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Parse long-format `curve_id,t,y` records. Curves keep their first-seen
/// order; points within a curve are sorted by `t`.
pub fn parse_dataset(bytes: &[u8], source: &str) -> Result<FunctionalDataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = r.headers().with_context(|| format!("{source}: reading header"))?.clone();
    if header.is_empty() {
        bail!("{source}: file is empty");
    }
    if header.iter().collect::<Vec<_>>() != DATA_HEADER {
        bail!("{source}: expected header `curve_id,t,y`, found `{}`", header.iter().collect::<Vec<_>>().join(","));
    }
    let mut order: Vec<String> = Vec::new();
    let mut points: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{source}: malformed record {}", line + 2))?;
        let id = rec[0].to_string();
        let parse = |k: usize, what: &str| -> Result<f64> {
            let v: f64 = rec[k].parse().with_context(|| format!("{source}:{}: bad {what} `{}`", line + 2, &rec[k]))?;
            if !v.is_finite() {
                bail!("{source}:{}: {what} must be finite", line + 2);
            }
            Ok(v)
        };
        let (t, y) = (parse(1, "t")?, parse(2, "y")?);
        points
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, y));
    }
    if order.is_empty() {
        bail!("{source}: no observations");
    }
    let curves = order
        .into_iter()
        .map(|id| {
            let mut p = points.remove(&id).unwrap_or_default();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (t, y): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            Curve::new(id.clone(), t, y).with_context(|| format!("{source}: curve `{id}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FunctionalDataset::new(curves)?)
}

pub fn dataset_csv(data: &FunctionalDataset) -> Result<Vec<u8>> {
    let rows = data
        .curves()
        .iter()
        .flat_map(|c| c.t.iter().zip(&c.y).map(move |(t, y)| vec![c.id.clone(), fmt(*t), fmt(*y)]));
    csv_bytes(&DATA_HEADER, rows)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_groups_and_sorts() {
        let text = b"curve_id,t,y\nb,0.5,2\na,0.1,1\nb,0.2,3\n";
        let d = parse_dataset(text, "x").unwrap();
        assert_eq!(d.curves()[0].id, "b");
        assert_eq!(d.curves()[0].t, vec![0.2, 0.5]);
        assert_eq!(d.curves()[0].y, vec![3.0, 2.0]);
        let round = parse_dataset(&dataset_csv(&d).unwrap(), "y").unwrap();
        assert_eq!(round, d);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(parse_dataset(b"", "x").is_err());
        assert!(parse_dataset(b"curve_id,t,y\n", "x").is_err());
        assert!(parse_dataset(b"id,t,y\na,0,1\n", "x").is_err());
        assert!(parse_dataset(b"curve_id,t,y\na,zero,1\n", "x").is_err());
        assert!(parse_dataset(b"curve_id,t,y\na,0,1\na,0,2\n", "x").is_err());
    }
}

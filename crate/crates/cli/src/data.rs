//! CSV ingestion.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context};
use proxybounds_core::Sample;

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub proxy1: String,
    pub proxy2: String,
    pub covariates: Vec<String>,
    pub cluster: Option<String>,
}

impl ColumnMap {
    pub fn validate(&self) -> anyhow::Result<()> {
        let roles = [&self.outcome, &self.proxy1, &self.proxy2];
        for (i, a) in roles.iter().enumerate() {
            for b in &roles[i + 1..] {
                if a == b {
                    bail!("column `{a}` is assigned to more than one of outcome/proxy1/proxy2");
                }
            }
            if self.covariates.contains(a) {
                bail!("column `{a}` is used both as a covariate and as outcome or proxy");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub sample: Sample,
    pub rows_read: usize,
    pub dropped_rows: usize,
    /// Covariates that were all ones and so duplicated the constant.
    pub dropped_constant_columns: Vec<String>,
    /// Distinct cluster labels in order of first appearance.
    pub cluster_labels: Option<Vec<String>>,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "." | "NA" | "na" | "NaN" | "nan" | "NAN")
}

pub fn load_csv(path: &Path, map: &ColumnMap) -> anyhow::Result<LoadedData> {
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_csv(file, map).with_context(|| format!("reading {}", path.display()))
}

pub fn read_csv<R: Read>(reader: R, map: &ColumnMap) -> anyhow::Result<LoadedData> {
    map.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| -> anyhow::Result<usize> {
        headers.iter().position(|h| h == name).with_context(|| {
            format!(
                "column `{name}` not found; available: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            )
        })
    };
    let numeric: Vec<usize> = [&map.outcome, &map.proxy1, &map.proxy2]
        .into_iter()
        .chain(&map.covariates)
        .map(|c| index(c))
        .collect::<anyhow::Result<_>>()?;
    let cluster_idx = map.cluster.as_deref().map(index).transpose()?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); numeric.len()];
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut label_order = Vec::new();
    let mut cluster = Vec::new();
    let mut rows_read = 0;
    let mut dropped = 0;
    let mut values = vec![0.0f64; numeric.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        rows_read += 1;
        let row = line + 2;
        let mut missing = false;
        for (slot, &c) in values.iter_mut().zip(&numeric) {
            let field = record.get(c).unwrap_or("");
            if is_missing(field) {
                missing = true;
                break;
            }
            *slot = field.trim().parse().with_context(|| {
                format!(
                    "row {row}, column `{}`: `{field}` is not a number",
                    &headers[c]
                )
            })?;
            if !slot.is_finite() {
                bail!("row {row}, column `{}`: non-finite value", &headers[c]);
            }
        }
        let label = cluster_idx.map(|c| record.get(c).unwrap_or("").trim().to_string());
        if missing || label.as_deref().is_some_and(is_missing) {
            dropped += 1;
            continue;
        }
        for (col, v) in columns.iter_mut().zip(&values) {
            col.push(*v);
        }
        if let Some(label) = label {
            let next = labels.len();
            let id = *labels.entry(label.clone()).or_insert_with(|| {
                label_order.push(label);
                next
            });
            cluster.push(id);
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} of {rows_read} rows with missing values");
    }

    let mut columns = columns.into_iter();
    let y = columns.next().unwrap();
    let z1 = columns.next().unwrap();
    let z2 = columns.next().unwrap();
    let mut covariates = Vec::new();
    let mut dropped_constant_columns = Vec::new();
    for (name, col) in map.covariates.iter().zip(columns) {
        if !col.is_empty() && col.iter().all(|&v| v == 1.0) {
            log::info!("covariate `{name}` is the constant; not duplicated");
            dropped_constant_columns.push(name.clone());
        } else {
            covariates.push(col);
        }
    }
    let sample = Sample::from_columns(y, &covariates, z1, z2, cluster_idx.map(|_| cluster))?;
    Ok(LoadedData {
        sample,
        rows_read,
        dropped_rows: dropped,
        dropped_constant_columns,
        cluster_labels: cluster_idx.map(|_| label_order),
    })
}

/// Writes `(y, z1, z2, w1..wJ)` with full round-trip precision.
pub fn write_sample_csv(path: &Path, s: &Sample) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let j = s.covariate_count();
    let mut header = vec!["y".to_string(), "z1".to_string(), "z2".to_string()];
    header.extend((1..=j).map(|k| format!("w{k}")));
    if s.cluster().is_some() {
        header.push("cluster".into());
    }
    w.write_record(&header)?;
    for i in 0..s.n() {
        let mut rec = vec![
            s.y()[i].to_string(),
            s.z1()[i].to_string(),
            s.z2()[i].to_string(),
        ];
        rec.extend((1..=j).map(|k| s.w()[(i, k)].to_string()));
        if let Some(c) = s.cluster() {
            rec.push(format!("g{}", c[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

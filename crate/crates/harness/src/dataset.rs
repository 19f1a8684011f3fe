//! CSV regression datasets: numeric columns under a header row.

use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rand::seq::index::sample;

use nystrom_krr::rng::rng_from_seed;
use nystrom_krr::Points;

use crate::error::{DataError, Result};

pub const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub features: Points,
    pub targets: DVector<f64>,
    /// Constant feature columns removed during standardization.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub target: String,
    /// All remaining columns when `None`.
    pub features: Option<Vec<String>>,
    /// Zero-mean unit-variance features and a centered target.
    pub standardize: bool,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c == "?"
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let shown = path.display().to_string();
    let parse_err = |reason: String| DataError::Parse {
        path: shown.clone(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let target = col(&schema.target)?;
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| col(n)).collect::<std::result::Result<_, _>>()?,
        None => (0..header.len()).filter(|&c| c != target).collect(),
    };
    if feature_cols.is_empty() {
        return Err(DataError::NoFeatures.into());
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_cols.len()];
    let mut y = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let cell = |c: usize| -> std::result::Result<f64, DataError> {
            let raw = rec.get(c).unwrap_or("");
            if is_missing(raw) {
                return Err(DataError::Missing {
                    column: header[c].clone(),
                    row: row + 1,
                });
            }
            raw.parse().map_err(|_| DataError::NonNumeric {
                column: header[c].clone(),
                row: row + 1,
                value: raw.to_string(),
            })
        };
        y.push(cell(target)?);
        for (j, &c) in feature_cols.iter().enumerate() {
            columns[j].push(cell(c)?);
        }
    }
    let n = y.len();
    if n < MIN_ROWS {
        return Err(DataError::TooFewRows(n).into());
    }
    let mut names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let mut dropped = Vec::new();
    if schema.standardize {
        let mut kept_cols = Vec::new();
        let mut kept_names = Vec::new();
        for (mut c, name) in columns.into_iter().zip(names) {
            let mean = c.iter().sum::<f64>() / n as f64;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd == 0.0 || !sd.is_finite() {
                warn!("dropping constant feature column {name:?}");
                dropped.push(name);
                continue;
            }
            for v in &mut c {
                *v = (*v - mean) / sd;
            }
            kept_cols.push(c);
            kept_names.push(name);
        }
        if kept_cols.is_empty() {
            return Err(DataError::NoFeatures.into());
        }
        columns = kept_cols;
        names = kept_names;
        let my = y.iter().sum::<f64>() / n as f64;
        for v in &mut y {
            *v -= my;
        }
    }
    let d = columns.len();
    let flat: Vec<f64> = (0..n).flat_map(|i| columns.iter().map(move |c| c[i])).collect();
    Ok(Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        feature_names: names,
        features: Points::from_flat(flat, d)?,
        targets: DVector::from_vec(y),
        dropped,
    })
}

/// Header `features..., target` and one row per point, shortest round-trip
/// float formatting.
pub fn write_dataset(data: &Dataset, target_name: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.feature_names.clone();
    header.push(target_name.to_string());
    w.write_record(&header)?;
    for (i, x) in data.features.rows().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{:e}", data.targets[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features.select(indices),
            targets: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.targets[i])),
            dropped: self.dropped.clone(),
        }
    }

    /// Uniform subsample of `max_rows` rows (original order kept) when larger.
    pub fn cap_rows(self, max_rows: usize, seed: u64) -> Dataset {
        if self.len() <= max_rows {
            return self;
        }
        let mut idx = sample(&mut rng_from_seed(seed), self.len(), max_rows).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }
}

//! Tabular datasets read from CSV.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SdoreError};
use crate::training::LabeledSet;

/// Column layout of the housing table used by the `csv_selection` experiment.
pub const HOUSING_COLUMNS: [&str; 9] = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
    "MedHouseVal",
];

pub const HOUSING_TARGET: &str = "MedHouseVal";

#[derive(Clone, Debug, PartialEq)]
pub struct CsvDataset {
    pub labeled: LabeledSet,
    /// One name per column of `labeled.x`; appended noise columns are `noise_1`, `noise_2`, ...
    pub feature_names: Vec<String>,
    /// Number of leading columns read from the file.
    pub n_base_features: usize,
}

fn parse_err(message: String) -> SdoreError {
    SdoreError::Parse {
        section: "csv dataset".into(),
        message,
    }
}

/// Reads a headed CSV, standardizes every feature column, and appends
/// `n_noise_features` columns of U[0, 1] noise drawn from `noise_seed`.
///
/// Standardization uses the population variance, so each base column ends
/// with mean 0 and mean square 1. The target column is left as read.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    target_column: &str,
    n_noise_features: usize,
    noise_seed: u64,
) -> Result<CsvDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SdoreError::io(path, e))?;
    parse_csv_dataset(&text, target_column, n_noise_features, noise_seed)
}

pub fn parse_csv_dataset(
    text: &str,
    target_column: &str,
    n_noise_features: usize,
    noise_seed: u64,
) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(format!("cannot read header row: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(parse_err("file is empty (no header row)".into()));
    }
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| parse_err(format!("target column `{target_column}` not found in header {headers:?}")))?;

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!(
                    "line {line}, column {} (`{}`): `{cell}` is not a number",
                    c + 1,
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(parse_err(format!(
                    "line {line}, column {} (`{}`): value is not finite",
                    c + 1,
                    headers[c]
                )));
            }
            if c == target {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(parse_err("file has a header but no data rows".into()));
    }

    let n = features.len();
    let base = headers.len() - 1;
    let d = base + n_noise_features;
    let mut x = Array2::zeros((n, d));
    for (i, row) in features.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            x[[i, k]] = *v;
        }
    }
    for k in 0..base {
        let mut col = x.column_mut(k);
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if var == 0.0 {
            return Err(parse_err(format!("column `{}` is constant", feature_name(&headers, target, k))));
        }
        let sd = var.sqrt();
        col.mapv_inplace(|v| v / sd);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for i in 0..n {
        for k in base..d {
            x[[i, k]] = rng.gen::<f64>();
        }
    }

    let mut names: Vec<String> = (0..base).map(|k| feature_name(&headers, target, k)).collect();
    names.extend((1..=n_noise_features).map(|j| format!("noise_{j}")));
    Ok(CsvDataset {
        labeled: LabeledSet::new(x, Array1::from(y))?,
        feature_names: names,
        n_base_features: base,
    })
}

fn feature_name(headers: &[String], target: usize, k: usize) -> String {
    let idx = if k < target { k } else { k + 1 };
    headers[idx].clone()
}

/// Synthetic stand-in with the housing schema.
///
/// The response depends on income, occupancy and location only, so a
/// selection method should rank `MedInc`, `AveOccup`, `Latitude` and
/// `Longitude` above the rest.
pub fn synthetic_housing_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).expect("valid normal");
    let mut out = HOUSING_COLUMNS.join(",");
    out.push('\n');
    for _ in 0..rows {
        let inc: f64 = rng.gen_range(0.5..15.0);
        let age: f64 = rng.gen_range(1.0f64..52.0).round();
        let rooms: f64 = rng.gen_range(2.0..9.0);
        let beds: f64 = rng.gen_range(0.8..1.4);
        let pop: f64 = rng.gen_range(50.0f64..5000.0).round();
        let occ: f64 = rng.gen_range(1.5..5.0);
        let lat: f64 = rng.gen_range(32.5..42.0);
        let lon: f64 = rng.gen_range(-124.3..-114.3);
        let coast = (-(lon + 122.0).powi(2) / 4.0).exp();
        let value = 0.45 * inc - 0.35 * (occ - 3.0) + 1.2 * coast - 0.08 * (lat - 36.0) + noise.sample(&mut rng);
        let value = value.clamp(0.15, 5.0);
        out.push_str(&format!(
            "{inc:.4},{age},{rooms:.4},{beds:.4},{pop},{occ:.4},{lat:.2},{lon:.2},{value:.5}\n"
        ));
    }
    out
}

//! Dataset CSV reading and writing.
//!
//! Layout: a header row with a `status` column (0 = censored, 1 = event),
//! exactly one of `time` (raw positive time, log-transformed on load) or
//! `logtime` (taken verbatim), and every other column a covariate, in file
//! order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CsvError, Result};
use crate::survival_data::SurvivalDataset;

#[derive(Clone, Copy)]
enum TimeColumn {
    Raw(usize),
    Log(usize),
}

pub fn parse_dataset_csv(path: impl AsRef<Path>) -> Result<SurvivalDataset> {
    parse_dataset_reader(File::open(path)?)
}

pub fn parse_dataset_reader<R: Read>(reader: R) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(CsvError::from)?
        .iter()
        .map(str::to_string)
        .collect();

    let find = |name: &str| headers.iter().position(|h| h == name);
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(CsvError::DuplicateColumn(h.clone()).into());
        }
    }
    let time_col = match (find("time"), find("logtime")) {
        (Some(_), Some(_)) => return Err(CsvError::AmbiguousTime.into()),
        (Some(i), None) => TimeColumn::Raw(i),
        (None, Some(i)) => TimeColumn::Log(i),
        (None, None) => return Err(CsvError::MissingColumn("time").into()),
    };
    let status_col = find("status").ok_or(CsvError::MissingColumn("status"))?;
    let time_idx = match time_col {
        TimeColumn::Raw(i) | TimeColumn::Log(i) => i,
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != time_idx && i != status_col)
        .collect();

    let mut y = Vec::new();
    let mut event = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(CsvError::from)?;
        if rec.len() != headers.len() {
            return Err(CsvError::RaggedRow {
                row,
                expected: headers.len(),
                found: rec.len(),
            }
            .into());
        }
        let number = |col: usize| -> std::result::Result<f64, CsvError> {
            let raw = &rec[col];
            let v: f64 = raw.parse().map_err(|_| CsvError::NonNumeric {
                row,
                column: headers[col].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite {
                    row,
                    column: headers[col].clone(),
                    value: raw.to_string(),
                });
            }
            Ok(v)
        };

        let t = number(time_idx)?;
        y.push(match time_col {
            TimeColumn::Raw(_) if t <= 0.0 => {
                return Err(CsvError::NonPositiveTime {
                    row,
                    column: headers[time_idx].clone(),
                    value: rec[time_idx].to_string(),
                }
                .into())
            }
            TimeColumn::Raw(_) => t.ln(),
            TimeColumn::Log(_) => t,
        });

        let status_raw = &rec[status_col];
        event.push(match status_raw.parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            _ => {
                return Err(CsvError::InvalidStatus {
                    row,
                    column: headers[status_col].clone(),
                    value: status_raw.to_string(),
                }
                .into())
            }
        });

        for &c in &feature_cols {
            values.push(number(c)?);
        }
    }

    let n = y.len();
    let x = DMatrix::from_row_slice(n, feature_cols.len(), &values);
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    SurvivalDataset::new(y, event, x, Some(names))
}

/// Writes `logtime,status,<features...>` with round-trip float formatting.
pub fn write_dataset_csv<W: Write>(dataset: &SurvivalDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["logtime".to_string(), "status".to_string()];
    header.extend((0..dataset.p()).map(|j| dataset.feature_name(j)));
    w.write_record(&header).map_err(CsvError::from)?;
    let x = dataset.x();
    for i in 0..dataset.n() {
        let mut rec = Vec::with_capacity(dataset.p() + 2);
        rec.push(dataset.y()[i].to_string());
        rec.push(if dataset.events()[i] { "1" } else { "0" }.to_string());
        rec.extend((0..dataset.p()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec).map_err(CsvError::from)?;
    }
    w.flush()?;
    Ok(())
}

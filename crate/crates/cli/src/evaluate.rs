//! `evaluate`: predictions CSV plus actual labels to a metrics report.

use std::path::Path;

use log::warn;
use serde::Serialize;

use mnistgen_core::eval::{compute_metrics, confusion};
use mnistgen_core::export::read_idx_labels;
use mnistgen_core::{Error, Metrics, Result};

#[derive(Debug, Serialize)]
pub struct Report {
    pub count: usize,
    pub classes: usize,
    pub confusion: Vec<Vec<u64>>,
    pub metrics: Metrics,
}

struct Columns {
    actual: Option<Vec<usize>>,
    predicted: Vec<usize>,
}

fn label(field: &str, row: usize, file: &Path) -> Result<usize> {
    field.trim().parse().map_err(|_| {
        Error::Dataset(format!(
            "{} row {row}: {field:?} is not a class index",
            file.display()
        ))
    })
}

/// Reads `predicted` and optional `actual` columns. Without a header row, one
/// column is `predicted` and two are `actual,predicted`.
fn read_csv(path: &Path) -> Result<Columns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    let Some(first) = rows.first() else {
        return Err(Error::Dataset(format!("{} is empty", path.display())));
    };
    let headed = first.iter().any(|f| f.parse::<usize>().is_err());
    let (actual_col, predicted_col, body) = if headed {
        let find = |name: &str| first.iter().position(|f| f.eq_ignore_ascii_case(name));
        let p = find("predicted").ok_or_else(|| {
            Error::Dataset(format!(
                "{} has a header but no `predicted` column",
                path.display()
            ))
        })?;
        (find("actual"), p, &rows[1..])
    } else {
        match first.len() {
            1 => (None, 0, &rows[..]),
            2 => (Some(0), 1, &rows[..]),
            n => {
                return Err(Error::Dataset(format!(
                    "{}: {n} columns need a header row",
                    path.display()
                )))
            }
        }
    };
    let offset = usize::from(headed) + 1;
    let column = |c: usize| -> Result<Vec<usize>> {
        body.iter()
            .enumerate()
            .map(|(i, r)| label(r.get(c).unwrap_or(""), i + offset, path))
            .collect()
    };
    Ok(Columns {
        actual: actual_col.map(column).transpose()?,
        predicted: column(predicted_col)?,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    }
}

pub fn run(predictions: &Path, labels: Option<&Path>, classes: Option<usize>) -> Result<Report> {
    let cols = read_csv(predictions)?;
    let actual = match labels {
        Some(p) => {
            if cols.actual.is_some() {
                warn!(
                    "using labels from {} and ignoring the CSV actual column",
                    p.display()
                );
            }
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            read_idx_labels(&bytes, &p.display().to_string())?
                .into_iter()
                .map(usize::from)
                .collect()
        }
        None => cols.actual.ok_or_else(|| {
            Error::Dataset("pass --labels or add an `actual` column to the CSV".into())
        })?,
    };
    if actual.len() != cols.predicted.len() {
        return Err(Error::Dataset(format!(
            "{} predictions but {} labels",
            cols.predicted.len(),
            actual.len()
        )));
    }
    let largest = actual
        .iter()
        .chain(&cols.predicted)
        .max()
        .copied()
        .unwrap_or(0);
    let classes = classes.unwrap_or(largest + 1);
    let cm = confusion(&actual, &cols.predicted, classes)?;
    Ok(Report {
        count: actual.len(),
        classes,
        confusion: cm.rows(),
        metrics: compute_metrics(&cm)?,
    })
}

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// How to read a CSV file: which column holds the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Class count when it exceeds the largest integer label in the file.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>) -> Self {
        CsvSchema {
            label_column: label_column.into(),
            num_classes: None,
        }
    }
}

/// Reads a comma-separated file with a header row.
///
/// Integer labels are used as class indices directly. Any other label
/// strings are mapped to indices in order of first appearance and the
/// mapping is kept in [`Dataset::label_names`].
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let label_idx = header
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| Error::Parse {
            row: 0,
            msg: format!("label column {:?} not found in header", schema.label_column),
        })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let width = header.len();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric value {field:?} in column {:?}", &header[j]),
            })?;
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse {
            row: 1,
            msg: "file has no data rows".into(),
        });
    }

    let n = raw_labels.len();
    let features = Array2::from_shape_vec((n, feature_names.len()), values).expect("row widths were checked");

    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|s| s.parse().ok()).collect();
    let (labels, label_names, observed) = match numeric {
        Some(labels) => {
            let max = labels.iter().copied().max().unwrap_or(0);
            (labels, None, max + 1)
        }
        None => {
            let mut names: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let labels = raw_labels
                .into_iter()
                .map(|s| {
                    *index.entry(s.clone()).or_insert_with(|| {
                        names.push(s);
                        names.len() - 1
                    })
                })
                .collect();
            let c = names.len();
            (labels, Some(names), c)
        }
    };
    let num_classes = match schema.num_classes {
        Some(c) if c < observed => {
            return Err(Error::Config(format!(
                "schema declares {c} classes but the file implies at least {observed}"
            )))
        }
        Some(c) => c,
        None => observed,
    };

    let ds = Dataset {
        features,
        labels,
        num_classes,
        feature_names,
        label_names,
        feature_scale: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `dataset` with its feature names as header and the label last.
pub fn save_csv(path: impl AsRef<Path>, dataset: &Dataset, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    let werr = |e: csv::Error| Error::io(path, e.into());
    writer.write_record(&header).map_err(werr)?;
    for (row, &y) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(match &dataset.label_names {
            Some(names) => names[y].clone(),
            None => y.to_string(),
        });
        writer.write_record(&fields).map_err(werr)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

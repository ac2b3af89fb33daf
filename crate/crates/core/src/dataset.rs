//! Labelled feature matrices and their CSV form.
//!
//! CSV files carry a header row, one float column per feature and a final
//! integer class-label column.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {detail}")]
    BadRow { row: usize, detail: String },
    #[error("dataset has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        let n = features.first().map_or(0, Vec::len);
        Self {
            feature_names: (0..n).map(|i| format!("x{i}")).collect(),
            features,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn check_features(&self, expected: usize) -> Result<(), DatasetError> {
        if self.n_features() != expected {
            return Err(DatasetError::FeatureCount {
                expected,
                found: self.n_features(),
            });
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(DatasetError::BadRow {
                row: 0,
                detail: "need at least one feature column and a label column".into(),
            });
        }
        let n_features = headers.len() - 1;
        let feature_names = headers
            .iter()
            .take(n_features)
            .map(str::to_string)
            .collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let mut values = Vec::with_capacity(n_features);
            for field in record.iter().take(n_features) {
                let v: f64 = field.trim().parse().map_err(|_| DatasetError::BadRow {
                    row,
                    detail: format!("`{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::BadRow {
                        row,
                        detail: format!("non-finite feature `{field}`"),
                    });
                }
                values.push(v);
            }
            let label_field = record.get(n_features).unwrap_or_default().trim();
            let label = label_field.parse().map_err(|_| DatasetError::BadRow {
                row,
                detail: format!("label `{label_field}` is not a class index"),
            })?;
            features.push(values);
            labels.push(label);
        }
        Ok(Self {
            feature_names,
            features,
            labels,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        wtr.write_record(&header)?;
        for (row, label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(vec![vec![0.1, -2.5], vec![3.0, 1e-9]], vec![0, 1]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(Dataset::read_csv("a,label\nfoo,1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("a,label\n1.0,-1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("a,label\nNaN,0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("label\n1\n".as_bytes()).is_err());
    }
}

//! Labelled feature matrices and their CSV file format.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::{FeatureSet, FEATURE_NAMES};
use crate::model::{parse_severity, GeoPoint, SeverityLevel};

pub const LABEL_COLUMN: &str = "severity";
/// Optional side column; not a model feature.
pub const WEEKEND_COLUMN: &str = "weekend";
pub const LAT_COLUMN: &str = "lat";
pub const LON_COLUMN: &str = "lon";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected {expected} features, got {got}")]
    Shape { row: usize, expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("row {row}: {message}")]
    BadValue { row: usize, message: String },
    #[error("header has no {LABEL_COLUMN} column")]
    MissingLabelColumn,
}

/// Rows of features with one severity label each. Missing values are NaN.
/// `weekend` travels with each row for context bucketing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<SeverityLevel>,
    pub weekend: Vec<bool>,
    /// Crash location per row; `None` for synthetic rows or unknown.
    pub locations: Vec<Option<GeoPoint>>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<SeverityLevel>) -> Result<Self, DatasetError> {
        if rows.len() != labels.len() {
            return Err(DatasetError::LabelCount { rows: rows.len(), labels: labels.len() });
        }
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != feature_names.len()) {
            return Err(DatasetError::Shape { row, expected: feature_names.len(), got: r.len() });
        }
        let weekend = vec![false; rows.len()];
        let locations = vec![None; rows.len()];
        Ok(Dataset { feature_names, rows, labels, weekend, locations })
    }

    pub fn with_weekend(mut self, weekend: Vec<bool>) -> Result<Self, DatasetError> {
        if weekend.len() != self.rows.len() {
            return Err(DatasetError::LabelCount { rows: self.rows.len(), labels: weekend.len() });
        }
        self.weekend = weekend;
        Ok(self)
    }

    pub fn with_locations(mut self, locations: Vec<Option<GeoPoint>>) -> Result<Self, DatasetError> {
        if locations.len() != self.rows.len() {
            return Err(DatasetError::LabelCount { rows: self.rows.len(), labels: locations.len() });
        }
        self.locations = locations;
        Ok(self)
    }

    pub fn push(&mut self, row: Vec<f64>, label: SeverityLevel, weekend: bool) {
        self.rows.push(row);
        self.labels.push(label);
        self.weekend.push(weekend);
        self.locations.push(None);
    }

    /// Every row's location, if all are known.
    pub fn all_locations(&self) -> Option<Vec<GeoPoint>> {
        self.locations.iter().copied().collect()
    }

    pub fn from_feature_set(set: &FeatureSet) -> Self {
        Dataset {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows: set.vectors.iter().map(|v| v.to_array().to_vec()).collect(),
            labels: set.labels.clone(),
            weekend: set.weekend.clone(),
            locations: set.locations.iter().copied().map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            weekend: indices.iter().map(|&i| self.weekend[i]).collect(),
            locations: indices.iter().map(|&i| self.locations[i]).collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let label_col = header.iter().position(|h| h == LABEL_COLUMN).ok_or(DatasetError::MissingLabelColumn)?;
        let weekend_col = header.iter().position(|h| h == WEEKEND_COLUMN);
        let lat_col = header.iter().position(|h| h == LAT_COLUMN);
        let lon_col = header.iter().position(|h| h == LON_COLUMN);
        let extra = |i: usize| i == label_col || Some(i) == weekend_col || Some(i) == lat_col || Some(i) == lon_col;
        let feature_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| !extra(*i))
            .map(|(_, h)| h.to_string())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut weekend = Vec::new();
        let mut locations = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row_no = i + 2;
            let bad = |message: String| DatasetError::BadValue { row: row_no, message };
            let mut row = Vec::with_capacity(feature_names.len());
            let coord = |c: Option<usize>| -> Result<Option<f64>, DatasetError> {
                match c.and_then(|c| rec.get(c)).map(str::trim) {
                    None | Some("") => Ok(None),
                    Some(v) => v.parse().map(Some).map_err(|_| bad(format!("coordinate {v:?}"))),
                }
            };
            locations.push(match (coord(lat_col)?, coord(lon_col)?) {
                (Some(a), Some(b)) => Some(GeoPoint::new(a, b).map_err(|e| bad(e.to_string()))?),
                _ => None,
            });
            for (j, field) in rec.iter().enumerate() {
                if Some(j) == lat_col || Some(j) == lon_col {
                    continue;
                }
                if j == label_col {
                    let code: i64 = field.trim().parse().map_err(|_| bad(format!("severity {field:?}")))?;
                    labels.push(parse_severity(code).map_err(|e| bad(e.to_string()))?);
                } else if Some(j) == weekend_col {
                    weekend.push(match field.trim() {
                        "1" | "true" => true,
                        "0" | "false" | "" => false,
                        other => return Err(bad(format!("weekend {other:?}"))),
                    });
                } else if field.trim().is_empty() {
                    row.push(f64::NAN);
                } else {
                    row.push(field.trim().parse().map_err(|_| bad(format!("value {field:?}")))?);
                }
            }
            if row.len() != feature_names.len() {
                return Err(DatasetError::Shape { row: row_no, expected: feature_names.len(), got: row.len() });
            }
            rows.push(row);
        }
        let data = Dataset::new(feature_names, rows, labels)?.with_locations(locations)?;
        match weekend_col {
            Some(_) => data.with_weekend(weekend),
            None => Ok(data),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(LABEL_COLUMN);
        header.push(WEEKEND_COLUMN);
        let located = self.locations.iter().any(Option::is_some);
        if located {
            header.extend([LAT_COLUMN, LON_COLUMN]);
        }
        wtr.write_record(&header)?;
        for (((row, label), weekend), loc) in self.rows.iter().zip(&self.labels).zip(&self.weekend).zip(&self.locations) {
            let mut fields: Vec<String> =
                row.iter().map(|v| if v.is_nan() { String::new() } else { format!("{v:?}") }).collect();
            fields.push(label.code().to_string());
            fields.push(u8::from(*weekend).to_string());
            if located {
                fields.push(loc.map_or(String::new(), |p| format!("{:?}", p.lat())));
                fields.push(loc.map_or(String::new(), |p| format!("{:?}", p.lon())));
            }
            wtr.write_record(&fields)?;
        }
        wtr.flush().map_err(|e| DatasetError::Io { path: "<writer>".into(), source: e })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let file =
            std::fs::File::open(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), source: e })?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), source: e })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_keeps_nan_and_bits() {
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.1 + 0.2, f64::NAN], vec![-1e-300, 3.0]],
            vec![SeverityLevel::Fatal, SeverityLevel::Minor],
        )
        .unwrap()
        .with_weekend(vec![true, false])
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.weekend, d.weekend);
        assert_eq!(back.rows[0][0].to_bits(), d.rows[0][0].to_bits());
        assert!(back.rows[0][1].is_nan());
        assert_eq!(back.rows[1], d.rows[1]);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            Dataset::new(vec!["a".into()], vec![vec![1.0, 2.0]], vec![SeverityLevel::Minor]),
            Err(DatasetError::Shape { .. })
        ));
        assert!(matches!(Dataset::read_csv("a,b\n1,2\n".as_bytes()), Err(DatasetError::MissingLabelColumn)));
        assert!(matches!(Dataset::read_csv("a,severity\n1,7\n".as_bytes()), Err(DatasetError::BadValue { .. })));
    }
}

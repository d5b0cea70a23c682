//! Scoring, leaderboard percentiles and run reports.

mod metrics;
mod percentile;
mod report;

use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;

pub use metrics::{score, score_with};
pub use percentile::percentile;
pub use report::{build_report, RunArtifacts, RunReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("table has no rows")]
    Empty,
    #[error("table has no value columns")]
    NoColumns,
    #[error("column `{column}` has {found} values for {expected} ids")]
    Ragged {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("ids differ between truth and predictions: {detail}")]
    IdMismatch { detail: String },
    #[error("{metric} needs {expected} column(s), got {found}")]
    ColumnCount {
        metric: String,
        expected: String,
        found: usize,
    },
    #[error("{metric}: {reason}")]
    Undefined { metric: String, reason: String },
    #[error("non-finite value in column `{column}` for id `{id}`")]
    NonFinite { column: String, id: String },
    #[error("leaderboard is empty")]
    EmptyLeaderboard,
    #[error("{source_name}: {message}")]
    Csv {
        source_name: String,
        message: String,
    },
}

/// Id column plus named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub ids: Vec<String>,
    pub columns: IndexMap<String, Vec<f64>>,
}

impl PredictionTable {
    pub fn new(ids: Vec<String>, columns: IndexMap<String, Vec<f64>>) -> Result<Self, MetricError> {
        for (name, values) in &columns {
            if values.len() != ids.len() {
                return Err(MetricError::Ragged {
                    column: name.clone(),
                    expected: ids.len(),
                    found: values.len(),
                });
            }
        }
        Ok(PredictionTable { ids, columns })
    }

    pub fn single(ids: Vec<String>, name: &str, values: Vec<f64>) -> Result<Self, MetricError> {
        Self::new(ids, IndexMap::from([(name.to_string(), values)]))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row `i` across all value columns.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.values().map(|c| c[i]).collect()
    }

    /// Reads a CSV with a header row. The id column is `id_column` when given,
    /// otherwise the first column; every other column must be numeric.
    pub fn from_reader<R: Read>(
        reader: R,
        id_column: Option<&str>,
        source_name: &str,
    ) -> Result<Self, MetricError> {
        let err = |message: String| MetricError::Csv {
            source_name: source_name.to_string(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        if headers.is_empty() {
            return Err(err("missing header row".into()));
        }
        let id_idx = match id_column {
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| err(format!("no id column `{name}`")))?,
            None => 0,
        };
        let mut ids = Vec::new();
        let mut columns: IndexMap<String, Vec<f64>> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_idx)
            .map(|(_, h)| (h.to_string(), Vec::new()))
            .collect();
        if columns.len() + 1 != headers.len() {
            return Err(err("duplicate column names".into()));
        }
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| err(e.to_string()))?;
            for (i, field) in record.iter().enumerate() {
                if i == id_idx {
                    ids.push(field.to_string());
                    continue;
                }
                let value: f64 = field.parse().map_err(|_| {
                    err(format!(
                        "row {}: `{field}` in column `{}` is not a number",
                        line + 2,
                        &headers[i]
                    ))
                })?;
                columns[&headers[i]].push(value);
            }
        }
        Self::new(ids, columns)
    }

    pub fn read_csv(path: &Path, id_column: Option<&str>) -> Result<Self, MetricError> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| MetricError::Csv {
            source_name: name.clone(),
            message: e.to_string(),
        })?;
        Self::from_reader(file, id_column, &name)
    }

    pub fn to_csv(&self, id_column: &str) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once(id_column)
            .chain(self.columns.keys().map(String::as_str))
            .collect();
        wtr.write_record(&header).expect("in-memory write");
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.columns.values().map(|c| format!("{}", c[i])));
            wtr.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_named_id_column() {
        let text = "a,id,b\n1,r1,2.5\n3,r2,-1\n";
        let t = PredictionTable::from_reader(text.as_bytes(), Some("id"), "mem").unwrap();
        assert_eq!(t.ids, ["r1", "r2"]);
        assert_eq!(
            t.columns.keys().map(String::as_str).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(t.row(1), [3.0, -1.0]);
        let back = PredictionTable::from_reader(t.to_csv("id").as_bytes(), None, "mem").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_rejects_text_values() {
        let text = "id,y\nr1,abc\n";
        let err = PredictionTable::from_reader(text.as_bytes(), None, "mem").unwrap_err();
        assert!(err.to_string().contains("abc"));
    }
}

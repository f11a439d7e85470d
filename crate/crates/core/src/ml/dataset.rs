use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlError, Task};

/// Encoded training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Label indices into `vocabulary`, which is in first-seen order.
    Classes { y: Vec<usize>, vocabulary: Vec<String> },
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub labels: Labels,
}

impl Dataset {
    pub fn classification(columns: Vec<String>, x: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, MlError> {
        let mut vocabulary: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let y = labels
            .into_iter()
            .map(|l| {
                *index.entry(l.clone()).or_insert_with(|| {
                    vocabulary.push(l);
                    vocabulary.len() - 1
                })
            })
            .collect();
        Self::build(columns, x, Labels::Classes { y, vocabulary })
    }

    pub fn regression(columns: Vec<String>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, MlError> {
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(MlError::AbsentCell(i));
        }
        Self::build(columns, x, Labels::Values(y))
    }

    fn build(columns: Vec<String>, x: Vec<Vec<f64>>, labels: Labels) -> Result<Self, MlError> {
        let n = match &labels {
            Labels::Classes { y, .. } => y.len(),
            Labels::Values(v) => v.len(),
        };
        if n != x.len() {
            return Err(MlError::RowWidth { row: n.min(x.len()), expected: x.len(), got: n });
        }
        for (i, r) in x.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(MlError::RowWidth { row: i, expected: columns.len(), got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(MlError::AbsentCell(i));
            }
        }
        Ok(Dataset { columns, x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn task(&self) -> Task {
        match self.labels {
            Labels::Classes { .. } => Task::Classification,
            Labels::Values(_) => Task::Regression,
        }
    }

    pub(crate) fn check_trainable(&self, task: Task) -> Result<(), MlError> {
        if self.task() != task {
            return Err(MlError::TaskMismatch { model: task, data: self.task() });
        }
        if self.len() < 2 {
            return Err(MlError::TooFewRows(self.len()));
        }
        if self.columns.is_empty() {
            return Err(MlError::InvalidHyperparameter { name: "features".into(), reason: "no feature columns".into() });
        }
        if let Labels::Classes { y, .. } = &self.labels {
            if y.iter().all(|c| *c == y[0]) {
                return Err(MlError::SingleClass);
            }
        }
        Ok(())
    }
}

/// Per-column `(x - mean) / std` with population std; zero std is stored as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Standardizer {
        let n = rows.clone().count() as f64;
        let d = rows.clone().next().map_or(0, |r| r.len());
        let mut mean = vec![0.0; d];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Rows dropped because a label or feature cell was empty.
    pub dropped: usize,
}

/// Columns never used as default features: the fixed export prefix and
/// annotation/prediction columns.
const NON_FEATURES: [&str; 9] =
    ["detection_id", "frame", "track_id", "x_min", "y_min", "x_max", "y_max", "confidence", "provenance"];

/// Reads a training table. With `feature_columns = None` every column except
/// the label, the export prefix and `ann:`/`pred:` columns is used.
pub fn load_training_csv(
    path: &Path,
    label_column: &str,
    feature_columns: Option<&[String]>,
    task: Task,
) -> Result<LoadedCsv, MlError> {
    let file = std::fs::File::open(path).map_err(|e| MlError::Csv(format!("{}: {e}", path.display())))?;
    read_training_csv(file, label_column, feature_columns, task)
}

pub fn read_training_csv(
    reader: impl std::io::Read,
    label_column: &str,
    feature_columns: Option<&[String]>,
    task: Task,
) -> Result<LoadedCsv, MlError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(|e| MlError::Csv(e.to_string()))?.iter().map(String::from).collect();
    let find = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| MlError::MissingColumn(name.into()));
    let label_idx = find(label_column)?;
    let features: Vec<String> = match feature_columns {
        Some(cols) => cols.to_vec(),
        None => headers
            .iter()
            .filter(|h| {
                h.as_str() != label_column
                    && !NON_FEATURES.contains(&h.as_str())
                    && !h.starts_with("ann:")
                    && !h.starts_with("pred:")
            })
            .cloned()
            .collect(),
    };
    let idx: Vec<usize> = features.iter().map(|f| find(f)).collect::<Result<_, _>>()?;

    let mut x = Vec::new();
    let mut text_labels = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| MlError::Csv(e.to_string()))?;
        let label = rec.get(label_idx).unwrap_or("");
        if label.is_empty() || idx.iter().any(|&i| rec.get(i).unwrap_or("").is_empty()) {
            dropped += 1;
            continue;
        }
        let row = idx
            .iter()
            .map(|&i| {
                let cell = &rec[i];
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| MlError::Csv(format!("row {}: column {:?}: {cell:?} is not a number", line + 2, headers[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        match task {
            Task::Classification => text_labels.push(label.to_string()),
            Task::Regression => values.push(
                label.parse::<f64>().map_err(|_| MlError::Csv(format!("row {}: label {label:?} is not a number", line + 2)))?,
            ),
        }
        x.push(row);
    }
    if x.is_empty() {
        return Err(MlError::NoRows);
    }
    let dataset = match task {
        Task::Classification => Dataset::classification(features, x, text_labels)?,
        Task::Regression => Dataset::regression(features, x, values)?,
    };
    Ok(LoadedCsv { dataset, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_seen_vocabulary() {
        let d = Dataset::classification(
            vec!["f".into()],
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["z".into(), "a".into(), "z".into()],
        )
        .unwrap();
        assert_eq!(d.labels, Labels::Classes { y: vec![0, 1, 0], vocabulary: vec!["z".into(), "a".into()] });
    }

    #[test]
    fn csv_drops_rows_with_empty_cells() {
        let text = "area,label\n1.5,a\n,b\n2.5,b\n";
        let l = read_training_csv(text.as_bytes(), "label", None, Task::Classification).unwrap();
        assert_eq!((l.dataset.len(), l.dropped), (2, 1));
        assert_eq!(l.dataset.columns, vec!["area".to_string()]);
    }

    #[test]
    fn csv_missing_label_column() {
        let text = "area\n1\n";
        assert_eq!(
            read_training_csv(text.as_bytes(), "label", None, Task::Classification),
            Err(MlError::MissingColumn("label".into()))
        );
    }

    #[test]
    fn csv_default_columns_skip_prefix_and_annotations() {
        let text = "detection_id,frame,track_id,x_min,y_min,x_max,y_max,confidence,provenance,area,ann:text:n,ann:classes:c\n\
                    1,0,,0,0,4,4,0.9,model,16,hi,x\n2,0,,0,0,4,4,0.9,model,9,,y\n";
        let l = read_training_csv(text.as_bytes(), "ann:classes:c", None, Task::Classification).unwrap();
        assert_eq!(l.dataset.columns, vec!["area".to_string()]);
        assert_eq!(l.dataset.len(), 2);
    }

    #[test]
    fn constant_column_passes_through() {
        let rows = [vec![3.0, 1.0], vec![3.0, 2.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()));
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.transform(&rows[0])[0], 0.0);
    }

    proptest! {
        #[test]
        fn standardized_columns_are_unit(rows in proptest::collection::vec(
            proptest::collection::vec(-1e3f64..1e3, 3), 2..40)) {
            let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()));
            let t: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r)).collect();
            let n = t.len() as f64;
            for c in 0..3 {
                let mean = t.iter().map(|r| r[c]).sum::<f64>() / n;
                let var = t.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                let raw_const = rows.iter().all(|r| r[c] == rows[0][c]);
                if !raw_const {
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

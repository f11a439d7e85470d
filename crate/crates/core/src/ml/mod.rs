//! Classical models behind one train/predict interface, with per-fold
//! standardization, stratified cross-validation and a binary model container.

mod adaboost;
mod container;
mod cv;
mod dataset;
mod forest;
mod knn;
pub mod mlp;
mod svc;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{export_model, import_model, CONTAINER_VERSION, MAGIC};
pub use cv::{cross_validate, fold_assignment, CvConfig, CvReport, Metric};
pub use dataset::{load_training_csv, Dataset, Labels, LoadedCsv, Standardizer};

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyperparameter { name: String, reason: String },
    #[error("dataset needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("classification needs at least 2 distinct labels")]
    SingleClass,
    #[error("task mismatch: model is {model}, data is {data}")]
    TaskMismatch { model: Task, data: Task },
    #[error("schema mismatch: expected {expected:?}, got {got:?}")]
    SchemaMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("row {row} has {got} values, expected {expected}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("row {0} has an absent or non-finite feature")]
    AbsentCell(usize),
    #[error("invalid cross-validation config: {0}")]
    InvalidCv(String),
    #[error("class {label:?} has {count} samples, fewer than k={k}; lower k or add samples")]
    ClassTooSmall { label: String, count: usize, k: usize },
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("checksum mismatch: container is truncated or corrupted")]
    Checksum,
    #[error("unsupported container version {found} (this build reads {supported})")]
    Version { found: u16, supported: u16 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("no usable rows")]
    NoRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Knn,
    RandomForest,
    Adaboost,
    Mlp,
    LinearSvc,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Architecture::Knn, Architecture::RandomForest, Architecture::Adaboost, Architecture::Mlp, Architecture::LinearSvc];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Knn => "knn",
            Architecture::RandomForest => "random_forest",
            Architecture::Adaboost => "adaboost",
            Architecture::Mlp => "mlp",
            Architecture::LinearSvc => "linear_svc",
        }
    }

    /// Recognised hyperparameters with their defaults.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Architecture::Knn => &[("k", 5.0)],
            Architecture::RandomForest => {
                &[("n_trees", 100.0), ("max_features", 0.0), ("max_depth", 0.0), ("min_samples_leaf", 1.0)]
            }
            Architecture::Adaboost => &[("n_rounds", 50.0), ("learning_rate", 1.0)],
            Architecture::Mlp => &[
                ("hidden", 100.0),
                ("learning_rate", 1e-3),
                ("beta1", 0.9),
                ("beta2", 0.999),
                ("epochs", 200.0),
            ],
            Architecture::LinearSvc => &[("lambda", 1e-4), ("learning_rate", 0.01), ("epochs", 100.0), ("epsilon", 0.1)],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = MlError;
    fn from_str(s: &str) -> Result<Self, MlError> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| MlError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    pub task: Task,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, task: Task, seed: u64) -> Self {
        Self { architecture, hyperparameters: BTreeMap::new(), seed, task }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    /// Checks names and ranges; returns the full parameter set with defaults.
    pub fn resolved(&self) -> Result<Hyper, MlError> {
        let defaults = self.architecture.defaults();
        for name in self.hyperparameters.keys() {
            if !defaults.iter().any(|(n, _)| n == name) {
                return Err(bad(name, format!("not a {} hyperparameter", self.architecture)));
            }
        }
        let h = Hyper(
            defaults
                .iter()
                .map(|(n, d)| (n.to_string(), *self.hyperparameters.get(*n).unwrap_or(d)))
                .collect(),
        );
        for (n, v) in &h.0 {
            if !v.is_finite() {
                return Err(bad(n, "must be finite".into()));
            }
        }
        match self.architecture {
            Architecture::Knn => {
                h.count("k", 1)?;
            }
            Architecture::RandomForest => {
                h.count("n_trees", 1)?;
                h.count("max_features", 0)?;
                h.count("max_depth", 0)?;
                h.count("min_samples_leaf", 1)?;
            }
            Architecture::Adaboost => {
                h.count("n_rounds", 1)?;
                h.positive("learning_rate")?;
            }
            Architecture::Mlp => {
                h.count("hidden", 1)?;
                h.count("epochs", 1)?;
                h.positive("learning_rate")?;
                for b in ["beta1", "beta2"] {
                    if !(0.0..1.0).contains(&h.get(b)) {
                        return Err(bad(b, "must be in [0, 1)".into()));
                    }
                }
            }
            Architecture::LinearSvc => {
                h.count("epochs", 1)?;
                h.positive("learning_rate")?;
                if h.get("lambda") < 0.0 || h.get("epsilon") < 0.0 {
                    return Err(bad("lambda", "lambda and epsilon must be non-negative".into()));
                }
            }
        }
        Ok(h)
    }
}

fn bad(name: &str, reason: String) -> MlError {
    MlError::InvalidHyperparameter { name: name.to_string(), reason }
}

/// Resolved hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper(BTreeMap<String, f64>);

impl Hyper {
    pub fn get(&self, name: &str) -> f64 {
        self.0[name]
    }

    pub fn usize(&self, name: &str) -> usize {
        self.0[name] as usize
    }

    fn count(&self, name: &str, min: usize) -> Result<usize, MlError> {
        let v = self.get(name);
        if v.fract() != 0.0 || v < min as f64 || v > 1e9 {
            return Err(bad(name, format!("must be an integer >= {min}")));
        }
        Ok(v as usize)
    }

    fn positive(&self, name: &str) -> Result<f64, MlError> {
        let v = self.get(name);
        if v <= 0.0 {
            return Err(bad(name, "must be positive".into()));
        }
        Ok(v)
    }
}

/// Training targets after label encoding.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Target<'a> {
    Class { y: &'a [usize], n_classes: usize },
    Value(&'a [f64]),
}

impl Target<'_> {
    fn width(&self) -> usize {
        match self {
            Target::Class { n_classes, .. } => *n_classes,
            Target::Value(_) => 1,
        }
    }
}

/// Architecture-specific learned state.
#[derive(Debug, Clone, PartialEq)]
pub enum Learned {
    Knn(knn::Knn),
    Forest(forest::Forest),
    Adaboost(adaboost::AdaBoost),
    Mlp(mlp::Mlp),
    LinearSvc(svc::LinearSvc),
}

pub(crate) trait Model: Sized {
    /// Class scores (classification) or a single value (regression).
    fn predict_row(&self, x: &[f64]) -> Vec<f64>;
    /// Shape information stored in the container header.
    fn layout(&self) -> serde_json::Value;
    fn write_params(&self, out: &mut Vec<f64>);
    fn read(layout: &serde_json::Value, params: &[f64]) -> Result<Self, String>;
}

impl Learned {
    fn fit(arch: Architecture, h: &Hyper, seed: u64, x: &[Vec<f64>], t: Target<'_>) -> Learned {
        match arch {
            Architecture::Knn => Learned::Knn(knn::Knn::fit(h, x, t)),
            Architecture::RandomForest => Learned::Forest(forest::Forest::fit(h, seed, x, t)),
            Architecture::Adaboost => Learned::Adaboost(adaboost::AdaBoost::fit(h, x, t)),
            Architecture::Mlp => Learned::Mlp(mlp::Mlp::fit(h, seed, x, t)),
            Architecture::LinearSvc => Learned::LinearSvc(svc::LinearSvc::fit(h, seed, x, t)),
        }
    }

    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Learned::Knn(m) => m.predict_row(x),
            Learned::Forest(m) => m.predict_row(x),
            Learned::Adaboost(m) => m.predict_row(x),
            Learned::Mlp(m) => m.predict_row(x),
            Learned::LinearSvc(m) => m.predict_row(x),
        }
    }

    fn layout(&self) -> serde_json::Value {
        match self {
            Learned::Knn(m) => m.layout(),
            Learned::Forest(m) => m.layout(),
            Learned::Adaboost(m) => m.layout(),
            Learned::Mlp(m) => m.layout(),
            Learned::LinearSvc(m) => m.layout(),
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Learned::Knn(m) => m.write_params(out),
            Learned::Forest(m) => m.write_params(out),
            Learned::Adaboost(m) => m.write_params(out),
            Learned::Mlp(m) => m.write_params(out),
            Learned::LinearSvc(m) => m.write_params(out),
        }
    }

    fn read(arch: Architecture, layout: &serde_json::Value, params: &[f64]) -> Result<Learned, String> {
        Ok(match arch {
            Architecture::Knn => Learned::Knn(knn::Knn::read(layout, params)?),
            Architecture::RandomForest => Learned::Forest(forest::Forest::read(layout, params)?),
            Architecture::Adaboost => Learned::Adaboost(adaboost::AdaBoost::read(layout, params)?),
            Architecture::Mlp => Learned::Mlp(mlp::Mlp::read(layout, params)?),
            Architecture::LinearSvc => Learned::LinearSvc(svc::LinearSvc::read(layout, params)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_samples: usize,
    /// Accuracy (classification) or R² (regression) on the training rows.
    pub resubstitution: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub learned: Learned,
    pub standardizer: Standardizer,
    pub schema: Vec<String>,
    /// Label texts by index; empty for regression.
    pub vocabulary: Vec<String>,
    pub report: TrainingReport,
}

/// One prediction: a label or a value, plus per-class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in v.iter().enumerate() {
        if *s > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn fit_raw(spec: &ModelSpec, h: &Hyper, data: &Dataset, rows: &[usize]) -> (Learned, Standardizer) {
    let std = Standardizer::fit(rows.iter().map(|&i| data.x[i].as_slice()));
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| std.transform(&data.x[i])).collect();
    let learned = match &data.labels {
        Labels::Classes { y, vocabulary } => {
            let y: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            Learned::fit(spec.architecture, h, spec.seed, &x, Target::Class { y: &y, n_classes: vocabulary.len() })
        }
        Labels::Values(v) => {
            let y: Vec<f64> = rows.iter().map(|&i| v[i]).collect();
            Learned::fit(spec.architecture, h, spec.seed, &x, Target::Value(&y))
        }
    };
    (learned, std)
}

/// Fits `spec` on the whole dataset. Deterministic given `(spec, data)`.
pub fn train(spec: &ModelSpec, data: &Dataset) -> Result<TrainedModel, MlError> {
    let h = spec.resolved()?;
    data.check_trainable(spec.task)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let (learned, standardizer) = fit_raw(spec, &h, data, &rows);
    let mut model = TrainedModel {
        spec: spec.clone(),
        learned,
        standardizer,
        schema: data.columns.clone(),
        vocabulary: match &data.labels {
            Labels::Classes { vocabulary, .. } => vocabulary.clone(),
            Labels::Values(_) => Vec::new(),
        },
        report: TrainingReport { n_samples: data.len(), resubstitution: 0.0, cv: None },
    };
    let preds = model.predict_rows(&data.x)?;
    model.report.resubstitution = cv::score(&data.labels, &rows, &preds);
    Ok(model)
}

impl TrainedModel {
    pub fn task(&self) -> Task {
        self.spec.task
    }

    fn check_schema(&self, columns: &[String]) -> Result<(), MlError> {
        if columns != self.schema.as_slice() {
            return Err(MlError::SchemaMismatch { expected: self.schema.clone(), got: columns.to_vec() });
        }
        Ok(())
    }

    /// Predicts rows whose columns are named `columns` (must equal the schema).
    pub fn predict(&self, columns: &[String], rows: &[Vec<Option<f64>>]) -> Result<Vec<Prediction>, MlError> {
        self.check_schema(columns)?;
        let dense = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter().map(|v| v.filter(|v| v.is_finite()).ok_or(MlError::AbsentCell(i))).collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.predict_rows(&dense)
    }

    /// Predicts dense rows in schema order.
    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Prediction>, MlError> {
        let d = self.schema.len();
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != d {
                    return Err(MlError::RowWidth { row: i, expected: d, got: r.len() });
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(MlError::AbsentCell(i));
                }
                let out = self.learned.predict_row(&self.standardizer.transform(r));
                Ok(match self.spec.task {
                    Task::Classification => Prediction {
                        label: Some(self.vocabulary[argmax(&out)].clone()),
                        value: None,
                        scores: out,
                    },
                    Task::Regression => Prediction { label: None, value: Some(out[0]), scores: Vec::new() },
                })
            })
            .collect()
    }
}

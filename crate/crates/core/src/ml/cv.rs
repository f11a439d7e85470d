use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_raw, Dataset, Labels, Learned, MlError, ModelSpec, Prediction, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k: 10, stratified: true, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    R2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: Metric,
    pub k: usize,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub sd: f64,
}

/// Fold index of every row. Stratified: each class is shuffled with the
/// seeded generator and dealt round-robin, continuing where the previous
/// class stopped.
pub fn fold_assignment(labels: &Labels, cfg: &CvConfig) -> Result<Vec<usize>, MlError> {
    let n = match labels {
        Labels::Classes { y, .. } => y.len(),
        Labels::Values(v) => v.len(),
    };
    if cfg.k < 2 || cfg.k > n {
        return Err(MlError::InvalidCv(format!("k must be in [2, {n}], got {}", cfg.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut folds = vec![0; n];
    let groups: Vec<Vec<usize>> = match labels {
        Labels::Classes { y, vocabulary } if cfg.stratified => {
            let mut g = vec![Vec::new(); vocabulary.len()];
            for (i, c) in y.iter().enumerate() {
                g[*c].push(i);
            }
            for (c, members) in g.iter().enumerate() {
                if !members.is_empty() && members.len() < cfg.k {
                    return Err(MlError::ClassTooSmall { label: vocabulary[c].clone(), count: members.len(), k: cfg.k });
                }
            }
            g
        }
        _ => vec![(0..n).collect()],
    };
    let mut offset = 0;
    for mut members in groups {
        members.shuffle(&mut rng);
        for (j, i) in members.iter().enumerate() {
            folds[*i] = (offset + j) % cfg.k;
        }
        offset = (offset + members.len()) % cfg.k;
    }
    Ok(folds)
}

pub(crate) fn r2(y: &[f64], p: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Accuracy or R² of `preds` against the labels of `rows`.
pub(crate) fn score(labels: &Labels, rows: &[usize], preds: &[Prediction]) -> f64 {
    match labels {
        Labels::Classes { y, vocabulary } => {
            let hits = rows
                .iter()
                .zip(preds)
                .filter(|(i, p)| p.label.as_deref() == Some(vocabulary[y[**i]].as_str()))
                .count();
            hits as f64 / rows.len() as f64
        }
        Labels::Values(v) => {
            let y: Vec<f64> = rows.iter().map(|&i| v[i]).collect();
            let p: Vec<f64> = preds.iter().map(|p| p.value.unwrap_or(f64::NAN)).collect();
            r2(&y, &p)
        }
    }
}

fn predict_with(learned: &Learned, std: &super::Standardizer, data: &Dataset, rows: &[usize]) -> Vec<Prediction> {
    rows.iter()
        .map(|&i| {
            let out = learned.predict_row(&std.transform(&data.x[i]));
            match &data.labels {
                Labels::Classes { vocabulary, .. } => Prediction {
                    label: Some(vocabulary[super::argmax(&out)].clone()),
                    value: None,
                    scores: out,
                },
                Labels::Values(_) => Prediction { label: None, value: Some(out[0]), scores: Vec::new() },
            }
        })
        .collect()
}

/// k-fold evaluation; standardization is refitted on each training split.
pub fn cross_validate(spec: &ModelSpec, data: &Dataset, cfg: &CvConfig) -> Result<CvReport, MlError> {
    let h = spec.resolved()?;
    data.check_trainable(spec.task)?;
    let folds = fold_assignment(&data.labels, cfg)?;
    let per_fold: Vec<f64> = (0..cfg.k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| folds[i] == f);
            let (learned, std) = fit_raw(spec, &h, data, &train);
            score(&data.labels, &test, &predict_with(&learned, &std, data, &test))
        })
        .collect();
    let mean = per_fold.iter().sum::<f64>() / cfg.k as f64;
    let sd = (per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cfg.k as f64).sqrt();
    let metric = if spec.task == Task::Classification { Metric::Accuracy } else { Metric::R2 };
    Ok(CvReport { metric, k: cfg.k, per_fold, mean, sd })
}

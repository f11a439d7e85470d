use serde_json::json;

use super::{Hyper, Model, Target};

/// Stored training set; Euclidean distance, majority vote (ties to the lowest
/// label index) or neighbour mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    k: usize,
    d: usize,
    /// Number of classes, or 0 for regression.
    n_classes: usize,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Knn {
    pub(crate) fn fit(h: &Hyper, x: &[Vec<f64>], t: Target<'_>) -> Knn {
        let (n_classes, y) = match t {
            Target::Class { y, n_classes } => (n_classes, y.iter().map(|&c| c as f64).collect()),
            Target::Value(v) => (0, v.to_vec()),
        };
        Knn { k: h.usize("k").min(x.len()), d: x.first().map_or(0, Vec::len), n_classes, x: x.to_vec(), y }
    }

    fn neighbours(&self, q: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.into_iter().take(self.k).map(|(_, i)| i).collect()
    }
}

impl Model for Knn {
    fn predict_row(&self, q: &[f64]) -> Vec<f64> {
        let nb = self.neighbours(q);
        if self.n_classes == 0 {
            return vec![nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64];
        }
        let mut votes = vec![0.0; self.n_classes];
        for i in nb {
            votes[self.y[i] as usize] += 1.0;
        }
        votes.iter().map(|v| v / self.k as f64).collect()
    }

    fn layout(&self) -> serde_json::Value {
        json!({"k": self.k, "d": self.d, "n": self.x.len(), "n_classes": self.n_classes})
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for r in &self.x {
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&self.y);
    }

    fn read(layout: &serde_json::Value, p: &[f64]) -> Result<Self, String> {
        let get = |k: &str| layout[k].as_u64().map(|v| v as usize).ok_or(format!("missing {k}"));
        let (k, d, n, n_classes) = (get("k")?, get("d")?, get("n")?, get("n_classes")?);
        if p.len() != n * d + n {
            return Err("knn parameter count".into());
        }
        let x = (0..n).map(|i| p[i * d..(i + 1) * d].to_vec()).collect();
        Ok(Knn { k, d, n_classes, x, y: p[n * d..].to_vec() })
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Hyper, Model, Target};

/// Linear one-vs-rest hinge-loss classifier (or epsilon-insensitive
/// regressor) trained by SGD with L2 decay and learning rate `lr / epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvc {
    d: usize,
    classify: bool,
    y_mean: f64,
    y_std: f64,
    /// One `[w..., b]` block per class (one block for regression).
    weights: Vec<Vec<f64>>,
}

impl LinearSvc {
    pub(crate) fn fit(h: &Hyper, seed: u64, x: &[Vec<f64>], t: Target<'_>) -> LinearSvc {
        let d = x[0].len();
        let n = x.len();
        let (lambda, lr0, eps) = (h.get("lambda"), h.get("learning_rate"), h.get("epsilon"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        let (classify, blocks, y_mean, y_std, targets): (bool, usize, f64, f64, Vec<f64>) = match t {
            Target::Class { n_classes, .. } => (true, n_classes, 0.0, 1.0, Vec::new()),
            Target::Value(y) => {
                let m = y.iter().sum::<f64>() / n as f64;
                let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                let sd = if sd > 0.0 { sd } else { 1.0 };
                (false, 1, m, sd, y.iter().map(|v| (v - m) / sd).collect())
            }
        };
        let mut weights = vec![vec![0.0; d + 1]; blocks];
        for epoch in 1..=h.usize("epochs") {
            let eta = lr0 / epoch as f64;
            order.shuffle(&mut rng);
            for &i in &order {
                for (c, w) in weights.iter_mut().enumerate() {
                    let f: f64 = w[..d].iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>() + w[d];
                    let step = match t {
                        Target::Class { y, .. } => {
                            let s = if y[i] == c { 1.0 } else { -1.0 };
                            if s * f < 1.0 { s } else { 0.0 }
                        }
                        Target::Value(_) => {
                            let r = f - targets[i];
                            if r > eps { -1.0 } else if r < -eps { 1.0 } else { 0.0 }
                        }
                    };
                    for (wj, xj) in w[..d].iter_mut().zip(&x[i]) {
                        *wj = *wj * (1.0 - eta * lambda) + eta * step * xj;
                    }
                    w[d] += eta * step;
                }
            }
        }
        LinearSvc { d, classify, y_mean, y_std, weights }
    }
}

impl Model for LinearSvc {
    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let f = |w: &Vec<f64>| w[..self.d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[self.d];
        if self.classify {
            self.weights.iter().map(f).collect()
        } else {
            vec![f(&self.weights[0]) * self.y_std + self.y_mean]
        }
    }

    fn layout(&self) -> serde_json::Value {
        json!({"d": self.d, "blocks": self.weights.len(), "classify": self.classify})
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend([self.y_mean, self.y_std]);
        for w in &self.weights {
            out.extend_from_slice(w);
        }
    }

    fn read(layout: &serde_json::Value, p: &[f64]) -> Result<Self, String> {
        let d = layout["d"].as_u64().ok_or("missing d")? as usize;
        let blocks = layout["blocks"].as_u64().ok_or("missing blocks")? as usize;
        let classify = layout["classify"].as_bool().ok_or("missing classify")?;
        if p.len() != 2 + blocks * (d + 1) {
            return Err("svc parameter count".into());
        }
        let weights = p[2..].chunks(d + 1).map(<[f64]>::to_vec).collect();
        Ok(LinearSvc { d, classify, y_mean: p[0], y_std: p[1], weights })
    }
}

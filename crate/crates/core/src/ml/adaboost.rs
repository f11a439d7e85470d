use serde_json::json;

use super::{Hyper, Model, Target};

/// Depth-1 tree. `feature == None` predicts `left` everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stump {
    feature: Option<usize>,
    threshold: f64,
    left: f64,
    right: f64,
}

impl Stump {
    fn eval(&self, x: &[f64]) -> f64 {
        match self.feature {
            Some(f) if x[f] > self.threshold => self.right,
            _ => self.left,
        }
    }
}

fn sorted_by(x: &[Vec<f64>], f: usize) -> Vec<usize> {
    let mut o: Vec<usize> = (0..x.len()).collect();
    o.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
    o
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

fn weighted_majority(w: &[f64]) -> usize {
    super::argmax(w)
}

/// Stump minimising weighted misclassification.
fn fit_class_stump(x: &[Vec<f64>], y: &[usize], k: usize, w: &[f64]) -> Stump {
    let mut total = vec![0.0; k];
    for (c, wi) in y.iter().zip(w) {
        total[*c] += wi;
    }
    let all = weighted_majority(&total);
    let mut best = Stump { feature: None, threshold: 0.0, left: all as f64, right: all as f64 };
    let mut best_err = total.iter().sum::<f64>() - total[all];
    for f in 0..x[0].len() {
        let order = sorted_by(x, f);
        let mut left = vec![0.0; k];
        for j in 0..order.len() - 1 {
            left[y[order[j]]] += w[order[j]];
            let (lo, hi) = (x[order[j]][f], x[order[j + 1]][f]);
            if lo == hi {
                continue;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let (cl, cr) = (weighted_majority(&left), weighted_majority(&right));
            let err = (left.iter().sum::<f64>() - left[cl]) + (right.iter().sum::<f64>() - right[cr]);
            if err < best_err - 1e-15 {
                best_err = err;
                best = Stump { feature: Some(f), threshold: midpoint(lo, hi), left: cl as f64, right: cr as f64 };
            }
        }
    }
    best
}

/// Stump minimising weighted squared error.
fn fit_value_stump(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Stump {
    let wt: f64 = w.iter().sum();
    let wy: f64 = y.iter().zip(w).map(|(v, wi)| v * wi).sum();
    let wy2: f64 = y.iter().zip(w).map(|(v, wi)| v * v * wi).sum();
    let mean = wy / wt;
    let mut best = Stump { feature: None, threshold: 0.0, left: mean, right: mean };
    let mut best_err = wy2 - wy * wy / wt;
    for f in 0..x[0].len() {
        let order = sorted_by(x, f);
        let (mut sw, mut sy, mut sy2) = (0.0, 0.0, 0.0);
        for j in 0..order.len() - 1 {
            let i = order[j];
            sw += w[i];
            sy += w[i] * y[i];
            sy2 += w[i] * y[i] * y[i];
            let (lo, hi) = (x[i][f], x[order[j + 1]][f]);
            let rw = wt - sw;
            if lo == hi || sw <= 0.0 || rw <= 0.0 {
                continue;
            }
            let (ry, ry2) = (wy - sy, wy2 - sy2);
            let err = (sy2 - sy * sy / sw) + (ry2 - ry * ry / rw);
            if err < best_err - 1e-12 * best_err.abs().max(1.0) {
                best_err = err;
                best = Stump { feature: Some(f), threshold: midpoint(lo, hi), left: sy / sw, right: ry / rw };
            }
        }
    }
    best
}

/// SAMME over stumps for classes; AdaBoost.R2 (linear loss, weighted median)
/// for values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaBoost {
    /// Number of classes, or 0 for regression.
    n_classes: usize,
    stumps: Vec<Stump>,
    alphas: Vec<f64>,
}

impl AdaBoost {
    pub(crate) fn fit(h: &Hyper, x: &[Vec<f64>], t: Target<'_>) -> AdaBoost {
        let rounds = h.usize("n_rounds");
        let lr = h.get("learning_rate");
        let n = x.len();
        let mut w = vec![1.0 / n as f64; n];
        let mut out = AdaBoost { n_classes: 0, stumps: vec![], alphas: vec![] };
        match t {
            Target::Class { y, n_classes: k } => {
                out.n_classes = k;
                for _ in 0..rounds {
                    let s = fit_class_stump(x, y, k, &w);
                    let miss: Vec<bool> = x.iter().zip(y).map(|(r, c)| s.eval(r) as usize != *c).collect();
                    let err: f64 = w.iter().zip(&miss).filter(|(_, m)| **m).map(|(w, _)| w).sum::<f64>() / w.iter().sum::<f64>();
                    if err <= 0.0 {
                        out.stumps.push(s);
                        out.alphas.push(1.0);
                        break;
                    }
                    if err >= 1.0 - 1.0 / k as f64 {
                        if out.stumps.is_empty() {
                            out.stumps.push(s);
                            out.alphas.push(1.0);
                        }
                        break;
                    }
                    let alpha = lr * (((1.0 - err) / err).ln() + ((k - 1) as f64).ln());
                    for (wi, m) in w.iter_mut().zip(&miss) {
                        if *m {
                            *wi *= alpha.exp();
                        }
                    }
                    let sum: f64 = w.iter().sum();
                    w.iter_mut().for_each(|wi| *wi /= sum);
                    out.stumps.push(s);
                    out.alphas.push(alpha);
                }
            }
            Target::Value(y) => {
                for _ in 0..rounds {
                    let s = fit_value_stump(x, y, &w);
                    let e: Vec<f64> = x.iter().zip(y).map(|(r, v)| (s.eval(r) - v).abs()).collect();
                    let dmax = e.iter().cloned().fold(0.0, f64::max);
                    if dmax <= 0.0 {
                        out.stumps.push(s);
                        out.alphas.push(1.0);
                        break;
                    }
                    let loss: Vec<f64> = e.iter().map(|v| v / dmax).collect();
                    let lbar: f64 = loss.iter().zip(&w).map(|(l, wi)| l * wi).sum();
                    if lbar >= 0.5 {
                        if out.stumps.is_empty() {
                            out.stumps.push(s);
                            out.alphas.push(1.0);
                        }
                        break;
                    }
                    let beta = lbar / (1.0 - lbar);
                    for (wi, l) in w.iter_mut().zip(&loss) {
                        *wi *= beta.powf((1.0 - l) * lr);
                    }
                    let sum: f64 = w.iter().sum();
                    w.iter_mut().for_each(|wi| *wi /= sum);
                    out.stumps.push(s);
                    out.alphas.push(lr * (1.0 / beta).ln());
                }
            }
        }
        out
    }

    #[cfg(test)]
    fn staged_errors(&self, x: &[Vec<f64>], y: &[usize]) -> Vec<usize> {
        (1..=self.stumps.len())
            .map(|m| {
                let part = AdaBoost { n_classes: self.n_classes, stumps: self.stumps[..m].to_vec(), alphas: self.alphas[..m].to_vec() };
                x.iter().zip(y).filter(|(r, c)| super::argmax(&part.predict_row(r)) != **c).count()
            })
            .collect()
    }
}

impl Model for AdaBoost {
    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let total: f64 = self.alphas.iter().sum();
        if self.n_classes == 0 {
            let mut p: Vec<(f64, f64)> = self.stumps.iter().map(|s| s.eval(x)).zip(self.alphas.iter().copied()).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            for (v, a) in &p {
                acc += a;
                if acc >= 0.5 * total {
                    return vec![*v];
                }
            }
            return vec![p.last().map_or(0.0, |v| v.0)];
        }
        let mut s = vec![0.0; self.n_classes];
        for (st, a) in self.stumps.iter().zip(&self.alphas) {
            s[st.eval(x) as usize] += a;
        }
        s.iter_mut().for_each(|v| *v /= total);
        s
    }

    fn layout(&self) -> serde_json::Value {
        json!({"n_classes": self.n_classes, "n_stumps": self.stumps.len()})
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for (s, a) in self.stumps.iter().zip(&self.alphas) {
            out.extend([s.feature.map_or(-1.0, |f| f as f64), s.threshold, s.left, s.right, *a]);
        }
    }

    fn read(layout: &serde_json::Value, p: &[f64]) -> Result<Self, String> {
        let n_classes = layout["n_classes"].as_u64().ok_or("missing n_classes")? as usize;
        let m = layout["n_stumps"].as_u64().ok_or("missing n_stumps")? as usize;
        if p.len() != 5 * m {
            return Err("adaboost parameter count".into());
        }
        let (stumps, alphas) = p
            .chunks(5)
            .map(|c| {
                let feature = if c[0] < 0.0 { None } else { Some(c[0] as usize) };
                (Stump { feature, threshold: c[1], left: c[2], right: c[3] }, c[4])
            })
            .unzip();
        Ok(AdaBoost { n_classes, stumps, alphas })
    }
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::{Hyper, Model, Target};

const LEAF: usize = usize::MAX;

/// Flat binary tree: `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    feature: Vec<usize>,
    threshold: Vec<f64>,
    left: Vec<usize>,
    right: Vec<usize>,
    /// `width` values per node: class proportions or the mean target.
    value: Vec<f64>,
}

impl Tree {
    fn push_leaf(&mut self, value: &[f64]) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.extend_from_slice(value);
        self.feature.len() - 1
    }

    fn leaf<'a>(&'a self, x: &[f64], width: usize) -> &'a [f64] {
        let mut n = 0;
        while self.feature[n] != LEAF {
            n = if x[self.feature[n]] <= self.threshold[n] { self.left[n] } else { self.right[n] };
        }
        &self.value[n * width..(n + 1) * width]
    }
}

pub(crate) struct GrowParams {
    pub max_features: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

fn node_value(rows: &[usize], t: &Target<'_>) -> Vec<f64> {
    match t {
        Target::Class { y, n_classes } => {
            let mut v = vec![0.0; *n_classes];
            for &i in rows {
                v[y[i]] += 1.0;
            }
            v.iter_mut().for_each(|c| *c /= rows.len() as f64);
            v
        }
        Target::Value(y) => vec![rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64],
    }
}

fn is_pure(rows: &[usize], t: &Target<'_>) -> bool {
    match t {
        Target::Class { y, .. } => rows.iter().all(|&i| y[i] == y[rows[0]]),
        Target::Value(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
    }
}

/// Best `(impurity, feature, threshold)` over the candidate features, where
/// impurity is the size-weighted Gini (classes) or SSE (values).
fn best_split(rows: &[usize], x: &[Vec<f64>], t: &Target<'_>, features: &[usize], min_leaf: usize) -> Option<(f64, usize, f64)> {
    let n = rows.len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &f in features {
        order.clear();
        order.extend(rows.iter().map(|&i| (x[i][f], i)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        match t {
            Target::Class { y, n_classes } => {
                let mut left = vec![0.0; *n_classes];
                let mut right = vec![0.0; *n_classes];
                for &(_, i) in &order {
                    right[y[i]] += 1.0;
                }
                let (mut sl, mut sr) = (0.0f64, right.iter().map(|c| c * c).sum::<f64>());
                for j in 0..n - 1 {
                    let c = y[order[j].1];
                    sl += 2.0 * left[c] + 1.0;
                    sr -= 2.0 * right[c] - 1.0;
                    left[c] += 1.0;
                    right[c] -= 1.0;
                    if order[j].0 == order[j + 1].0 || j + 1 < min_leaf || n - j - 1 < min_leaf {
                        continue;
                    }
                    let (nl, nr) = ((j + 1) as f64, (n - j - 1) as f64);
                    // nl * gini_l + nr * gini_r
                    let imp = (nl - sl / nl) + (nr - sr / nr);
                    consider(&mut best, imp, f, order[j].0, order[j + 1].0);
                }
            }
            Target::Value(y) => {
                let total: f64 = order.iter().map(|&(_, i)| y[i]).sum();
                let total2: f64 = order.iter().map(|&(_, i)| y[i] * y[i]).sum();
                let (mut s, mut s2) = (0.0, 0.0);
                for j in 0..n - 1 {
                    let v = y[order[j].1];
                    s += v;
                    s2 += v * v;
                    if order[j].0 == order[j + 1].0 || j + 1 < min_leaf || n - j - 1 < min_leaf {
                        continue;
                    }
                    let (nl, nr) = ((j + 1) as f64, (n - j - 1) as f64);
                    let imp = (s2 - s * s / nl) + ((total2 - s2) - (total - s) * (total - s) / nr);
                    consider(&mut best, imp, f, order[j].0, order[j + 1].0);
                }
            }
        }
    }
    best
}

fn consider(best: &mut Option<(f64, usize, f64)>, imp: f64, f: usize, lo: f64, hi: f64) {
    if best.is_none_or(|b| imp < b.0) {
        let mid = lo + (hi - lo) / 2.0;
        let thr = if mid < hi { mid } else { lo };
        *best = Some((imp, f, thr));
    }
}

pub(crate) fn grow(x: &[Vec<f64>], t: &Target<'_>, rows: Vec<usize>, p: &GrowParams, rng: &mut ChaCha8Rng) -> Tree {
    let d = x[0].len();
    let mut tree = Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
    let mut all_features: Vec<usize> = (0..d).collect();
    // (rows, depth, parent, is_left)
    let mut stack: Vec<(Vec<usize>, usize, usize, bool)> = vec![(rows, 0, LEAF, false)];
    while let Some((rows, depth, parent, is_left)) = stack.pop() {
        let node = tree.push_leaf(&node_value(&rows, t));
        if parent != LEAF {
            if is_left {
                tree.left[parent] = node;
            } else {
                tree.right[parent] = node;
            }
        }
        if rows.len() < 2 * p.min_samples_leaf || is_pure(&rows, t) || (p.max_depth > 0 && depth >= p.max_depth) {
            continue;
        }
        let (candidates, _) = all_features.partial_shuffle(rng, p.max_features.min(d));
        let mut candidates = candidates.to_vec();
        candidates.sort_unstable();
        let Some((_, f, thr)) = best_split(&rows, x, t, &candidates, p.min_samples_leaf) else {
            continue;
        };
        tree.feature[node] = f;
        tree.threshold[node] = thr;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= thr);
        stack.push((r, depth + 1, node, false));
        stack.push((l, depth + 1, node, true));
    }
    tree
}

/// Bagged CART trees averaged at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    width: usize,
    trees: Vec<Tree>,
}

impl Forest {
    pub(crate) fn fit(h: &Hyper, seed: u64, x: &[Vec<f64>], t: Target<'_>) -> Forest {
        let n = x.len();
        let d = x[0].len();
        let mf = h.usize("max_features");
        let p = GrowParams {
            max_features: if mf == 0 { (d as f64).sqrt().ceil() as usize } else { mf.min(d) },
            max_depth: h.usize("max_depth"),
            min_samples_leaf: h.usize("min_samples_leaf"),
        };
        let trees = (0..h.usize("n_trees"))
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                grow(x, &t, rows, &p, &mut rng)
            })
            .collect();
        Forest { width: t.width(), trees }
    }
}

impl Model for Forest {
    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.width];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf(x, self.width)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.trees.len() as f64);
        acc
    }

    fn layout(&self) -> serde_json::Value {
        json!({"width": self.width, "n_trees": self.trees.len()})
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for t in &self.trees {
            out.push(t.feature.len() as f64);
            for n in 0..t.feature.len() {
                out.push(if t.feature[n] == LEAF { -1.0 } else { t.feature[n] as f64 });
                out.extend([t.threshold[n], t.left[n] as f64, t.right[n] as f64]);
                out.extend_from_slice(&t.value[n * self.width..(n + 1) * self.width]);
            }
        }
    }

    fn read(layout: &serde_json::Value, p: &[f64]) -> Result<Self, String> {
        let width = layout["width"].as_u64().ok_or("missing width")? as usize;
        let n_trees = layout["n_trees"].as_u64().ok_or("missing n_trees")? as usize;
        let mut pos = 0;
        let mut take = |k: usize| -> Result<&[f64], String> {
            let s = p.get(pos..pos + k).ok_or("forest parameters truncated")?;
            pos += k;
            Ok(s)
        };
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let nodes = take(1)?[0] as usize;
            let mut t = Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
            for _ in 0..nodes {
                let h = take(4 + width)?;
                t.feature.push(if h[0] < 0.0 { LEAF } else { h[0] as usize });
                t.threshold.push(h[1]);
                t.left.push(h[2] as usize);
                t.right.push(h[3] as usize);
                t.value.extend_from_slice(&h[4..]);
            }
            if t.left.iter().chain(&t.right).any(|&c| c >= nodes.max(1)) {
                return Err("forest child index out of range".into());
            }
            trees.push(t);
        }
        if pos != p.len() {
            return Err("forest parameter count".into());
        }
        Ok(Forest { width, trees })
    }
}

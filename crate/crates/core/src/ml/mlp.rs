use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Hyper, Model, Target};

/// One hidden ReLU layer. Parameters are packed as `W1 (h x d), b1, W2 (o x h), b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    d: usize,
    h: usize,
    o: usize,
    classify: bool,
    /// Regression targets are fitted standardized; these undo it.
    y_mean: f64,
    y_std: f64,
    theta: Vec<f64>,
}

/// Training target of [`objective`].
pub enum Goal<'a> {
    Class(&'a [usize]),
    Value(&'a [f64]),
}

struct Shape {
    d: usize,
    h: usize,
    o: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.h * self.d + self.h + self.o * self.h + self.o
    }
}

fn forward(s: &Shape, theta: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
    let (w1, rest) = theta.split_at(s.h * s.d);
    let (b1, rest) = rest.split_at(s.h);
    let (w2, b2) = rest.split_at(s.o * s.h);
    for j in 0..s.h {
        let z: f64 = w1[j * s.d..(j + 1) * s.d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
        hidden[j] = z.max(0.0);
    }
    for k in 0..s.o {
        out[k] = w2[k * s.h..(k + 1) * s.h].iter().zip(hidden.iter()).map(|(w, a)| w * a).sum::<f64>() + b2[k];
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Mean loss and its gradient with respect to `theta`.
fn loss_and_grad(s: &Shape, theta: &[f64], x: &[Vec<f64>], goal: &Goal<'_>) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let mut hidden = vec![0.0; s.h];
    let mut out = vec![0.0; s.o];
    let mut delta = vec![0.0; s.o];
    let off_b1 = s.h * s.d;
    let off_w2 = off_b1 + s.h;
    let off_b2 = off_w2 + s.o * s.h;
    for (i, xi) in x.iter().enumerate() {
        forward(s, theta, xi, &mut hidden, &mut out);
        match goal {
            Goal::Class(y) => {
                softmax(&mut out);
                loss -= out[y[i]].max(1e-300).ln();
                delta.copy_from_slice(&out);
                delta[y[i]] -= 1.0;
            }
            Goal::Value(y) => {
                let r = out[0] - y[i];
                loss += 0.5 * r * r;
                delta[0] = r;
            }
        }
        for k in 0..s.o {
            let dk = delta[k] / n;
            grad[off_b2 + k] += dk;
            for j in 0..s.h {
                grad[off_w2 + k * s.h + j] += dk * hidden[j];
            }
        }
        for j in 0..s.h {
            if hidden[j] <= 0.0 {
                continue;
            }
            let back: f64 = (0..s.o).map(|k| theta[off_w2 + k * s.h + j] * delta[k]).sum::<f64>() / n;
            grad[off_b1 + j] += back;
            for (g, v) in grad[j * s.d..(j + 1) * s.d].iter_mut().zip(xi) {
                *g += back * v;
            }
        }
    }
    (loss / n, grad)
}

/// Number of packed parameters for `d` inputs, `h` hidden units and `o` outputs.
pub fn parameter_count(d: usize, h: usize, o: usize) -> usize {
    Shape { d, h, o }.len()
}

/// Mean training loss (softmax cross-entropy or half squared error) and its
/// analytic gradient for packed parameters `theta`.
pub fn objective(h: usize, o: usize, theta: &[f64], x: &[Vec<f64>], goal: &Goal<'_>) -> (f64, Vec<f64>) {
    let s = Shape { d: x.first().map_or(0, Vec::len), h, o };
    assert_eq!(theta.len(), s.len(), "parameter count");
    loss_and_grad(&s, theta, x, goal)
}

fn init(s: &Shape, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut theta = vec![0.0; s.len()];
    let a1 = (6.0 / (s.d + s.h) as f64).sqrt();
    let a2 = (6.0 / (s.h + s.o) as f64).sqrt();
    for w in &mut theta[..s.h * s.d] {
        *w = rng.gen_range(-a1..=a1);
    }
    let off_w2 = s.h * s.d + s.h;
    for w in &mut theta[off_w2..off_w2 + s.o * s.h] {
        *w = rng.gen_range(-a2..=a2);
    }
    theta
}

impl Mlp {
    fn shape(&self) -> Shape {
        Shape { d: self.d, h: self.h, o: self.o }
    }

    pub(crate) fn fit(hp: &Hyper, seed: u64, x: &[Vec<f64>], t: Target<'_>) -> Mlp {
        let d = x[0].len();
        let h = hp.usize("hidden");
        let (o, classify) = match t {
            Target::Class { n_classes, .. } => (n_classes, true),
            Target::Value(_) => (1, false),
        };
        let s = Shape { d, h, o };
        let (y_mean, y_std, scaled);
        let goal = match t {
            Target::Class { y, .. } => {
                (y_mean, y_std) = (0.0, 1.0);
                Goal::Class(y)
            }
            Target::Value(y) => {
                let n = y.len() as f64;
                y_mean = y.iter().sum::<f64>() / n;
                let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
                y_std = if sd > 0.0 { sd } else { 1.0 };
                scaled = y.iter().map(|v| (v - y_mean) / y_std).collect::<Vec<_>>();
                Goal::Value(&scaled)
            }
        };
        let mut theta = init(&s, &mut ChaCha8Rng::seed_from_u64(seed));
        let (lr, b1, b2) = (hp.get("learning_rate"), hp.get("beta1"), hp.get("beta2"));
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        for step in 1..=hp.usize("epochs") {
            let (_, g) = loss_and_grad(&s, &theta, x, &goal);
            let c1 = 1.0 - b1.powi(step as i32);
            let c2 = 1.0 - b2.powi(step as i32);
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            }
        }
        Mlp { d, h, o, classify, y_mean, y_std, theta }
    }
}

impl Model for Mlp {
    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.h];
        let mut out = vec![0.0; self.o];
        forward(&self.shape(), &self.theta, x, &mut hidden, &mut out);
        if self.classify {
            softmax(&mut out);
            out
        } else {
            vec![out[0] * self.y_std + self.y_mean]
        }
    }

    fn layout(&self) -> serde_json::Value {
        json!({"d": self.d, "h": self.h, "o": self.o, "classify": self.classify})
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend([self.y_mean, self.y_std]);
        out.extend_from_slice(&self.theta);
    }

    fn read(layout: &serde_json::Value, p: &[f64]) -> Result<Self, String> {
        let get = |k: &str| layout[k].as_u64().map(|v| v as usize).ok_or(format!("missing {k}"));
        let (d, h, o) = (get("d")?, get("h")?, get("o")?);
        let classify = layout["classify"].as_bool().ok_or("missing classify")?;
        if p.len() != 2 + (Shape { d, h, o }).len() {
            return Err("mlp parameter count".into());
        }
        Ok(Mlp { d, h, o, classify, y_mean: p[0], y_std: p[1], theta: p[2..].to_vec() })
    }
}

//! Multinomial logistic regression and one-vs-rest linear SVM.

use serde::{Deserialize, Serialize};

use super::{softmax, StackedFeatures};

/// One weight row and bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Optimizer iterations actually run.
    pub iterations: usize,
}

impl LinearModel {
    pub fn zeros(classes: usize, width: usize) -> Self {
        Self {
            weights: vec![vec![0.0; width]; classes],
            bias: vec![0.0; classes],
            iterations: 0,
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticHyper {
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once an iteration lowers the loss by less than this.
    pub tolerance: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

fn logistic_loss(m: &LinearModel, x: &StackedFeatures, y: &[usize], l2: f64) -> f64 {
    let n = x.n_samples() as f64;
    let data: f64 = x
        .rows()
        .zip(y)
        .map(|(row, &label)| {
            let s = m.scores(row);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - s[label]
        })
        .sum::<f64>()
        / n;
    let penalty: f64 = m.weights.iter().flatten().map(|w| w * w).sum();
    data + 0.5 * l2 * penalty
}

/// Full-batch gradient descent with Armijo backtracking.
pub(super) fn train_logistic(x: &StackedFeatures, y: &[usize], classes: usize, hyper: &LogisticHyper) -> LinearModel {
    let d = x.width();
    let n = x.n_samples() as f64;
    let mut model = LinearModel::zeros(classes, d);
    let mut loss = logistic_loss(&model, x, y, hyper.l2);

    for iter in 0..hyper.max_iterations {
        let mut gw = vec![vec![0.0; d]; classes];
        let mut gb = vec![0.0; classes];
        for (row, &label) in x.rows().zip(y) {
            let p = softmax(&model.scores(row));
            for c in 0..classes {
                let r = p[c] - if c == label { 1.0 } else { 0.0 };
                gb[c] += r / n;
                for (g, v) in gw[c].iter_mut().zip(row) {
                    *g += r * v / n;
                }
            }
        }
        for (g, w) in gw.iter_mut().zip(&model.weights) {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += hyper.l2 * wi;
            }
        }
        let grad_sq: f64 = gw.iter().flatten().chain(&gb).map(|g| g * g).sum();
        model.iterations = iter + 1;
        if grad_sq == 0.0 {
            break;
        }

        let mut step = 1.0;
        let (candidate, new_loss) = loop {
            let mut cand = model.clone();
            for (w, g) in cand.weights.iter_mut().zip(&gw) {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= step * gi;
                }
            }
            for (b, g) in cand.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
            let l = logistic_loss(&cand, x, y, hyper.l2);
            if l <= loss - 0.5 * step * grad_sq || step < 1e-12 {
                break (cand, l);
            }
            step *= 0.5;
        };
        let decrease = loss - new_loss;
        if decrease < 0.0 {
            break;
        }
        model.weights = candidate.weights;
        model.bias = candidate.bias;
        loss = new_loss;
        if decrease < hyper.tolerance {
            break;
        }
    }
    model
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmHyper {
    /// Inverse regularization strength on the summed hinge loss.
    pub c: f64,
    /// Full-batch subgradient steps.
    pub epochs: usize,
}

impl Default for SvmHyper {
    fn default() -> Self {
        Self { c: 1.0, epochs: 1000 }
    }
}

/// One-vs-rest hinge loss, `0.5*|w|^2 + C * sum(hinge)`, minimized by full-batch
/// Pegasos-style subgradient steps. The bias is folded in as a constant feature.
pub(super) fn train_svm(x: &StackedFeatures, y: &[usize], classes: usize, hyper: &SvmHyper) -> LinearModel {
    let d = x.width();
    let n = x.n_samples();
    let lambda = 1.0 / (hyper.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut model = LinearModel::zeros(classes, d);

    for c in 0..classes {
        // last entry is the bias weight
        let mut w = vec![0.0; d + 1];
        for t in 1..=hyper.epochs {
            let eta = 1.0 / (lambda * t as f64);
            let mut g = vec![0.0; d + 1];
            for (row, &label) in x.rows().zip(y) {
                let target = if label == c { 1.0 } else { -1.0 };
                let margin = target * (dot(&w[..d], row) + w[d]);
                if margin < 1.0 {
                    for (gi, v) in g.iter_mut().zip(row) {
                        *gi += target * v;
                    }
                    g[d] += target;
                }
            }
            let shrink = 1.0 - eta * lambda;
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi = shrink * *wi + eta * gi / n as f64;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
        }
        model.bias[c] = w[d];
        w.truncate(d);
        model.weights[c] = w;
    }
    model.iterations = hyper.epochs;
    model
}

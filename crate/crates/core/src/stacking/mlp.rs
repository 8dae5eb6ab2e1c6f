use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, StackedFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub step: f64,
    /// Weights and biases start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 300,
            step: 0.05,
            init_scale: 0.5,
        }
    }
}

/// One ReLU hidden layer, softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl MlpNet {
    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b).max(0.0))
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        self.w2
            .iter()
            .zip(&self.b2)
            .map(|(w, b)| w.iter().zip(h).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.output(&self.hidden(x))
    }
}

/// Per-sample SGD on cross-entropy, visiting samples in a freshly shuffled order each epoch.
pub(super) fn train(x: &StackedFeatures, y: &[usize], classes: usize, hyper: &MlpHyper, seed: u64) -> MlpNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = hyper.init_scale;
    let mut init = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(-s..=s)).collect())
            .collect()
    };
    let d = x.width();
    let w1 = init(hyper.hidden, d);
    let b1 = init(1, hyper.hidden).remove(0);
    let w2 = init(classes, hyper.hidden);
    let b2 = init(1, classes).remove(0);
    let mut net = MlpNet { w1, b1, w2, b2 };

    let mut order: Vec<usize> = (0..x.n_samples()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = x.row(i);
            let h = net.hidden(row);
            let p = softmax(&net.output(&h));
            let delta_out: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(c, &pc)| pc - if c == y[i] { 1.0 } else { 0.0 })
                .collect();
            let delta_hidden: Vec<f64> = (0..hyper.hidden)
                .map(|j| {
                    if h[j] > 0.0 {
                        delta_out.iter().zip(&net.w2).map(|(dc, w)| dc * w[j]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
            for (c, dc) in delta_out.iter().enumerate() {
                for (w, hj) in net.w2[c].iter_mut().zip(&h) {
                    *w -= hyper.step * dc * hj;
                }
                net.b2[c] -= hyper.step * dc;
            }
            for (j, dj) in delta_hidden.iter().enumerate() {
                if *dj == 0.0 {
                    continue;
                }
                for (w, v) in net.w1[j].iter_mut().zip(row) {
                    *w -= hyper.step * dj * v;
                }
                net.b1[j] -= hyper.step * dj;
            }
        }
    }
    net
}

//! Random forest of Gini CART trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StackedFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub n_trees: usize,
    /// Features tried per split; `None` means ceil(sqrt(width)).
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        probs: Vec<f64>,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    /// Each tree is a node arena rooted at index 0.
    pub trees: Vec<Vec<TreeNode>>,
}

impl Forest {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for tree in &self.trees {
            let mut node = 0;
            let probs = loop {
                match &tree[node] {
                    TreeNode::Leaf { probs } => break probs,
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => node = if x[*feature] <= *threshold { *left } else { *right },
                }
            };
            if acc.is_empty() {
                acc = vec![0.0; probs.len()];
            }
            for (a, p) in acc.iter_mut().zip(probs) {
                *a += p;
            }
        }
        let t = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
        acc
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a StackedFeatures,
    y: &'a [usize],
    classes: usize,
    max_features: usize,
    hyper: &'a ForestHyper,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn best_split_on(&self, samples: &[usize], feature: usize) -> Option<BestSplit> {
        let mut sorted: Vec<(f64, usize)> = samples.iter().map(|&i| (self.x.row(i)[feature], self.y[i])).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = sorted.len();
        let mut right = vec![0usize; self.classes];
        for &(_, l) in &sorted {
            right[l] += 1;
        }
        let mut left = vec![0usize; self.classes];
        let mut best: Option<BestSplit> = None;
        for pos in 0..total - 1 {
            let (v, l) = sorted[pos];
            left[l] += 1;
            right[l] -= 1;
            let next = sorted[pos + 1].0;
            if next <= v {
                continue;
            }
            let nl = pos + 1;
            let nr = total - nl;
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&samples);
        let id = self.nodes.len();
        let leaf = |counts: &[usize]| TreeNode::Leaf {
            probs: counts.iter().map(|&c| c as f64 / samples.len() as f64).collect(),
        };
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.hyper.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || samples.len() < self.hyper.min_samples_split.max(2) {
            self.nodes.push(leaf(&counts));
            return id;
        }

        let width = self.x.width();
        let mut features: Vec<usize> = (0..width).collect();
        features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            // keep drawing past max_features only while no valid split exists
            if tried >= self.max_features && best.is_some() {
                break;
            }
            if let Some(s) = self.best_split_on(&samples, f) {
                if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            self.nodes.push(leaf(&counts));
            return id;
        };

        self.nodes.push(TreeNode::Leaf { probs: Vec::new() });
        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.x.row(i)[split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

pub(super) fn train(x: &StackedFeatures, y: &[usize], classes: usize, hyper: &ForestHyper, seed: u64) -> Forest {
    let n = x.n_samples();
    let width = x.width();
    let max_features = hyper
        .max_features
        .unwrap_or_else(|| (width as f64).sqrt().ceil() as usize)
        .clamp(1, width);
    let trees = (0..hyper.n_trees.max(1))
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let samples: Vec<usize> = if hyper.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = Builder {
                x,
                y,
                classes,
                max_features,
                hyper,
                nodes: Vec::new(),
            };
            builder.grow(samples, 0, &mut rng);
            builder.nodes
        })
        .collect();
    Forest { trees }
}

//! Probability averaging ensembles and accuracy-optimal convex weights.
//!
//! Accuracy is piecewise constant in the weights, so the optimizer never uses
//! gradients: for up to three models it enumerates a regular grid over the
//! simplex, beyond that it runs a multi-start pattern search whose iterates are
//! projected back onto the simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedBundle, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};

/// Sum-to-one tolerance for [`EnsembleWeights`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Non-negative weights summing to one, one per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn is_uniform(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }

    /// Euclidean distance to the uniform vector.
    pub fn distance_to_uniform(&self) -> f64 {
        distance_to_uniform(&self.0)
    }
}

impl TryFrom<Vec<f64>> for EnsembleWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EnsembleWeights> for Vec<f64> {
    fn from(w: EnsembleWeights) -> Self {
        w.0
    }
}

fn distance_to_uniform(w: &[f64]) -> f64 {
    let u = 1.0 / w.len() as f64;
    w.iter().map(|x| (x - u) * (x - u)).sum::<f64>().sqrt()
}

/// Which labelled slice the weights are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveSplit {
    /// Held-out slice of the training partition.
    #[default]
    Validation,
    /// Fit directly on the test partition.
    TestPaperFaithful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub grid_step: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub objective_split: ObjectiveSplit,
    /// Share of the training partition held out for fitting in validation mode.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            restarts: 32,
            max_iterations: 500,
            objective_split: ObjectiveSplit::Validation,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "grid_step must lie in (0, 0.5], got {}",
                self.grid_step
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of grid intervals per axis.
    fn divisions(&self) -> usize {
        ((1.0 / self.grid_step).round() as usize).max(2)
    }
}

/// Writes the convex combination of row `i` across models into `out`.
/// Uniform weights take the plain-mean path so both forms agree bit-for-bit.
fn combine_row(models: &[ProbabilityMatrix], i: usize, weights: Option<&[f64]>, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match weights {
        None => {
            for m in models {
                for (o, p) in out.iter_mut().zip(m.row(i)) {
                    *o += p;
                }
            }
            let k = models.len() as f64;
            out.iter_mut().for_each(|v| *v /= k);
        }
        Some(w) => {
            for (m, &wm) in models.iter().zip(w) {
                for (o, p) in out.iter_mut().zip(m.row(i)) {
                    *o += wm * p;
                }
            }
        }
    }
}

/// Lowest index attaining the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

fn check_weights<'a>(bundle: &AlignedBundle, weights: Option<&'a EnsembleWeights>) -> Result<Option<&'a [f64]>> {
    match weights {
        None => Ok(None),
        Some(w) if w.len() != bundle.k() => Err(Error::WeightLengthMismatch {
            expected: bundle.k(),
            got: w.len(),
        }),
        Some(w) if w.is_uniform() => Ok(None),
        Some(w) => Ok(Some(w.as_slice())),
    }
}

/// Weighted (or, with `None`, uniform) average of the bundle's probability rows.
pub fn average_probabilities(
    bundle: &AlignedBundle,
    weights: Option<&EnsembleWeights>,
) -> Result<ProbabilityMatrix> {
    let w = check_weights(bundle, weights)?;
    let c = bundle.n_classes();
    let n = bundle.n_samples();
    let mut data = vec![0.0; n * c];
    for (i, out) in data.chunks_mut(c).enumerate() {
        combine_row(bundle.models(), i, w, out);
    }
    let tag = if w.is_some() { "weighted" } else { "mean" };
    Ok(ProbabilityMatrix::from_trusted(
        format!("{tag}({})", bundle.model_ids().join("+")),
        bundle.sample_ids().to_vec(),
        bundle.class_names().to_vec(),
        data,
    ))
}

pub fn predict_argmax(probs: &ProbabilityMatrix) -> LabelVector {
    let labels = probs.rows().map(argmax).collect();
    LabelVector::new(probs.sample_ids().to_vec(), probs.class_names().to_vec(), labels)
        .expect("argmax labels are in range and ids are unique")
}

/// Number of samples the weighted ensemble classifies correctly.
fn correct_count(bundle: &AlignedBundle, weights: &[f64], scratch: &mut [f64]) -> usize {
    let uniform = weights.windows(2).all(|w| w[0] == w[1]);
    let w = if uniform { None } else { Some(weights) };
    bundle
        .labels()
        .labels()
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            combine_row(bundle.models(), i, w, scratch);
            argmax(scratch) == y
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: EnsembleWeights,
    pub achieved_accuracy: f64,
}

/// On-disk form of a weight fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub model_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub achieved_accuracy: f64,
    pub objective_split: ObjectiveSplit,
}

impl WeightFit {
    pub fn to_file(&self, model_ids: Vec<String>, split: ObjectiveSplit) -> WeightsFile {
        WeightsFile {
            model_ids,
            weights: self.weights.as_slice().to_vec(),
            achieved_accuracy: self.achieved_accuracy,
            objective_split: split,
        }
    }
}

#[derive(Clone, Copy)]
struct Score {
    correct: usize,
    distance: f64,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.correct > other.correct || (self.correct == other.correct && self.distance < other.distance)
    }
}

/// Regular grid on the simplex for k = 2 or 3, preceded by the uniform point.
fn grid_points(k: usize, divisions: usize) -> Vec<Vec<f64>> {
    let m = divisions as f64;
    let mut points = vec![vec![1.0 / k as f64; k]];
    match k {
        2 => {
            for i in 0..=divisions {
                points.push(vec![i as f64 / m, (divisions - i) as f64 / m]);
            }
        }
        3 => {
            for i in 0..=divisions {
                for j in 0..=divisions - i {
                    points.push(vec![i as f64 / m, j as f64 / m, (divisions - i - j) as f64 / m]);
                }
            }
        }
        _ => unreachable!("grid search is only used for k <= 3"),
    }
    points
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

fn random_simplex_point(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = e.iter().sum();
    e.iter().map(|x| x / sum).collect()
}

fn pattern_search(
    bundle: &AlignedBundle,
    start: Vec<f64>,
    max_iterations: usize,
    scratch: &mut [f64],
) -> (Vec<f64>, Score) {
    let k = start.len();
    let score_of = |w: &[f64], scratch: &mut [f64]| Score {
        correct: correct_count(bundle, w, scratch),
        distance: distance_to_uniform(w),
    };
    let mut w = start;
    let mut best = score_of(&w, scratch);
    let mut step: f64 = 0.25;
    let mut iterations = 0;
    while iterations < max_iterations && step > 1e-6 {
        iterations += 1;
        let mut improved = false;
        'directions: for to in 0..k {
            for from in 0..k {
                if to == from || w[from] <= 0.0 {
                    continue;
                }
                let delta = step.min(w[from]);
                let mut cand = w.clone();
                cand[to] += delta;
                cand[from] -= delta;
                let cand = project_to_simplex(&cand);
                let s = score_of(&cand, scratch);
                if s.beats(&best) {
                    w = cand;
                    best = s;
                    improved = true;
                    break 'directions;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (w, best)
}

/// Convex weights maximizing ensemble accuracy on `bundle`.
///
/// Among equally accurate candidates the one closest (L2) to uniform wins.
pub fn optimize_weights(bundle: &AlignedBundle, config: &OptimizerConfig) -> Result<WeightFit> {
    config.validate()?;
    let k = bundle.k();
    if k < 2 {
        return Err(Error::TooFewModels(k));
    }
    let mut scratch = vec![0.0; bundle.n_classes()];

    let best = if k <= 3 {
        let mut best: Option<(Vec<f64>, Score)> = None;
        for w in grid_points(k, config.divisions()) {
            let s = Score {
                correct: correct_count(bundle, &w, &mut scratch),
                distance: distance_to_uniform(&w),
            };
            if best.as_ref().is_none_or(|(_, b)| s.beats(b)) {
                best = Some((w, s));
            }
        }
        best.expect("grid is never empty").0
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut best: Option<(Vec<f64>, Score)> = None;
        for r in 0..config.restarts {
            let start = if r == 0 {
                vec![1.0 / k as f64; k]
            } else {
                random_simplex_point(k, &mut rng)
            };
            let (w, s) = pattern_search(bundle, start, config.max_iterations, &mut scratch);
            if best.as_ref().is_none_or(|(_, b)| s.beats(b)) {
                best = Some((w, s));
            }
        }
        project_to_simplex(&best.expect("restarts >= 1").0)
    };

    let weights = EnsembleWeights::new(best)?;
    let predictions = predict_argmax(&average_probabilities(bundle, Some(&weights))?);
    let correct = predictions
        .labels()
        .iter()
        .zip(bundle.labels().labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(WeightFit {
        weights,
        achieved_accuracy: correct as f64 / bundle.n_samples() as f64,
    })
}

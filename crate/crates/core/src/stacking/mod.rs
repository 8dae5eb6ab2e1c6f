//! Stacked generalization over concatenated base-model probabilities.
//!
//! A [`MetaModel`] is trained on [`StackedFeatures`] (one column block per base
//! model) and predicts class probabilities for new stacked rows. Four learners
//! are built in; all are deterministic for a fixed seed.

mod forest;
mod linear;
mod mlp;

use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedBundle, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::fusion::argmax;
use crate::metrics::{evaluate, MetricsReport};

pub use forest::{Forest, ForestHyper, TreeNode};
pub use linear::{LinearModel, LogisticHyper, SvmHyper};
pub use mlp::{MlpHyper, MlpNet};

/// Bumped whenever the serialized layout of [`MetaModel`] changes.
pub const META_MODEL_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub model_id: String,
    pub class_names: Vec<String>,
}

/// N x (k*C) matrix; column block m holds model m's probabilities verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedFeatures {
    sample_ids: Vec<String>,
    width: usize,
    data: Vec<f64>,
    layout: Vec<FeatureBlock>,
}

impl StackedFeatures {
    /// Arbitrary feature rows, for meta-learners fed by something other than a bundle.
    pub fn from_rows(sample_ids: Vec<String>, rows: Vec<Vec<f64>>, layout: Vec<FeatureBlock>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.len() != sample_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} samples",
                rows.len(),
                sample_ids.len()
            )));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        let block_width: usize = layout.iter().map(|b| b.class_names.len()).sum();
        if !layout.is_empty() && block_width != width {
            return Err(Error::ShapeMismatch(format!(
                "layout covers {block_width} columns, rows have {width}"
            )));
        }
        Ok(Self {
            sample_ids,
            width,
            data: rows.into_iter().flatten().collect(),
            layout,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn layout(&self) -> &[FeatureBlock] {
        &self.layout
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.width.max(1)).take(self.n_samples())
    }

    /// Columns of block `m` as a flat row-major buffer.
    pub fn block(&self, m: usize) -> Vec<f64> {
        let start: usize = self.layout[..m].iter().map(|b| b.class_names.len()).sum();
        let len = self.layout[m].class_names.len();
        self.rows().flat_map(|r| r[start..start + len].iter().copied()).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            width: self.width,
            data: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Concatenates every model's probability row, in bundle model order.
pub fn build_meta_features(bundle: &AlignedBundle) -> StackedFeatures {
    let c = bundle.n_classes();
    let width = bundle.k() * c;
    let mut data = Vec::with_capacity(bundle.n_samples() * width);
    for i in 0..bundle.n_samples() {
        for m in bundle.models() {
            data.extend_from_slice(m.row(i));
        }
    }
    StackedFeatures {
        sample_ids: bundle.sample_ids().to_vec(),
        width,
        data,
        layout: bundle
            .models()
            .iter()
            .map(|m| FeatureBlock {
                model_id: m.model_id().to_string(),
                class_names: m.class_names().to_vec(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    Logistic,
    LinearSvm,
    Mlp,
    RandomForest,
}

impl MetaKind {
    pub const ALL: [MetaKind; 4] = [
        MetaKind::Logistic,
        MetaKind::LinearSvm,
        MetaKind::Mlp,
        MetaKind::RandomForest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetaKind::Logistic => "logistic",
            MetaKind::LinearSvm => "linear_svm",
            MetaKind::Mlp => "mlp",
            MetaKind::RandomForest => "random_forest",
        }
    }
}

impl std::str::FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetaKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown meta-model kind {s:?}")))
    }
}

impl std::fmt::Display for MetaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for every learner; a model records the full set it was trained with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaHyper {
    pub logistic: LogisticHyper,
    pub linear_svm: SvmHyper,
    pub mlp: MlpHyper,
    pub random_forest: ForestHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaParams {
    Logistic(LinearModel),
    LinearSvm(LinearModel),
    Mlp(MlpNet),
    RandomForest(Forest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub format_version: u32,
    pub kind: MetaKind,
    pub hyper: MetaHyper,
    pub train_seed: u64,
    pub input_width: usize,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub params: MetaParams,
}

impl MetaModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MetaModel = serde_json::from_str(text)?;
        if model.format_version != META_MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported meta-model format {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    /// Class probabilities for one stacked row.
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.params {
            MetaParams::Logistic(m) | MetaParams::LinearSvm(m) => softmax(&m.scores(x)),
            MetaParams::Mlp(net) => softmax(&net.logits(x)),
            MetaParams::RandomForest(f) => f.predict_proba(x),
        }
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Fits a meta-learner of the given kind.
pub fn train_meta_model(
    features: &StackedFeatures,
    labels: &LabelVector,
    kind: MetaKind,
    hyper: &MetaHyper,
    seed: u64,
) -> Result<MetaModel> {
    if features.sample_ids() != labels.sample_ids() {
        return Err(Error::SampleSetMismatch(
            "meta-features and labels are not aligned".into(),
        ));
    }
    if features.width() == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let c = labels.n_classes();
    let present = labels.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::DegenerateLabels(format!(
            "only {present} class present in {} training labels",
            labels.len()
        )));
    }
    let y = labels.labels();
    let params = match kind {
        MetaKind::Logistic => MetaParams::Logistic(linear::train_logistic(features, y, c, &hyper.logistic)),
        MetaKind::LinearSvm => MetaParams::LinearSvm(linear::train_svm(features, y, c, &hyper.linear_svm)),
        MetaKind::Mlp => MetaParams::Mlp(mlp::train(features, y, c, &hyper.mlp, seed)),
        MetaKind::RandomForest => {
            MetaParams::RandomForest(forest::train(features, y, c, &hyper.random_forest, seed))
        }
    };
    Ok(MetaModel {
        format_version: META_MODEL_FORMAT,
        kind,
        hyper: hyper.clone(),
        train_seed: seed,
        input_width: features.width(),
        class_count: c,
        class_names: labels.class_names().to_vec(),
        params,
    })
}

pub fn predict_meta(model: &MetaModel, features: &StackedFeatures) -> Result<(LabelVector, ProbabilityMatrix)> {
    if features.width() != model.input_width {
        return Err(Error::DimensionMismatch {
            expected: model.input_width,
            got: features.width(),
        });
    }
    let c = model.class_count;
    let mut data = Vec::with_capacity(features.n_samples() * c);
    let mut labels = Vec::with_capacity(features.n_samples());
    for row in features.rows() {
        let p = model.predict_row(row);
        labels.push(argmax(&p));
        data.extend(p);
    }
    let probs = ProbabilityMatrix::from_trusted(
        format!("stack:{}", model.kind),
        features.sample_ids().to_vec(),
        model.class_names.clone(),
        data,
    );
    let labels = LabelVector::new(features.sample_ids().to_vec(), model.class_names.clone(), labels)?;
    Ok((labels, probs))
}

/// Everything produced by one stacked evaluation.
#[derive(Debug, Clone)]
pub struct StackOutcome {
    pub report: MetricsReport,
    pub model: MetaModel,
    pub predictions: LabelVector,
    pub probabilities: ProbabilityMatrix,
    /// Cross-fitted metrics on the training partition, when folds were requested.
    pub out_of_fold: Option<MetricsReport>,
}

/// Trains on `train`, scores on `test`.
///
/// With `oof_folds >= 2` the training partition is additionally cross-fitted:
/// each fold is predicted by a meta-model trained on the remaining folds and the
/// pooled predictions are reported as `out_of_fold`. The returned model is always
/// the one trained on the full training partition.
pub fn evaluate_stack(
    train: &AlignedBundle,
    test: &AlignedBundle,
    kind: MetaKind,
    hyper: &MetaHyper,
    seed: u64,
    oof_folds: usize,
) -> Result<StackOutcome> {
    if train.k() != test.k() || train.class_names() != test.class_names() {
        return Err(Error::ShapeMismatch(
            "train and test bundles differ in models or classes".into(),
        ));
    }
    let train_x = build_meta_features(train);
    let test_x = build_meta_features(test);
    let model = train_meta_model(&train_x, train.labels(), kind, hyper, seed)?;
    let (predictions, probabilities) = predict_meta(&model, &test_x)?;
    let report = evaluate(&predictions, test.labels())?;

    let out_of_fold = match oof_folds {
        0 | 1 => None,
        f => Some(cross_fit(&train_x, train.labels(), kind, hyper, seed, f)?),
    };
    Ok(StackOutcome {
        report,
        model,
        predictions,
        probabilities,
        out_of_fold,
    })
}

/// Fold assignment: samples of each class dealt round-robin in sample order.
pub fn fold_assignment(labels: &LabelVector, folds: usize) -> Vec<usize> {
    let mut next = vec![0usize; labels.n_classes()];
    labels
        .labels()
        .iter()
        .map(|&l| {
            let f = next[l] % folds;
            next[l] += 1;
            f
        })
        .collect()
}

fn cross_fit(
    x: &StackedFeatures,
    labels: &LabelVector,
    kind: MetaKind,
    hyper: &MetaHyper,
    seed: u64,
    folds: usize,
) -> Result<MetricsReport> {
    if labels.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds need at least {folds} samples, got {}",
            labels.len()
        )));
    }
    let assignment = fold_assignment(labels, folds);
    let mut predicted = vec![0usize; labels.len()];
    for f in 0..folds {
        let (held, kept): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
        if held.is_empty() {
            continue;
        }
        let fold_seed = seed.wrapping_add(f as u64 + 1);
        let model = train_meta_model(&x.select(&kept), &labels.select(&kept), kind, hyper, fold_seed)?;
        let (pred, _) = predict_meta(&model, &x.select(&held))?;
        for (&i, &p) in held.iter().zip(pred.labels()) {
            predicted[i] = p;
        }
    }
    let pred = LabelVector::new(labels.sample_ids().to_vec(), labels.class_names().to_vec(), predicted)?;
    evaluate(&pred, labels)
}
